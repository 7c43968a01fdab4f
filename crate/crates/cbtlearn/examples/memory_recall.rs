//! Wires an echo state reservoir from a connectome, trains per-lag ridge
//! readouts to recall delayed frames, and compares the trained recall
//! against an identity oracle (upper bound) and a shuffled null (floor).
//!
//! The reservoir uses the `leaky` update rule: with the `blend` rule at
//! leakage 1.0 the state depends only on the current frame, so nothing can
//! be recalled at any positive lag.
//!
//! Run with: cargo run --example memory_recall

use cbtlearn::dgn::Cbt;
use cbtlearn::linalg::Matrix;
use cbtlearn::reservoir::{
    build_reservoir_from_connectome, r_squared_per_pair, random_image_sequence, EsnConfig,
    UpdateRule,
};
use cbtlearn::{Result, RngSeed};

fn main() -> Result<()> {
    // Any symmetric nonnegative zero-diagonal matrix can drive the
    // reservoir; here a random one stands in for a learned template.
    let n = 40;
    let rng_seed = RngSeed(41);
    let raw = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            // Deterministic pseudo-weights from the index pair.
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            ((a * 31 + b * 17) % 97) as f64 / 97.0
        }
    });
    let cbt = Cbt::new(raw)?;

    let cfg = EsnConfig {
        spectral_radius: 0.9,
        leakage: 0.8,
        input_scaling: 0.5,
        n_transient: 50,
        tau_max: 5,
        update_rule: UpdateRule::Leaky,
        seed: rng_seed.derive(1),
        ..EsnConfig::default()
    };
    let mut esn = build_reservoir_from_connectome(&cbt, &cfg, 9)?;

    let seq = random_image_sequence(120, 3, 3, rng_seed.derive(2))?;
    let lags = [1usize, 2, 3, 4, 5];
    let recall_loss = esn.train_readouts(&seq, &lags)?;
    println!("readout training loss: {recall_loss:.6}");

    let samples = esn.windowed_samples(&seq, &lags, 5..seq.len())?;
    println!("\n lag   trained     oracle    shuffled");
    let mut trained_total = 0.0;
    for (lag, (preds, truths)) in samples {
        let trained = r_squared_per_pair(&[(preds.clone(), truths.clone())])[0];
        let oracle = r_squared_per_pair(&[(truths.clone(), truths.clone())])[0];

        let mut order: Vec<usize> = (0..truths.rows()).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng_seed.derive(3 + lag as u64).rng());
        let shuffled = Matrix::from_fn(truths.rows(), truths.cols(), |r, c| truths[(order[r], c)]);
        let null = r_squared_per_pair(&[(preds, shuffled)])[0];

        println!("  {lag:>2}   {trained:.4}     {oracle:.4}    {null:.4}");
        trained_total += trained;
    }
    println!(
        "\nvisual memory capacity (trained): {trained_total:.4} of {} possible",
        lags.len()
    );
    Ok(())
}

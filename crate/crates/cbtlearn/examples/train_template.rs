//! Trains a template network on a synthetic population and watches the
//! sampled centeredness loss fall, then median-refines the per-subject
//! templates into one population template.
//!
//! Run with: cargo run --example train_template

use cbtlearn::coopt::refine_cbt;
use cbtlearn::dgn::{train_dgn, TrainConfig};
use cbtlearn::graphdata::{generate_synthetic_population, SynthConfig};
use cbtlearn::{Result, RngSeed};

fn main() -> Result<()> {
    let synth = generate_synthetic_population(
        &SynthConfig {
            n_subjects: 8,
            n_regions: 12,
            n_views: 2,
            classes: 1,
            noise_sigma: 0.05,
            view_scales: vec![1.0, 0.7],
        },
        RngSeed(31),
    )?;

    let cfg = TrainConfig {
        epochs: 40,
        subset_size: 4,
        layer_dims: vec![12, 6],
        seed: RngSeed(32),
        ..TrainConfig::default()
    };
    let result = train_dgn(synth.population.subjects(), cfg)?;

    println!("sampled loss per epoch:");
    for (epoch, loss) in result.loss_trace.iter().enumerate() {
        if epoch % 5 == 0 || epoch + 1 == result.loss_trace.len() {
            println!("  epoch {epoch:>3}: {loss:.6}");
        }
    }
    println!(
        "best epoch: {:?} of {} run",
        result.best_epoch,
        result.loss_trace.len()
    );

    let cbts: Vec<_> = result
        .per_subject_cbts
        .iter()
        .map(|(_, c)| c.clone())
        .collect();
    let refined = refine_cbt(&cbts)?;
    let m = refined.matrix();
    let mean_weight = m.as_slice().iter().sum::<f64>() / (m.rows() * m.cols()) as f64;
    println!(
        "refined template: {}x{}, mean edge weight {:.4}, max {:.4}",
        m.rows(),
        m.cols(),
        mean_weight,
        m.max_abs()
    );
    Ok(())
}

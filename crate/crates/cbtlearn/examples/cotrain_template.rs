//! Co-optimizes a template network with reservoir recall: every epoch
//! updates the template, and on a fixed schedule the refined template is
//! rebuilt into a reservoir whose readout loss joins the selection
//! criterion. Prints the checkpoint table and the selected trade-off.
//!
//! Run with: cargo run --example cotrain_template

use cbtlearn::coopt::{co_train, CooptConfig, SelectionMode};
use cbtlearn::dgn::TrainConfig;
use cbtlearn::graphdata::{generate_synthetic_population, SynthConfig};
use cbtlearn::reservoir::{random_image_sequence, EsnConfig, UpdateRule};
use cbtlearn::{Result, RngSeed};

fn main() -> Result<()> {
    let synth = generate_synthetic_population(
        &SynthConfig {
            n_subjects: 6,
            n_regions: 10,
            n_views: 2,
            classes: 1,
            noise_sigma: 0.05,
            view_scales: vec![1.0, 0.6],
        },
        RngSeed(51),
    )?;
    let images = random_image_sequence(12, 3, 3, RngSeed(52))?;

    let cfg = CooptConfig {
        dgn_cfg: TrainConfig {
            epochs: 30,
            subset_size: 3,
            layer_dims: vec![10, 5],
            seed: RngSeed(53),
            ..TrainConfig::default()
        },
        esn_cfg: EsnConfig {
            n_transient: 20,
            tau_max: 4,
            leakage: 0.8,
            update_rule: UpdateRule::Leaky,
            seed: RngSeed(54),
            ..EsnConfig::default()
        },
        readout_refit_every: 5,
        selection: SelectionMode::CombinedLoss,
        lags: vec![1, 2, 3],
    };
    let bundle = co_train(&synth.population, &images, &cfg)?;

    println!("checkpoints (template loss + recall loss = combined):");
    for rec in &bundle.traces.checkpoints {
        let at = match rec.epoch {
            Some(e) => format!("epoch {e:>3}"),
            None => "init     ".to_string(),
        };
        println!(
            "  {at}: {:.6} + {:.6} = {:.6}",
            rec.gnn_full,
            rec.cog,
            rec.combined()
        );
    }
    let at = match bundle.selected.epoch {
        Some(e) => format!("epoch {e}"),
        None => "initialization".to_string(),
    };
    println!(
        "\nselected {at} with combined loss {:.6}",
        bundle.selected.combined()
    );
    println!(
        "refined template {}x{}, {} per-subject templates, {} trained readouts",
        bundle.refined_cbt.matrix().rows(),
        bundle.refined_cbt.matrix().cols(),
        bundle.per_subject_cbts.len(),
        cfg.lags.len()
    );
    Ok(())
}

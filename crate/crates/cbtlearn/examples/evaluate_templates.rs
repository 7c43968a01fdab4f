//! Full two-fold comparison: co-trains a template per fold, builds the
//! training-free median-of-views baseline on the same folds, and scores
//! both on held-out subjects — centeredness, windowed recall capacity,
//! topology, and paired t-tests.
//!
//! Run with: cargo run --example evaluate_templates

use cbtlearn::coopt::{co_train, median_baseline_bundle, CooptConfig, SelectionMode};
use cbtlearn::dgn::TrainConfig;
use cbtlearn::eval::evaluate_experiment;
use cbtlearn::graphdata::{generate_synthetic_population, kfold_split, Population, SynthConfig};
use cbtlearn::reservoir::{random_image_sequence, EsnConfig, UpdateRule};
use cbtlearn::{Result, RngSeed};

fn main() -> Result<()> {
    let synth = generate_synthetic_population(
        &SynthConfig {
            n_subjects: 8,
            n_regions: 10,
            n_views: 2,
            classes: 2,
            noise_sigma: 0.1,
            view_scales: vec![1.0, 0.6],
        },
        RngSeed(61),
    )?;
    let pop = &synth.population;

    // 12 frames: readouts fit on the first 8, recall scored on the last 4.
    let images = random_image_sequence(12, 3, 3, RngSeed(62))?;
    let train_images = images.window(0..8)?;
    let lags = vec![1usize, 2, 3];

    let splits = kfold_split(&pop.subject_ids(), 2, RngSeed(63))?;
    let mut method = Vec::new();
    let mut baseline = Vec::new();
    let mut test_sets = Vec::new();
    for split in &splits {
        let train = Population::new(
            pop.select(&split.train_ids)?.into_iter().cloned().collect(),
            pop.view_names().to_vec(),
        )?;
        let cfg = CooptConfig {
            dgn_cfg: TrainConfig {
                epochs: 15,
                subset_size: 3,
                layer_dims: vec![10, 5],
                seed: RngSeed(64).derive(split.fold_index as u64),
                ..TrainConfig::default()
            },
            esn_cfg: EsnConfig {
                n_transient: 20,
                tau_max: 3,
                leakage: 0.8,
                update_rule: UpdateRule::Leaky,
                seed: RngSeed(65).derive(split.fold_index as u64),
                ..EsnConfig::default()
            },
            readout_refit_every: 5,
            selection: SelectionMode::CombinedLoss,
            lags: lags.clone(),
        };
        method.push(co_train(&train, &train_images, &cfg)?);
        baseline.push(median_baseline_bundle(&train, &train_images, &cfg)?);
        test_sets.push(pop.select(&split.test_ids)?.into_iter().cloned().collect());
    }

    let report = evaluate_experiment(
        &method.iter().collect::<Vec<_>>(),
        &baseline.iter().collect::<Vec<_>>(),
        &test_sets,
        &images,
        &lags,
        8..12,
    )?;

    for side in [&report.method, &report.baseline] {
        println!("{}:", side.label);
        for f in 0..report.folds {
            println!(
                "  fold {f}: centeredness {:.4}, recall capacity {:.4}",
                side.centeredness[f], side.vis_mc[f]
            );
        }
    }
    for test in &report.tests {
        match (test.t, test.p) {
            (Some(t), Some(p)) => println!("{}: t = {t:.3}, p = {p:.3}", test.metric),
            _ => println!(
                "{}: degenerate pairing (identical per-fold values)",
                test.metric
            ),
        }
    }
    println!(
        "reference topology over {} regions (node strength of the mean test network)",
        report.reference_topology.node_strength.len()
    );
    Ok(())
}

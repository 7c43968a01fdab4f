//! Command-line front end behind the `cbtlearn` binary: argument surfaces,
//! run-directory layouts, and the deterministic seeding scheme shared by
//! every subcommand.
//!
//! Every command resolves a [`RunConfig`] (TOML file plus flag overrides),
//! derives all randomness from the single master seed recorded in it, and
//! stages its output directory atomically — a failed run leaves nothing
//! behind, and a rerun with the same configuration and seed produces
//! byte-identical files.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::coopt::{
    co_train, load_bundle, median_baseline_bundle, refine_cbt, save_bundle, CheckpointRecord,
    CooptConfig, ExperimentBundle, SelectionMode,
};
use crate::dgn::Cbt;
use crate::error::{Error, Result};
use crate::eval::{evaluate_experiment, save_report};
use crate::graphdata::{generate_synthetic_population, kfold_split, FoldSplit, Population};
use crate::io::{self, RunConfig};
use crate::linalg::{Matrix, RngSeed};
use crate::reservoir::{
    build_reservoir_from_connectome, r_squared_per_pair, random_image_sequence, ImageSequence,
    UpdateRule,
};

/// Stream tags hung off the master seed. Each stage draws from its own
/// derived seed, so adding or removing one stage never shifts the random
/// numbers another stage sees.
const TAG_SYNTH: u64 = 1;
const TAG_FOLDS: u64 = 2;
const TAG_DGN: u64 = 3;
const TAG_ESN: u64 = 4;
const TAG_IMAGES: u64 = 5;
const TAG_DEMO_ESN: u64 = 6;
const TAG_SHUFFLE: u64 = 7;

#[derive(Parser)]
#[command(
    name = "cbtlearn",
    version,
    about = "Learns connectional brain templates from multi-view networks and \
             scores them with a connectome-driven echo state reservoir"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population with ground-truth class templates
    Synth(SynthArgs),
    /// Learn a template from a whole population, without recall feedback
    Train(TrainArgs),
    /// Co-optimize templates with recall readouts across k folds
    Cotrain(CotrainArgs),
    /// Median-refine template matrices into a single template
    Refine(RefineArgs),
    /// Compare a co-training run against a baseline on held-out folds
    Eval(EvalArgs),
    /// Score delayed-frame recall of a reservoir built from one template
    RecallDemo(RecallDemoArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML configuration; missing keys fall back to defaults
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed override for [run] seed
    #[arg(long)]
    seed: Option<u64>,
    /// Population directory to create
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Population directory to train on
    #[arg(long, value_name = "DIR")]
    population: PathBuf,
    /// IDX image file for the terminal recall fit; omitted, frames are
    /// synthesized from the master seed
    #[arg(long, value_name = "FILE")]
    images: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Reservoir state update rule override
    #[arg(long, value_name = "RULE", value_parser = UpdateRule::from_str)]
    update_rule: Option<UpdateRule>,
    /// Run directory to create (a loadable bundle plus provenance files)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct CotrainArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    population: PathBuf,
    /// IDX image file; omitted, frames are synthesized from the master seed
    #[arg(long, value_name = "FILE")]
    images: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of cross-validation folds override for [run] folds
    #[arg(long)]
    folds: Option<usize>,
    /// Fold worker threads; affects wall time only, never the outputs
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_name = "RULE", value_parser = UpdateRule::from_str)]
    update_rule: Option<UpdateRule>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct RefineArgs {
    /// Template CSV matrices to refine (at least one)
    #[arg(value_name = "CBT_CSV", required = true)]
    inputs: Vec<PathBuf>,
    /// CSV file to write the refined template to
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Co-training run directory (config.toml, folds.json, fold_*/)
    #[arg(long, value_name = "DIR")]
    method: PathBuf,
    /// Baseline run directory sharing the method's fold splits; omitted, a
    /// training-free median-of-views baseline is built per fold
    #[arg(long, value_name = "DIR")]
    baseline: Option<PathBuf>,
    /// Population directory the folds were split from
    #[arg(long, value_name = "DIR")]
    population: PathBuf,
    /// IDX image file; omitted, the sequence is regenerated from the
    /// method run's recorded seed
    #[arg(long, value_name = "FILE")]
    images: Option<PathBuf>,
    /// Report directory to create
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct RecallDemoArgs {
    /// Template CSV the reservoir is wired from
    #[arg(long, value_name = "FILE")]
    cbt: PathBuf,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    images: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "RULE", value_parser = UpdateRule::from_str)]
    update_rule: Option<UpdateRule>,
    /// Score the true delayed frames against themselves: a harness check
    /// whose capacity equals the lag count exactly
    #[arg(long, conflicts_with = "shuffle")]
    oracle: bool,
    /// Score predictions against time-shuffled truths: a null control
    /// whose capacity sits near zero
    #[arg(long)]
    shuffle: bool,
    /// Report directory to create
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// Parses the process arguments, runs the selected command, and returns
/// the process exit code: 0 on success, 2 for configuration errors, 3 for
/// data errors, 4 for numerical failures.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Cotrain(a) => cmd_cotrain(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Eval(a) => cmd_eval(a),
        Command::RecallDemo(a) => cmd_recall_demo(a),
    }
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let (cfg, warnings) = io::load_config(p)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            Ok(cfg)
        }
        None => Ok(RunConfig::default()),
    }
}

fn load_population_reporting(dir: &Path) -> Result<Population> {
    let (pop, notes) = io::load_population(dir)?;
    for n in notes {
        eprintln!("note: {n}");
    }
    Ok(pop)
}

/// Loads exactly the protocol's frame count from an IDX file (mean-pooling
/// larger frames down to the configured shape) or synthesizes the frames
/// from the master seed, so any later command can regenerate the identical
/// sequence from the stored configuration alone.
fn prepare_images(path: Option<&Path>, cfg: &RunConfig, master: RngSeed) -> Result<ImageSequence> {
    let total = cfg.total_frames();
    let (rows, cols) = (cfg.recall.image_rows, cfg.recall.image_cols);
    match path {
        Some(p) => {
            let seq = io::read_idx_images(p, total)?;
            if seq.len() < total {
                return Err(Error::Protocol(format!(
                    "{} supplies {} frames, the protocol needs {total}",
                    p.display(),
                    seq.len()
                )));
            }
            if seq.frame_rows() == rows && seq.frame_cols() == cols {
                return Ok(seq);
            }
            eprintln!(
                "note: mean-pooling {}x{} frames to {rows}x{cols}",
                seq.frame_rows(),
                seq.frame_cols()
            );
            let frames = seq
                .frames()
                .iter()
                .map(|f| io::downsample_mean(f, rows, cols))
                .collect::<Result<Vec<Matrix>>>()?;
            ImageSequence::new(frames)
        }
        None => random_image_sequence(total, rows, cols, master.derive(TAG_IMAGES)),
    }
}

/// Per-fold co-optimization settings. Template and reservoir seeds come
/// from separate streams further split by fold index, so folds are
/// independent and reorderable.
fn fold_coopt_config(cfg: &RunConfig, master: RngSeed, fold: usize) -> Result<CooptConfig> {
    Ok(CooptConfig {
        dgn_cfg: cfg.dgn_train_config(master.derive(TAG_DGN).derive(fold as u64)),
        esn_cfg: cfg.esn_config(master.derive(TAG_ESN).derive(fold as u64)),
        readout_refit_every: cfg.coopt.readout_refit_every,
        selection: cfg.coopt.selection,
        lags: cfg.lags(cfg.recall.train_frames)?,
    })
}

fn subset_population(pop: &Population, ids: &[String]) -> Result<Population> {
    let subjects = pop.select(ids)?.into_iter().cloned().collect();
    Population::new(subjects, pop.view_names().to_vec())
}

pub const SUMMARY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub epochs_run: usize,
    pub selected: CheckpointRecord,
}

/// Machine-readable run summary; contains no wall-clock fields so reruns
/// stay byte-identical.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub command: String,
    pub seed: u64,
    pub folds: Vec<FoldSummary>,
}

fn describe(rec: &CheckpointRecord) -> String {
    let at = match rec.epoch {
        Some(e) => format!("epoch {e}"),
        None => "initialization".to_string(),
    };
    format!(
        "{at}: template loss {:.6}, recall loss {:.6}",
        rec.gnn_full, rec.cog
    )
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = load_run_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.run.seed = seed;
    }
    let master = RngSeed(cfg.run.seed);
    let synth = generate_synthetic_population(&cfg.synth_config(), master.derive(TAG_SYNTH))?;
    io::write_dir_atomic(&a.out, |dir| {
        io::save_population(dir, &synth.population)?;
        io::save_class_templates(dir, &synth.class_templates)?;
        io::save_config(&dir.join("config.toml"), &cfg)
    })?;
    let pop = &synth.population;
    println!(
        "wrote {} subjects x {} views of {} regions ({} classes) -> {}",
        pop.len(),
        pop.n_views(),
        pop.n_regions(),
        synth.class_templates.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_run_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.run.seed = seed;
    }
    if let Some(rule) = a.update_rule {
        cfg.esn.update_rule = rule;
    }
    let master = RngSeed(cfg.run.seed);
    let pop = load_population_reporting(&a.population)?;
    let images = prepare_images(a.images.as_deref(), &cfg, master)?;
    let train_images = images.window(0..cfg.recall.train_frames)?;

    // Plain template learning: selection ignores recall, and the only
    // readout fits are the bracketing ones, so the loss trace matches a
    // run with no reservoir in the loop at all.
    let mut ccfg = fold_coopt_config(&cfg, master, 0)?;
    ccfg.readout_refit_every = ccfg.dgn_cfg.epochs.saturating_add(1).max(1);
    ccfg.selection = SelectionMode::GnnLoss;
    let bundle = co_train(&pop, &train_images, &ccfg)?;

    let summary = RunSummary {
        format_version: SUMMARY_FORMAT_VERSION,
        command: "train".to_string(),
        seed: cfg.run.seed,
        folds: vec![FoldSummary {
            fold: 0,
            n_train: pop.len(),
            n_test: 0,
            epochs_run: bundle.traces.gnn_epoch.len(),
            selected: bundle.selected.clone(),
        }],
    };
    io::write_dir_atomic(&a.out, |dir| {
        save_bundle(dir, &bundle)?;
        io::save_config(&dir.join("config.toml"), &cfg)?;
        io::save_json(&dir.join("summary.json"), &summary)
    })?;
    println!(
        "trained {} epochs on {} subjects, selected {} -> {}",
        bundle.traces.gnn_epoch.len(),
        pop.len(),
        describe(&bundle.selected),
        a.out.display()
    );
    Ok(())
}

/// Runs every fold job, optionally on `workers` threads. Fold results land
/// in slots indexed by fold, so the merged output — including which error
/// wins when several folds fail — never depends on thread scheduling.
fn run_folds<'a>(
    jobs: &'a [(usize, Population)],
    train_images: &'a ImageSequence,
    cfg: &'a RunConfig,
    master: RngSeed,
    workers: usize,
) -> Result<Vec<ExperimentBundle>> {
    let run_one = |fold: usize, train: &Population| -> Result<ExperimentBundle> {
        let ccfg = fold_coopt_config(cfg, master, fold)?;
        co_train(train, train_images, &ccfg)
    };
    if workers <= 1 {
        return jobs
            .iter()
            .map(|(fold, train)| run_one(*fold, train))
            .collect();
    }

    let threads = workers.min(jobs.len()).max(1);
    let slots: Vec<Mutex<Option<Result<ExperimentBundle>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for w in 0..threads {
            let slots = &slots;
            let run_one = &run_one;
            scope.spawn(move || {
                let mut i = w;
                while i < jobs.len() {
                    let (fold, train) = &jobs[i];
                    *slots[i].lock().unwrap() = Some(run_one(*fold, train));
                    i += threads;
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .unwrap()
                .expect("every fold slot is filled")
        })
        .collect()
}

fn cmd_cotrain(a: CotrainArgs) -> Result<()> {
    let mut cfg = load_run_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.run.seed = seed;
    }
    if let Some(folds) = a.folds {
        cfg.run.folds = folds;
    }
    if let Some(rule) = a.update_rule {
        cfg.esn.update_rule = rule;
    }
    // The worker override changes execution only, so it is deliberately
    // not recorded in the configuration snapshot.
    let workers = a.workers.unwrap_or(cfg.run.workers);

    let master = RngSeed(cfg.run.seed);
    let pop = load_population_reporting(&a.population)?;
    let images = prepare_images(a.images.as_deref(), &cfg, master)?;
    let train_images = images.window(0..cfg.recall.train_frames)?;
    let splits = kfold_split(&pop.subject_ids(), cfg.run.folds, master.derive(TAG_FOLDS))?;

    let mut jobs = Vec::with_capacity(splits.len());
    for split in &splits {
        jobs.push((split.fold_index, subset_population(&pop, &split.train_ids)?));
    }
    let bundles = run_folds(&jobs, &train_images, &cfg, master, workers)?;

    let summary = RunSummary {
        format_version: SUMMARY_FORMAT_VERSION,
        command: "cotrain".to_string(),
        seed: cfg.run.seed,
        folds: splits
            .iter()
            .zip(&bundles)
            .map(|(split, bundle)| FoldSummary {
                fold: split.fold_index,
                n_train: split.train_ids.len(),
                n_test: split.test_ids.len(),
                epochs_run: bundle.traces.gnn_epoch.len(),
                selected: bundle.selected.clone(),
            })
            .collect(),
    };
    io::write_dir_atomic(&a.out, |dir| {
        io::save_config(&dir.join("config.toml"), &cfg)?;
        io::save_json(&dir.join("folds.json"), &splits)?;
        io::save_json(&dir.join("summary.json"), &summary)?;
        for (split, bundle) in splits.iter().zip(&bundles) {
            let fold_dir = dir.join(format!("fold_{}", split.fold_index));
            std::fs::create_dir(&fold_dir).map_err(|e| Error::io(&fold_dir, e))?;
            save_bundle(&fold_dir, bundle)?;
        }
        Ok(())
    })?;
    for f in &summary.folds {
        println!(
            "fold {}: {} epochs on {} train / {} test subjects, selected {}",
            f.fold,
            f.epochs_run,
            f.n_train,
            f.n_test,
            describe(&f.selected)
        );
    }
    println!(
        "wrote {} fold bundles -> {}",
        bundles.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_refine(a: RefineArgs) -> Result<()> {
    let mut cbts = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        cbts.push(Cbt::new(io::load_matrix_csv(path)?)?);
    }
    let refined = refine_cbt(&cbts)?;
    io::write_file_atomic(&a.out, io::matrix_csv_string(refined.matrix()).as_bytes())?;
    println!(
        "refined {} templates ({}x{}) -> {}",
        cbts.len(),
        refined.matrix().rows(),
        refined.matrix().cols(),
        a.out.display()
    );
    Ok(())
}

/// Loads a co-training run directory: its configuration snapshot, fold
/// splits, and one bundle per fold.
fn load_run(dir: &Path) -> Result<(RunConfig, Vec<FoldSplit>, Vec<ExperimentBundle>)> {
    let folds_path = dir.join("folds.json");
    if !folds_path.is_file() {
        return Err(Error::Protocol(format!(
            "{} is not a co-training run directory (no folds.json)",
            dir.display()
        )));
    }
    let (cfg, warnings) = io::load_config(&dir.join("config.toml"))?;
    for w in warnings {
        eprintln!("warning: {}: {w}", dir.display());
    }
    let splits: Vec<FoldSplit> = io::load_json(&folds_path)?;
    if splits.is_empty() {
        return Err(Error::Protocol(format!(
            "{}: no folds recorded",
            dir.display()
        )));
    }
    let mut bundles = Vec::with_capacity(splits.len());
    for split in &splits {
        bundles.push(load_bundle(
            &dir.join(format!("fold_{}", split.fold_index)),
        )?);
    }
    Ok((cfg, splits, bundles))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (cfg, splits, method) = load_run(&a.method)?;
    let master = RngSeed(cfg.run.seed);
    let pop = load_population_reporting(&a.population)?;
    let images = prepare_images(a.images.as_deref(), &cfg, master)?;
    let train_images = images.window(0..cfg.recall.train_frames)?;
    let lags = cfg.lags(cfg.recall.train_frames)?;
    let window = cfg.recall.train_frames..images.len();

    let mut test_sets = Vec::with_capacity(splits.len());
    for split in &splits {
        let test: Vec<_> = pop.select(&split.test_ids)?.into_iter().cloned().collect();
        test_sets.push(test);
    }

    let baseline: Vec<ExperimentBundle> = match &a.baseline {
        Some(dir) => {
            let (_, baseline_splits, bundles) = load_run(dir)?;
            if baseline_splits != splits {
                return Err(Error::Protocol(format!(
                    "baseline {} and method {} disagree on fold splits",
                    dir.display(),
                    a.method.display()
                )));
            }
            bundles
        }
        None => {
            let mut built = Vec::with_capacity(splits.len());
            for split in &splits {
                let train = subset_population(&pop, &split.train_ids)?;
                let ccfg = fold_coopt_config(&cfg, master, split.fold_index)?;
                built.push(median_baseline_bundle(&train, &train_images, &ccfg)?);
            }
            built
        }
    };

    let report = evaluate_experiment(
        &method.iter().collect::<Vec<_>>(),
        &baseline.iter().collect::<Vec<_>>(),
        &test_sets,
        &images,
        &lags,
        window,
    )?;
    io::write_dir_atomic(&a.out, |dir| save_report(dir, &report))?;

    for test in &report.tests {
        let (m, b) = match test.metric.as_str() {
            "centeredness" => (
                mean(&report.method.centeredness),
                mean(&report.baseline.centeredness),
            ),
            _ => (mean(&report.method.vis_mc), mean(&report.baseline.vis_mc)),
        };
        match (test.t, test.p) {
            (Some(t), Some(p)) => println!(
                "{}: method {m:.6} vs baseline {b:.6} (t = {t:.4}, p = {p:.4})",
                test.metric
            ),
            _ => println!(
                "{}: method {m:.6} vs baseline {b:.6} (degenerate pairing)",
                test.metric
            ),
        }
    }
    println!("wrote report -> {}", a.out.display());
    Ok(())
}

pub const RECALL_FORMAT_VERSION: u32 = 1;

/// Per-lag recall scores of one reservoir on one image sequence.
#[derive(Debug, Serialize, Deserialize)]
pub struct RecallReport {
    pub format_version: u32,
    /// "reservoir", "identity-oracle", or "shuffled-null".
    pub mode: String,
    pub seed: u64,
    pub train_frames: usize,
    pub test_frames: usize,
    pub lags: Vec<usize>,
    pub r_squared: Vec<f64>,
    pub vis_mc: f64,
}

fn recall_csv(report: &RecallReport) -> String {
    let mut out = String::from("lag,r_squared\n");
    for (lag, r2) in report.lags.iter().zip(&report.r_squared) {
        out.push_str(&format!("{lag},{r2:.16e}\n"));
    }
    out
}

fn cmd_recall_demo(a: RecallDemoArgs) -> Result<()> {
    let mut cfg = load_run_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.run.seed = seed;
    }
    if let Some(rule) = a.update_rule {
        cfg.esn.update_rule = rule;
    }
    let master = RngSeed(cfg.run.seed);
    let cbt = Cbt::new(io::load_matrix_csv(&a.cbt)?)?;
    let images = prepare_images(a.images.as_deref(), &cfg, master)?;
    let train_frames = cfg.recall.train_frames;
    let train_images = images.window(0..train_frames)?;
    let lags = cfg.lags(train_frames)?;

    let mut esn = build_reservoir_from_connectome(
        &cbt,
        &cfg.esn_config(master.derive(TAG_DEMO_ESN)),
        images.n_pixels(),
    )?;
    esn.train_readouts(&train_images, &lags)?;
    let samples = esn.windowed_samples(&images, &lags, train_frames..images.len())?;

    let mode = if a.oracle {
        "identity-oracle"
    } else if a.shuffle {
        "shuffled-null"
    } else {
        "reservoir"
    };
    let mut lag_order = Vec::with_capacity(samples.len());
    let mut pairs = Vec::with_capacity(samples.len());
    for (lag, (preds, truths)) in samples {
        lag_order.push(lag);
        pairs.push(match mode {
            "identity-oracle" => (truths.clone(), truths),
            "shuffled-null" => {
                let mut order: Vec<usize> = (0..truths.rows()).collect();
                let mut rng = master.derive(TAG_SHUFFLE).derive(lag as u64).rng();
                rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
                let shuffled =
                    Matrix::from_fn(truths.rows(), truths.cols(), |r, c| truths[(order[r], c)]);
                (preds, shuffled)
            }
            _ => (preds, truths),
        });
    }
    let r_squared = r_squared_per_pair(&pairs);
    let vis_mc = r_squared.iter().sum();

    let report = RecallReport {
        format_version: RECALL_FORMAT_VERSION,
        mode: mode.to_string(),
        seed: cfg.run.seed,
        train_frames,
        test_frames: images.len() - train_frames,
        lags: lag_order,
        r_squared,
        vis_mc,
    };
    io::write_dir_atomic(&a.out, |dir| {
        io::save_json(&dir.join("recall.json"), &report)?;
        std::fs::write(dir.join("recall.csv"), recall_csv(&report))
            .map_err(|e| Error::io(dir.join("recall.csv"), e))?;
        io::save_config(&dir.join("config.toml"), &cfg)
    })?;

    for (lag, r2) in report.lags.iter().zip(&report.r_squared) {
        println!("lag {lag:>3}: r^2 = {r2:.6}");
    }
    println!(
        "Vis-MC = {:.6} over {} lags ({} mode) -> {}",
        report.vis_mc,
        report.lags.len(),
        report.mode,
        a.out.display()
    );
    Ok(())
}

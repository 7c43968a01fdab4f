//! Alternating co-optimization of the template network and the reservoir
//! readouts, plus the final median refinement across subjects.
//!
//! Each epoch runs one stochastic template-network update pass; on a fixed
//! schedule the current per-subject templates are median-refined into a
//! group template, a reservoir is built from it, and recall readouts are
//! refit, recording the recall loss. The recall branch never feeds
//! gradients back into the network — it influences the result only through
//! which checkpoint is kept.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dgn::{Cbt, DgnCheckpoint, DgnTrainer, TrainConfig};
use crate::error::{Error, Result};
use crate::graphdata::Population;
use crate::io;
use crate::linalg::{elementwise_median, Matrix, RngSeed};
use crate::reservoir::{build_reservoir_from_connectome, EsnCheckpoint, EsnConfig, ImageSequence};

/// Which loss picks the checkpoint a co-optimization run returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Template centeredness plus recall loss.
    CombinedLoss,
    /// Template centeredness alone; the image branch cannot affect the
    /// selected parameters.
    GnnLoss,
}

impl SelectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::CombinedLoss => "combined_loss",
            SelectionMode::GnnLoss => "gnn_loss",
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<SelectionMode> {
        match s {
            "combined_loss" => Ok(SelectionMode::CombinedLoss),
            "gnn_loss" => Ok(SelectionMode::GnnLoss),
            other => Err(Error::Config(format!(
                "unknown checkpoint selection {other:?}; expected \"combined_loss\" or \"gnn_loss\""
            ))),
        }
    }
}

/// Everything one co-optimization run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooptConfig {
    pub dgn_cfg: TrainConfig,
    pub esn_cfg: EsnConfig,
    /// Epochs between reservoir rebuilds and readout refits; must be ≥ 1.
    pub readout_refit_every: usize,
    pub selection: SelectionMode,
    /// Recall lags the readouts are trained and scored on.
    pub lags: Vec<usize>,
}

impl CooptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.readout_refit_every == 0 {
            return Err(Error::Config(
                "readout_refit_every must be at least 1".into(),
            ));
        }
        self.esn_cfg.validate()
    }
}

/// Losses measured at one checkpoint: the sampling-free centeredness of the
/// per-subject templates over the whole training set, and the recall loss
/// of readouts refit from the refined template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    /// Index of the last completed epoch; `None` for the pre-training
    /// state.
    pub epoch: Option<usize>,
    pub gnn_full: f64,
    pub cog: f64,
}

impl CheckpointRecord {
    pub fn combined(&self) -> f64 {
        self.gnn_full + self.cog
    }
}

/// Loss history of a run: the per-epoch sampled training loss (identical to
/// a plain training run with the same seed) and the checkpoint records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTraces {
    pub gnn_epoch: Vec<f64>,
    pub checkpoints: Vec<CheckpointRecord>,
}

/// Artifacts of one co-optimization run.
#[derive(Debug, PartialEq)]
pub struct ExperimentBundle {
    pub refined_cbt: Cbt,
    pub per_subject_cbts: Vec<(String, Cbt)>,
    pub dgn_checkpoint: DgnCheckpoint,
    pub esn_checkpoint: EsnCheckpoint,
    pub traces: LossTraces,
    /// The checkpoint whose parameters the bundle carries.
    pub selected: CheckpointRecord,
    pub config: CooptConfig,
    /// Seed the optimization ran under (the template trainer's seed).
    pub seed: RngSeed,
}

fn checkpoint_score(rec: &CheckpointRecord, mode: SelectionMode) -> f64 {
    match mode {
        SelectionMode::CombinedLoss => rec.combined(),
        SelectionMode::GnnLoss => rec.gnn_full,
    }
}

/// Median-refines per-subject templates, builds a reservoir from the
/// result, refits readouts, and reports both losses.
fn eval_checkpoint(
    trainer: &DgnTrainer,
    images: &ImageSequence,
    cfg: &CooptConfig,
    epoch: Option<usize>,
) -> Result<CheckpointRecord> {
    let gnn_full = trainer.full_training_loss()?;
    let cbts: Vec<Cbt> = trainer
        .subject_cbts()?
        .into_iter()
        .map(|(_, c)| c)
        .collect();
    let refined = refine_cbt(&cbts)?;
    let mut esn = build_reservoir_from_connectome(&refined, &cfg.esn_cfg, images.n_pixels())?;
    let cog = esn.train_readouts(images, &cfg.lags)?;
    Ok(CheckpointRecord {
        epoch,
        gnn_full,
        cog,
    })
}

/// Runs the alternating loop: template updates every epoch, reservoir
/// refits on the configured schedule (plus one before training and one at
/// the end), returning the artifacts of the checkpoint with the lowest
/// selection loss. Epoch scheduling, early stopping, and the sampled loss
/// trace are bit-identical to `train_dgn` with the same settings.
pub fn co_train(
    pop_train: &Population,
    images: &ImageSequence,
    cfg: &CooptConfig,
) -> Result<ExperimentBundle> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::EmptySequence);
    }
    match cfg.lags.iter().max() {
        None => return Err(Error::Lag("no recall lags configured".into())),
        Some(&m) if m >= images.len() => {
            return Err(Error::Lag(format!(
                "max lag {m} needs more than {} frames",
                images.len()
            )));
        }
        _ => {}
    }

    let patience = cfg.dgn_cfg.early_stop_patience.max(1);
    let epochs = cfg.dgn_cfg.epochs;
    let mut trainer = DgnTrainer::new(pop_train.subjects(), cfg.dgn_cfg.clone())?;

    struct BestCandidate {
        score: f64,
        record: CheckpointRecord,
        params: Vec<f64>,
    }
    impl BestCandidate {
        /// Strict improvement keeps the earliest checkpoint on ties.
        fn offer(&mut self, mode: SelectionMode, rec: &CheckpointRecord, trainer: &DgnTrainer) {
            let score = checkpoint_score(rec, mode);
            if score < self.score {
                self.score = score;
                self.record = rec.clone();
                self.params = trainer.snapshot();
            }
        }
    }

    let mut gnn_trace = Vec::with_capacity(epochs);
    let init = eval_checkpoint(&trainer, images, cfg, None)?;
    let mut best = BestCandidate {
        score: checkpoint_score(&init, cfg.selection),
        record: init.clone(),
        params: trainer.snapshot(),
    };
    let mut checkpoints = vec![init];

    let mut best_sampled: Option<(usize, f64)> = None;
    let mut last_epoch = None;
    let mut last_was_checkpoint = false;
    for epoch in 0..epochs {
        let loss = trainer.run_epoch(epoch)?;
        gnn_trace.push(loss);
        last_epoch = Some(epoch);
        last_was_checkpoint = (epoch + 1) % cfg.readout_refit_every == 0;
        if last_was_checkpoint {
            let rec = eval_checkpoint(&trainer, images, cfg, Some(epoch))?;
            best.offer(cfg.selection, &rec, &trainer);
            checkpoints.push(rec);
        }
        let improved = best_sampled.map_or(true, |(_, b)| loss < b);
        if improved {
            best_sampled = Some((epoch, loss));
        } else if let Some((be, _)) = best_sampled {
            if epoch - be >= patience {
                break;
            }
        }
    }
    if let Some(epoch) = last_epoch {
        if !last_was_checkpoint {
            let rec = eval_checkpoint(&trainer, images, cfg, Some(epoch))?;
            best.offer(cfg.selection, &rec, &trainer);
            checkpoints.push(rec);
        }
    }

    let BestCandidate {
        record: best_record,
        params: best_params,
        ..
    } = best;
    trainer.restore(&best_params)?;
    let per_subject_cbts = trainer.subject_cbts()?;
    let cbts: Vec<Cbt> = per_subject_cbts.iter().map(|(_, c)| c.clone()).collect();
    let refined_cbt = refine_cbt(&cbts)?;
    let mut esn = build_reservoir_from_connectome(&refined_cbt, &cfg.esn_cfg, images.n_pixels())?;
    esn.train_readouts(images, &cfg.lags)?;

    Ok(ExperimentBundle {
        refined_cbt,
        per_subject_cbts,
        dgn_checkpoint: DgnCheckpoint::from_network(trainer.network(), &cfg.dgn_cfg),
        esn_checkpoint: EsnCheckpoint::from_network(&esn),
        traces: LossTraces {
            gnn_epoch: gnn_trace,
            checkpoints,
        },
        selected: best_record,
        seed: cfg.dgn_cfg.seed,
        config: cfg.clone(),
    })
}

/// Elementwise median across a stack of per-subject templates. Symmetry,
/// nonnegativity, and the zero diagonal survive the median (mirrored
/// entries see identical value multisets); triangle inequalities need not,
/// so only the template invariants are revalidated.
pub fn refine_cbt(cbts: &[Cbt]) -> Result<Cbt> {
    if cbts.is_empty() {
        return Err(Error::Dimension(
            "cannot refine an empty template stack".into(),
        ));
    }
    let stack: Vec<Matrix> = cbts.iter().map(|c| c.matrix().clone()).collect();
    Cbt::new(elementwise_median(&stack)?)
}

/// Training-free reference bundle: the template is the elementwise median
/// of every view of every training subject, and each per-subject entry is
/// the median of that subject's own views. The losses record the
/// template's training-set centeredness (no per-view scaling) and the
/// recall loss of readouts fit from it, so the bundle slots into the same
/// paired evaluation as a co-trained one. The stored network checkpoint is
/// a freshly initialized, untrained network under the configured seed.
pub fn median_baseline_bundle(
    pop_train: &Population,
    images: &ImageSequence,
    cfg: &CooptConfig,
) -> Result<ExperimentBundle> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::EmptySequence);
    }

    let mut all_views: Vec<Matrix> = Vec::new();
    let mut per_subject_cbts = Vec::with_capacity(pop_train.len());
    for subject in pop_train.subjects() {
        all_views.extend(subject.views().iter().cloned());
        let own = Cbt::new(elementwise_median(subject.views())?)?;
        per_subject_cbts.push((subject.subject_id().to_string(), own));
    }
    if all_views.is_empty() {
        return Err(Error::Dimension(
            "baseline needs at least one training view".into(),
        ));
    }
    let refined_cbt = Cbt::new(elementwise_median(&all_views)?)?;

    let mut esn = build_reservoir_from_connectome(&refined_cbt, &cfg.esn_cfg, images.n_pixels())?;
    let cog = esn.train_readouts(images, &cfg.lags)?;
    let gnn_full = crate::eval::centeredness(&refined_cbt, pop_train.subjects())?;
    let record = CheckpointRecord {
        epoch: None,
        gnn_full,
        cog,
    };

    let trainer = DgnTrainer::new(pop_train.subjects(), cfg.dgn_cfg.clone())?;
    Ok(ExperimentBundle {
        refined_cbt,
        per_subject_cbts,
        dgn_checkpoint: DgnCheckpoint::from_network(trainer.network(), &cfg.dgn_cfg),
        esn_checkpoint: EsnCheckpoint::from_network(&esn),
        traces: LossTraces {
            gnn_epoch: Vec::new(),
            checkpoints: vec![record.clone()],
        },
        selected: record,
        seed: cfg.dgn_cfg.seed,
        config: cfg.clone(),
    })
}

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    format_version: u32,
    seed: RngSeed,
    selected: CheckpointRecord,
    subject_ids: Vec<String>,
    config: CooptConfig,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn traces_to_csv(traces: &LossTraces) -> String {
    let mut text = String::from("kind,epoch,l_gnn,l_cog,l_combined\n");
    for (e, loss) in traces.gnn_epoch.iter().enumerate() {
        text.push_str(&format!("epoch,{e},{},,\n", fmt_f64(*loss)));
    }
    for rec in &traces.checkpoints {
        let epoch = rec.epoch.map_or(String::new(), |e| e.to_string());
        text.push_str(&format!(
            "checkpoint,{epoch},{},{},{}\n",
            fmt_f64(rec.gnn_full),
            fmt_f64(rec.cog),
            fmt_f64(rec.combined())
        ));
    }
    text
}

fn parse_f64_field(path: &Path, line_no: usize, field: &str) -> Result<f64> {
    field.trim().parse().map_err(|_| {
        Error::Format(format!(
            "{}: line {line_no}: {field:?} is not a number",
            path.display()
        ))
    })
}

fn traces_from_csv(path: &Path, text: &str) -> Result<LossTraces> {
    let mut gnn_epoch = Vec::new();
    let mut checkpoints = Vec::new();
    for (no, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!(
                "{}: line {no}: expected 5 fields, got {}",
                path.display(),
                fields.len()
            )));
        }
        match fields[0] {
            "epoch" => gnn_epoch.push(parse_f64_field(path, no, fields[2])?),
            "checkpoint" => {
                let epoch = if fields[1].is_empty() {
                    None
                } else {
                    Some(fields[1].parse().map_err(|_| {
                        Error::Format(format!(
                            "{}: line {no}: bad epoch {:?}",
                            path.display(),
                            fields[1]
                        ))
                    })?)
                };
                checkpoints.push(CheckpointRecord {
                    epoch,
                    gnn_full: parse_f64_field(path, no, fields[2])?,
                    cog: parse_f64_field(path, no, fields[3])?,
                });
            }
            other => {
                return Err(Error::Format(format!(
                    "{}: line {no}: unknown row kind {other:?}",
                    path.display()
                )));
            }
        }
    }
    Ok(LossTraces {
        gnn_epoch,
        checkpoints,
    })
}

/// Writes a bundle into `dir` (which must exist): the refined template as
/// `cbt.csv`, network and reservoir checkpoints as `dgn.json` / `esn.json`,
/// the loss history as `traces.csv`, run metadata as `config.json`, and
/// per-subject templates under `subjects/`.
pub fn save_bundle(dir: &Path, bundle: &ExperimentBundle) -> Result<()> {
    io::save_matrix_csv(&dir.join("cbt.csv"), bundle.refined_cbt.matrix())?;
    io::save_json(&dir.join("dgn.json"), &bundle.dgn_checkpoint)?;
    io::save_json(&dir.join("esn.json"), &bundle.esn_checkpoint)?;
    fs::write(dir.join("traces.csv"), traces_to_csv(&bundle.traces))
        .map_err(|e| Error::io(dir.join("traces.csv"), e))?;
    io::save_json(
        &dir.join("config.json"),
        &BundleManifest {
            format_version: BUNDLE_FORMAT_VERSION,
            seed: bundle.seed,
            selected: bundle.selected.clone(),
            subject_ids: bundle
                .per_subject_cbts
                .iter()
                .map(|(id, _)| id.clone())
                .collect(),
            config: bundle.config.clone(),
        },
    )?;
    let subjects = dir.join("subjects");
    fs::create_dir_all(&subjects).map_err(|e| Error::io(&subjects, e))?;
    for (id, cbt) in &bundle.per_subject_cbts {
        io::save_matrix_csv(&subjects.join(format!("{id}.csv")), cbt.matrix())?;
    }
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<ExperimentBundle> {
    let manifest: BundleManifest = io::load_json(&dir.join("config.json"))?;
    if manifest.format_version != BUNDLE_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported bundle format version {}",
            dir.display(),
            manifest.format_version
        )));
    }
    let refined_cbt = Cbt::new(io::load_matrix_csv(&dir.join("cbt.csv"))?)?;
    let dgn_checkpoint: DgnCheckpoint = io::load_json(&dir.join("dgn.json"))?;
    let esn_checkpoint: EsnCheckpoint = io::load_json(&dir.join("esn.json"))?;
    let traces_path = dir.join("traces.csv");
    let text = fs::read_to_string(&traces_path).map_err(|e| Error::io(&traces_path, e))?;
    let traces = traces_from_csv(&traces_path, &text)?;
    let mut per_subject_cbts = Vec::with_capacity(manifest.subject_ids.len());
    for id in &manifest.subject_ids {
        let m = io::load_matrix_csv(&dir.join("subjects").join(format!("{id}.csv")))?;
        per_subject_cbts.push((id.clone(), Cbt::new(m)?));
    }
    Ok(ExperimentBundle {
        refined_cbt,
        per_subject_cbts,
        dgn_checkpoint,
        esn_checkpoint,
        traces,
        selected: manifest.selected,
        seed: manifest.seed,
        config: manifest.config,
    })
}

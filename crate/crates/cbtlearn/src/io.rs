//! On-disk formats: IDX image files, full-precision CSV matrices, JSON
//! checkpoints, population directories, and the structured run
//! configuration, plus atomic output-directory staging.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::coopt::SelectionMode;
use crate::dgn::TrainConfig;
use crate::error::{Error, Result};
use crate::graphdata::{MultiViewNetwork, Population, SynthConfig};
use crate::linalg::{Matrix, RngSeed};
use crate::reservoir::{EsnConfig, ImageSequence, UpdateRule};

/// Magic prefix of an unsigned-byte, 3-dimensional IDX image file.
pub const IDX_MAGIC: [u8; 4] = [0x00, 0x00, 0x08, 0x03];

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Reads up to `limit` frames from an IDX image file, scaling bytes to
/// reals in [0, 1]. `limit = 0` yields an empty sequence.
pub fn read_idx_images(path: &Path, limit: usize) -> Result<ImageSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "{}: truncated header ({} bytes, need 16)",
            path.display(),
            bytes.len()
        )));
    }
    if bytes[..4] != IDX_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:02x} {:02x} {:02x} {:02x}, expected 00 00 08 03",
            path.display(),
            bytes[0],
            bytes[1],
            bytes[2],
            bytes[3]
        )));
    }
    let n_frames = be_u32(&bytes, 4) as usize;
    let rows = be_u32(&bytes, 8) as usize;
    let cols = be_u32(&bytes, 12) as usize;
    if n_frames > 0 && rows * cols == 0 {
        return Err(Error::Format(format!(
            "{}: {n_frames} frames declared with empty {rows}x{cols} shape",
            path.display()
        )));
    }
    let expected = 16u64 + n_frames as u64 * rows as u64 * cols as u64;
    if (bytes.len() as u64) < expected {
        return Err(Error::Format(format!(
            "{}: truncated payload ({} bytes, header declares {expected})",
            path.display(),
            bytes.len()
        )));
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes past the declared payload",
            path.display(),
            bytes.len() as u64 - expected
        )));
    }
    let take = n_frames.min(limit);
    let frame_len = rows * cols;
    let frames = (0..take)
        .map(|t| {
            let chunk = &bytes[16 + t * frame_len..16 + (t + 1) * frame_len];
            Matrix::from_fn(rows, cols, |r, c| chunk[r * cols + c] as f64 / 255.0)
        })
        .collect();
    ImageSequence::new(frames)
}

/// Writes frames as an IDX image file; every pixel must lie in [0, 1] and
/// is stored as its nearest byte in 0..=255.
pub fn write_idx_images(path: &Path, seq: &ImageSequence) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + seq.len() * seq.n_pixels());
    bytes.extend_from_slice(&IDX_MAGIC);
    bytes.extend_from_slice(&(seq.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(seq.frame_rows() as u32).to_be_bytes());
    bytes.extend_from_slice(&(seq.frame_cols() as u32).to_be_bytes());
    for (t, frame) in seq.frames().iter().enumerate() {
        for &p in frame.as_slice() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Format(format!(
                    "frame {t} has pixel {p} outside [0, 1]; cannot encode as a byte"
                )));
            }
            bytes.push((p * 255.0).round() as u8);
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Per output cell, the overlapped input cells and their overlap lengths
/// for a 1-D area split of `n_in` cells into `n_out` equal fractions.
fn overlap_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|r| {
                    let w = hi.min((r + 1) as f64) - lo.max(r as f64);
                    (w > 0.0).then_some((r, w))
                })
                .collect()
        })
        .collect()
}

/// Area-weighted mean pooling to an exact fractional grid: each output
/// pixel integrates the input over its source rectangle (2.8-pixel bins for
/// 28 to 10) and divides by the rectangle area, so the global mean is
/// preserved and the map is linear in the image.
pub fn downsample_mean(img: &Matrix, out_rows: usize, out_cols: usize) -> Result<Matrix> {
    let (in_r, in_c) = (img.rows(), img.cols());
    if out_rows == 0 || out_cols == 0 || out_rows > in_r || out_cols > in_c {
        return Err(Error::Dimension(format!(
            "cannot mean-pool {in_r}x{in_c} to {out_rows}x{out_cols}"
        )));
    }
    let row_w = overlap_weights(in_r, out_rows);
    let col_w = overlap_weights(in_c, out_cols);
    let area = (in_r as f64 / out_rows as f64) * (in_c as f64 / out_cols as f64);
    let mut out = Matrix::zeros(out_rows, out_cols);
    for (i, rws) in row_w.iter().enumerate() {
        for (j, cws) in col_w.iter().enumerate() {
            let mut acc = 0.0;
            for &(r, wr) in rws {
                for &(c, wc) in cws {
                    acc += wr * wc * img[(r, c)];
                }
            }
            out[(i, j)] = acc / area;
        }
    }
    Ok(out)
}

/// Comma-separated rows at 17 significant digits, enough for a bit-exact
/// reload.
pub fn matrix_csv_string(m: &Matrix) -> String {
    let mut text = String::new();
    for r in 0..m.rows() {
        let row = m
            .row(r)
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>()
            .join(",");
        text.push_str(&row);
        text.push('\n');
    }
    text
}

pub fn save_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, matrix_csv_string(m)).map_err(|e| Error::io(path, e))
}

pub fn load_matrix_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (c, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!(
                    "{}: row {r}, column {c}: {field:?} is not a number",
                    path.display()
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "{}: row {r}, column {c}: nonfinite value",
                    path.display()
                )));
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Format(format!(
                    "{}: row {r} has {} fields, row 0 has {}",
                    path.display(),
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format(format!("{}: no matrix rows", path.display())));
    }
    Matrix::from_rows(&rows)
}

/// Pretty JSON with a trailing newline.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Stages `build` output in a temporary sibling directory and renames it to
/// `dest` only on success, so failed runs leave nothing behind. Refuses an
/// existing destination.
pub fn write_dir_atomic<F>(dest: &Path, build: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    if dest.exists() {
        return Err(Error::Config(format!(
            "output path {} already exists; refusing to overwrite",
            dest.display()
        )));
    }
    let parent = match dest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    build(staging.path())?;
    // After a successful rename the TempDir cleanup finds nothing to remove.
    fs::rename(staging.path(), dest).map_err(|e| Error::io(dest, e))
}

/// Atomically writes one file via a temporary sibling; refuses an existing
/// destination.
pub fn write_file_atomic(dest: &Path, bytes: &[u8]) -> Result<()> {
    if dest.exists() {
        return Err(Error::Config(format!(
            "output path {} already exists; refusing to overwrite",
            dest.display()
        )));
    }
    let parent = match dest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&parent).map_err(|e| Error::io(&parent, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(dest, e))?;
    tmp.persist(dest).map_err(|e| Error::io(dest, e.error))?;
    Ok(())
}

pub const POPULATION_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SubjectMeta {
    format_version: u32,
    subject_id: String,
    class_label: String,
    view_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PopulationMeta {
    format_version: u32,
    n_subjects: usize,
    n_regions: usize,
    view_names: Vec<String>,
}

fn path_safe(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Writes a population as one subdirectory per subject, each holding
/// `meta.json` plus `view_<k>.csv` files, and a `population.json` summary.
pub fn save_population(dir: &Path, pop: &Population) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_json(
        &dir.join("population.json"),
        &PopulationMeta {
            format_version: POPULATION_FORMAT_VERSION,
            n_subjects: pop.len(),
            n_regions: pop.n_regions(),
            view_names: pop.view_names().to_vec(),
        },
    )?;
    for subject in pop.subjects() {
        let id = subject.subject_id();
        if !path_safe(id) {
            return Err(Error::Format(format!(
                "subject id {id:?} is not a safe directory name"
            )));
        }
        let sdir = dir.join(id);
        fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
        save_json(
            &sdir.join("meta.json"),
            &SubjectMeta {
                format_version: POPULATION_FORMAT_VERSION,
                subject_id: id.to_string(),
                class_label: subject.class_label().to_string(),
                view_names: pop.view_names().to_vec(),
            },
        )?;
        for (k, view) in subject.views().iter().enumerate() {
            save_matrix_csv(&sdir.join(format!("view_{k}.csv")), view)?;
        }
    }
    Ok(())
}

/// Writes ground-truth class templates under `<dir>/ground_truth/`; the
/// population loader ignores that subdirectory (it has no subject meta).
pub fn save_class_templates(dir: &Path, templates: &[(String, Matrix)]) -> Result<()> {
    let gt = dir.join("ground_truth");
    fs::create_dir_all(&gt).map_err(|e| Error::io(&gt, e))?;
    for (label, m) in templates {
        if !path_safe(label) {
            return Err(Error::Format(format!(
                "class label {label:?} is not a safe file name"
            )));
        }
        save_matrix_csv(&gt.join(format!("class_{label}.csv")), m)?;
    }
    Ok(())
}

/// Loads a population directory. Subdirectories without `meta.json` are
/// skipped; loaded views get light repairs — averaging away asymmetry and
/// clearing the diagonal — each recorded as a note in the second return
/// value. Negative or nonfinite weights are not repaired.
pub fn load_population(dir: &Path) -> Result<(Population, Vec<String>)> {
    let mut subject_dirs = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() && path.join("meta.json").is_file() {
            subject_dirs.push(path);
        }
    }
    subject_dirs.sort();
    if subject_dirs.is_empty() {
        return Err(Error::Format(format!(
            "{}: no subject directories (none contain meta.json)",
            dir.display()
        )));
    }

    let mut notes = Vec::new();
    let mut subjects = Vec::new();
    let mut view_names: Option<Vec<String>> = None;
    for sdir in &subject_dirs {
        let meta: SubjectMeta = load_json(&sdir.join("meta.json"))?;
        if meta.format_version != POPULATION_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported subject format version {}",
                sdir.display(),
                meta.format_version
            )));
        }
        match &view_names {
            None => view_names = Some(meta.view_names.clone()),
            Some(names) if *names != meta.view_names => {
                return Err(Error::Format(format!(
                    "{}: view names differ from the first subject's",
                    sdir.display()
                )));
            }
            _ => {}
        }
        let mut views = Vec::with_capacity(meta.view_names.len());
        for k in 0..meta.view_names.len() {
            let vpath = sdir.join(format!("view_{k}.csv"));
            let raw = load_matrix_csv(&vpath)?;
            if !raw.is_square() {
                return Err(Error::Format(format!(
                    "{}: view matrix is {}x{}, expected square",
                    vpath.display(),
                    raw.rows(),
                    raw.cols()
                )));
            }
            let n = raw.rows();
            let mut fixed = Matrix::zeros(n, n);
            let mut worst_asym = 0.0f64;
            let mut dirty_diag = false;
            for i in 0..n {
                if raw[(i, i)] != 0.0 {
                    dirty_diag = true;
                }
                for j in i + 1..n {
                    worst_asym = worst_asym.max((raw[(i, j)] - raw[(j, i)]).abs());
                    let w = 0.5 * (raw[(i, j)] + raw[(j, i)]);
                    fixed[(i, j)] = w;
                    fixed[(j, i)] = w;
                }
            }
            if worst_asym > 0.0 {
                notes.push(format!(
                    "{}: symmetrized (max asymmetry {worst_asym:.3e})",
                    vpath.display()
                ));
            }
            if dirty_diag {
                notes.push(format!("{}: cleared nonzero diagonal", vpath.display()));
            }
            for (i, &w) in fixed.as_slice().iter().enumerate() {
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::Format(format!(
                        "{}: weight {w} at flat index {i} is not a nonnegative real",
                        vpath.display()
                    )));
                }
            }
            views.push(fixed);
        }
        subjects.push(MultiViewNetwork::new(
            meta.subject_id,
            meta.class_label,
            views,
        )?);
    }
    let pop = Population::new(subjects, view_names.unwrap_or_default())?;
    Ok((pop, notes))
}

/// One run's worth of settings, mirrored one-to-one by the sectioned text
/// configuration file. Every field has a default; see `RunConfig::default`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub population: PopulationSection,
    pub dgn: DgnSection,
    pub esn: EsnSection,
    pub coopt: CooptSection,
    pub recall: RecallSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationSection {
    pub n_subjects: usize,
    pub n_regions: usize,
    pub n_views: usize,
    pub classes: usize,
    pub noise_sigma: f64,
    /// Per-view magnitude scales; empty means all ones.
    pub view_scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgnSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub subset_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub early_stop_patience: usize,
    pub layer_dims: Vec<usize>,
    /// Hidden width of the edge filter networks; 0 means plain affine
    /// filters.
    pub filter_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EsnSection {
    pub spectral_radius: f64,
    pub input_scaling: f64,
    pub leakage: f64,
    pub bias: f64,
    pub n_transient: usize,
    pub ridge_lambda: f64,
    pub update_rule: UpdateRule,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CooptSection {
    pub readout_refit_every: usize,
    pub selection: SelectionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallSection {
    pub lag_min: usize,
    pub lag_max: usize,
    pub train_frames: usize,
    pub test_frames: usize,
    pub image_rows: usize,
    pub image_cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSection {
    pub folds: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            population: PopulationSection {
                n_subjects: 20,
                n_regions: 35,
                n_views: 4,
                classes: 2,
                noise_sigma: 0.1,
                view_scales: Vec::new(),
            },
            dgn: DgnSection {
                learning_rate: 0.005,
                epochs: 500,
                subset_size: 10,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
                early_stop_patience: 50,
                layer_dims: vec![36, 24, 5],
                filter_hidden: 0,
            },
            esn: EsnSection {
                spectral_radius: 0.98,
                input_scaling: 1e-6,
                leakage: 1.0,
                bias: 0.0,
                n_transient: 100,
                ridge_lambda: 1e-8,
                update_rule: UpdateRule::Blend,
            },
            coopt: CooptSection {
                readout_refit_every: 10,
                selection: SelectionMode::CombinedLoss,
            },
            recall: RecallSection {
                lag_min: 5,
                lag_max: 40,
                train_frames: 15,
                test_frames: 5,
                image_rows: 10,
                image_cols: 10,
            },
            run: RunSection {
                folds: 5,
                seed: 42,
                workers: 1,
            },
        }
    }
}

impl RunConfig {
    pub fn synth_config(&self) -> SynthConfig {
        let scales = if self.population.view_scales.is_empty() {
            vec![1.0; self.population.n_views]
        } else {
            self.population.view_scales.clone()
        };
        SynthConfig {
            n_subjects: self.population.n_subjects,
            n_regions: self.population.n_regions,
            n_views: self.population.n_views,
            classes: self.population.classes,
            noise_sigma: self.population.noise_sigma,
            view_scales: scales,
        }
    }

    pub fn dgn_train_config(&self, seed: RngSeed) -> TrainConfig {
        TrainConfig {
            learning_rate: self.dgn.learning_rate,
            epochs: self.dgn.epochs,
            subset_size: self.dgn.subset_size,
            beta1: self.dgn.beta1,
            beta2: self.dgn.beta2,
            epsilon: self.dgn.epsilon,
            early_stop_patience: self.dgn.early_stop_patience,
            layer_dims: self.dgn.layer_dims.clone(),
            filter_hidden: (self.dgn.filter_hidden > 0).then_some(self.dgn.filter_hidden),
            seed,
        }
    }

    pub fn esn_config(&self, seed: RngSeed) -> EsnConfig {
        EsnConfig {
            spectral_radius: self.esn.spectral_radius,
            input_scaling: self.esn.input_scaling,
            leakage: self.esn.leakage,
            bias: self.esn.bias,
            n_transient: self.esn.n_transient,
            tau_max: self.recall.lag_max.max(1),
            update_rule: self.esn.update_rule,
            ridge_lambda: self.esn.ridge_lambda,
            seed,
        }
    }

    /// Recall lags `lag_min..=min(lag_max, usable - 1)` for a training
    /// window of `usable` frames.
    pub fn lags(&self, usable_frames: usize) -> Result<Vec<usize>> {
        let hi = self.recall.lag_max.min(usable_frames.saturating_sub(1));
        if self.recall.lag_min > hi {
            return Err(Error::Lag(format!(
                "no usable lags: lag_min {} exceeds {} (lag_max {} over {} frames)",
                self.recall.lag_min, hi, self.recall.lag_max, usable_frames
            )));
        }
        Ok((self.recall.lag_min..=hi).collect())
    }

    pub fn total_frames(&self) -> usize {
        self.recall.train_frames + self.recall.test_frames
    }
}

fn value_kind(v: &toml::Value) -> &'static str {
    match v {
        toml::Value::String(_) => "a string",
        toml::Value::Integer(_) => "an integer",
        toml::Value::Float(_) => "a float",
        toml::Value::Boolean(_) => "a boolean",
        toml::Value::Datetime(_) => "a datetime",
        toml::Value::Array(_) => "an array",
        toml::Value::Table(_) => "a table",
    }
}

fn type_err(section: &str, key: &str, want: &str, v: &toml::Value) -> Error {
    Error::Config(format!(
        "{section}.{key}: expected {want}, got {}",
        value_kind(v)
    ))
}

fn take_usize(section: &str, key: &str, v: &toml::Value) -> Result<usize> {
    match v.as_integer() {
        Some(i) if i >= 0 => Ok(i as usize),
        Some(i) => Err(Error::Config(format!("{section}.{key}: {i} is negative"))),
        None => Err(type_err(section, key, "a nonnegative integer", v)),
    }
}

fn take_u64(section: &str, key: &str, v: &toml::Value) -> Result<u64> {
    match v.as_integer() {
        Some(i) if i >= 0 => Ok(i as u64),
        Some(i) => Err(Error::Config(format!("{section}.{key}: {i} is negative"))),
        None => Err(type_err(section, key, "a nonnegative integer", v)),
    }
}

fn take_f64(section: &str, key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(type_err(section, key, "a number", other)),
    }
}

fn take_string<'v>(section: &str, key: &str, v: &'v toml::Value) -> Result<&'v str> {
    v.as_str()
        .ok_or_else(|| type_err(section, key, "a string", v))
}

fn take_f64_array(section: &str, key: &str, v: &toml::Value) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| type_err(section, key, "an array of numbers", v))?;
    arr.iter().map(|x| take_f64(section, key, x)).collect()
}

fn take_usize_array(section: &str, key: &str, v: &toml::Value) -> Result<Vec<usize>> {
    let arr = v
        .as_array()
        .ok_or_else(|| type_err(section, key, "an array of integers", v))?;
    arr.iter().map(|x| take_usize(section, key, x)).collect()
}

/// Parses configuration text: every key is optional and falls back to its
/// default; unknown sections and keys are collected as warnings; wrongly
/// typed values are errors naming the key path.
pub fn parse_config(text: &str) -> Result<(RunConfig, Vec<String>)> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("configuration is not valid TOML: {e}")))?;
    let mut cfg = RunConfig::default();
    let mut warnings = Vec::new();
    for (section, value) in &table {
        let entries = match value.as_table() {
            Some(t) => t,
            None => {
                warnings.push(format!(
                    "ignoring top-level key {section:?} (not a section)"
                ));
                continue;
            }
        };
        if !matches!(
            section.as_str(),
            "population" | "dgn" | "esn" | "coopt" | "recall" | "run"
        ) {
            warnings.push(format!("ignoring unknown section [{section}]"));
            continue;
        }
        for (key, v) in entries {
            let known = apply_key(&mut cfg, section, key, v)?;
            if !known {
                warnings.push(format!("ignoring unknown key {section}.{key}"));
            }
        }
    }
    Ok((cfg, warnings))
}

/// Applies one key; returns false when the key (or its section) is unknown.
fn apply_key(cfg: &mut RunConfig, section: &str, key: &str, v: &toml::Value) -> Result<bool> {
    let s = section;
    match (section, key) {
        ("population", "n_subjects") => cfg.population.n_subjects = take_usize(s, key, v)?,
        ("population", "n_regions") => cfg.population.n_regions = take_usize(s, key, v)?,
        ("population", "n_views") => cfg.population.n_views = take_usize(s, key, v)?,
        ("population", "classes") => cfg.population.classes = take_usize(s, key, v)?,
        ("population", "noise_sigma") => cfg.population.noise_sigma = take_f64(s, key, v)?,
        ("population", "view_scales") => cfg.population.view_scales = take_f64_array(s, key, v)?,
        ("dgn", "learning_rate") => cfg.dgn.learning_rate = take_f64(s, key, v)?,
        ("dgn", "epochs") => cfg.dgn.epochs = take_usize(s, key, v)?,
        ("dgn", "subset_size") => cfg.dgn.subset_size = take_usize(s, key, v)?,
        ("dgn", "beta1") => cfg.dgn.beta1 = take_f64(s, key, v)?,
        ("dgn", "beta2") => cfg.dgn.beta2 = take_f64(s, key, v)?,
        ("dgn", "epsilon") => cfg.dgn.epsilon = take_f64(s, key, v)?,
        ("dgn", "early_stop_patience") => cfg.dgn.early_stop_patience = take_usize(s, key, v)?,
        ("dgn", "layer_dims") => cfg.dgn.layer_dims = take_usize_array(s, key, v)?,
        ("dgn", "filter_hidden") => cfg.dgn.filter_hidden = take_usize(s, key, v)?,
        ("esn", "spectral_radius") => cfg.esn.spectral_radius = take_f64(s, key, v)?,
        ("esn", "input_scaling") => cfg.esn.input_scaling = take_f64(s, key, v)?,
        ("esn", "leakage") => cfg.esn.leakage = take_f64(s, key, v)?,
        ("esn", "bias") => cfg.esn.bias = take_f64(s, key, v)?,
        ("esn", "n_transient") => cfg.esn.n_transient = take_usize(s, key, v)?,
        ("esn", "ridge_lambda") => cfg.esn.ridge_lambda = take_f64(s, key, v)?,
        ("esn", "update_rule") => {
            let token = take_string(s, key, v)?;
            cfg.esn.update_rule = token.parse().map_err(|_| {
                Error::Config(format!(
                    "esn.update_rule: expected \"blend\" or \"leaky\", got {token:?}"
                ))
            })?;
        }
        ("coopt", "readout_refit_every") => cfg.coopt.readout_refit_every = take_usize(s, key, v)?,
        ("coopt", "selection") => {
            let token = take_string(s, key, v)?;
            cfg.coopt.selection = token.parse().map_err(|_| {
                Error::Config(format!(
                    "coopt.selection: expected \"combined_loss\" or \"gnn_loss\", got {token:?}"
                ))
            })?;
        }
        ("recall", "lag_min") => cfg.recall.lag_min = take_usize(s, key, v)?,
        ("recall", "lag_max") => cfg.recall.lag_max = take_usize(s, key, v)?,
        ("recall", "train_frames") => cfg.recall.train_frames = take_usize(s, key, v)?,
        ("recall", "test_frames") => cfg.recall.test_frames = take_usize(s, key, v)?,
        ("recall", "image_rows") => cfg.recall.image_rows = take_usize(s, key, v)?,
        ("recall", "image_cols") => cfg.recall.image_cols = take_usize(s, key, v)?,
        ("run", "folds") => cfg.run.folds = take_usize(s, key, v)?,
        ("run", "seed") => cfg.run.seed = take_u64(s, key, v)?,
        ("run", "workers") => cfg.run.workers = take_usize(s, key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Loads a configuration file; a missing or empty file yields the defaults.
pub fn load_config(path: &Path) -> Result<(RunConfig, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Writes the full configuration (all keys explicit) in the same format
/// `load_config` reads; saving and reloading is lossless.
pub fn save_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

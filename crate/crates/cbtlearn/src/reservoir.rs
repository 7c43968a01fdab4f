//! Echo state network whose recurrent weights are a learned connectional
//! brain template, scored by how well linear readouts recall delayed input
//! frames.
//!
//! The template is rescaled to a target spectral radius and frozen; a random
//! input projection maps flattened image frames into the reservoir. Only the
//! per-lag readout matrices are trained, by ridge regression on harvested
//! states. Recall quality is summarized by the cognitive loss (mean squared
//! reconstruction error averaged over lags) and by the visual memory
//! capacity, the sum over lags of the squared correlation between true and
//! predicted delayed frames.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dgn::Cbt;
use crate::error::{Error, Result};
use crate::linalg::{ridge_solve, spectral_radius, Matrix, RngSeed};

/// A sequence of equally shaped image frames; pixel (r, c) of frame t is the
/// reservoir input coordinate r * cols + c at time t.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    frames: Vec<Matrix>,
}

impl ImageSequence {
    /// Wraps frames after checking they share one finite, nonempty shape.
    /// An empty list is allowed; operations that need frames report it.
    pub fn new(frames: Vec<Matrix>) -> Result<ImageSequence> {
        if let Some(first) = frames.first() {
            if first.rows() == 0 || first.cols() == 0 {
                return Err(Error::Format("image frames must be nonempty".into()));
            }
            for (t, f) in frames.iter().enumerate() {
                if f.rows() != first.rows() || f.cols() != first.cols() {
                    return Err(Error::Format(format!(
                        "frame {t} is {}x{}, expected {}x{}",
                        f.rows(),
                        f.cols(),
                        first.rows(),
                        first.cols()
                    )));
                }
                if !f.all_finite() {
                    return Err(Error::Format(format!("frame {t} has nonfinite pixels")));
                }
            }
        }
        Ok(ImageSequence { frames })
    }

    pub fn empty() -> ImageSequence {
        ImageSequence { frames: Vec::new() }
    }

    pub fn frames(&self) -> &[Matrix] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Matrix {
        &self.frames[t]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_rows(&self) -> usize {
        self.frames.first().map_or(0, Matrix::rows)
    }

    pub fn frame_cols(&self) -> usize {
        self.frames.first().map_or(0, Matrix::cols)
    }

    /// Pixels per frame, the reservoir's input width.
    pub fn n_pixels(&self) -> usize {
        self.frame_rows() * self.frame_cols()
    }

    /// Copy of the frames in `range`, preserving shape.
    pub fn window(&self, range: Range<usize>) -> Result<ImageSequence> {
        if range.end > self.frames.len() || range.start > range.end {
            return Err(Error::Dimension(format!(
                "window {}..{} outside sequence of length {}",
                range.start,
                range.end,
                self.frames.len()
            )));
        }
        Ok(ImageSequence {
            frames: self.frames[range].to_vec(),
        })
    }
}

/// Independent uniform pixels in [0, 1) per frame; a maximally informative
/// drive for memory-capacity measurements.
pub fn random_image_sequence(
    n_frames: usize,
    rows: usize,
    cols: usize,
    seed: RngSeed,
) -> Result<ImageSequence> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension("frames need at least one pixel".into()));
    }
    let mut rng = seed.rng();
    let frames = (0..n_frames)
        .map(|_| Matrix::from_fn(rows, cols, |_, _| rand::Rng::gen_range(&mut rng, 0.0..1.0)))
        .collect();
    ImageSequence::new(frames)
}

/// How the state advances each step.
///
/// `Blend` interpolates the input drive against the recurrent drive inside
/// the nonlinearity: `x <- tanh(a*W_in*[1;c] + (1-a)*W_res*x + b)`. At
/// leakage 1 the recurrent term vanishes and the state becomes a memoryless
/// encoding of the current frame.
///
/// `Leaky` is the classic leaky integrator,
/// `x <- (1-a)*x + a*tanh(W_in*[1;c] + W_res*x + b)`, which keeps full
/// recurrence inside the nonlinearity even at leakage 1; recall experiments
/// use it so the reservoir actually remembers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    Blend,
    Leaky,
}

impl UpdateRule {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdateRule::Blend => "blend",
            UpdateRule::Leaky => "leaky",
        }
    }
}

impl fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpdateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<UpdateRule> {
        match s {
            "blend" => Ok(UpdateRule::Blend),
            "leaky" => Ok(UpdateRule::Leaky),
            other => Err(Error::Config(format!(
                "unknown update rule {other:?}; expected \"blend\" or \"leaky\""
            ))),
        }
    }
}

/// Reservoir hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsnConfig {
    /// Target spectral radius of the recurrent matrix.
    pub spectral_radius: f64,
    /// Scale applied to the uniform(-1, 1) input projection.
    pub input_scaling: f64,
    /// Leakage in [0, 1]; see [`UpdateRule`] for its two meanings.
    pub leakage: f64,
    /// Constant added inside the nonlinearity.
    pub bias: f64,
    /// Warm-up steps discarded before harvesting states.
    pub n_transient: usize,
    /// Largest recall lag the configuration intends to probe.
    pub tau_max: usize,
    pub update_rule: UpdateRule,
    /// Readout ridge penalty.
    pub ridge_lambda: f64,
    pub seed: RngSeed,
}

impl Default for EsnConfig {
    fn default() -> Self {
        EsnConfig {
            spectral_radius: 0.98,
            input_scaling: 1e-6,
            leakage: 1.0,
            bias: 0.0,
            n_transient: 100,
            tau_max: 40,
            update_rule: UpdateRule::Blend,
            ridge_lambda: 1e-8,
            seed: RngSeed(0),
        }
    }
}

impl EsnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.leakage) {
            return Err(Error::Config(format!(
                "leakage {} outside [0, 1]",
                self.leakage
            )));
        }
        if !(self.spectral_radius > 0.0) || !self.spectral_radius.is_finite() {
            return Err(Error::Config(format!(
                "spectral radius {} must be positive",
                self.spectral_radius
            )));
        }
        if self.tau_max == 0 {
            return Err(Error::Config("tau_max must be at least 1".into()));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(Error::Config(format!(
                "ridge penalty {} negative",
                self.ridge_lambda
            )));
        }
        if !self.input_scaling.is_finite() || self.input_scaling < 0.0 {
            return Err(Error::Config(format!(
                "input scaling {} must be finite and nonnegative",
                self.input_scaling
            )));
        }
        if !self.bias.is_finite() {
            return Err(Error::Config("bias must be finite".into()));
        }
        Ok(())
    }
}

/// Echo state network with a fixed connectome-derived recurrent matrix.
/// Only `readouts` are trained.
#[derive(Debug, Clone)]
pub struct EchoStateNetwork {
    /// n_r x (n_c + 1); column 0 multiplies the constant 1 of `[1; c]`.
    w_in: Matrix,
    w_res: Matrix,
    readouts: BTreeMap<usize, Matrix>,
    state: Vec<f64>,
    cfg: EsnConfig,
}

/// Builds a reservoir from a template: the template is rescaled so its
/// spectral radius equals the configured target, and the input projection
/// for `n_inputs`-pixel frames is drawn uniformly from (-1, 1) times the
/// input scaling.
pub fn build_reservoir_from_connectome(
    cbt: &Cbt,
    cfg: &EsnConfig,
    n_inputs: usize,
) -> Result<EchoStateNetwork> {
    cfg.validate()?;
    if n_inputs == 0 {
        return Err(Error::Dimension(
            "reservoir needs at least one input".into(),
        ));
    }
    let radius = spectral_radius(cbt.matrix(), 1e-13, 20_000)?;
    if radius <= 0.0 {
        return Err(Error::DegenerateReservoir(
            "template has zero spectral radius; cannot condition the reservoir".into(),
        ));
    }
    let w_res = cbt.matrix().scale(cfg.spectral_radius / radius);
    let mut rng = cfg.seed.rng();
    let n_r = w_res.rows();
    let w_in = Matrix::from_fn(n_r, n_inputs + 1, |_, _| {
        rand::Rng::gen_range(&mut rng, -1.0..1.0) * cfg.input_scaling
    });
    Ok(EchoStateNetwork {
        w_in,
        w_res,
        readouts: BTreeMap::new(),
        state: vec![0.0; n_r],
        cfg: cfg.clone(),
    })
}

impl EchoStateNetwork {
    pub fn config(&self) -> &EsnConfig {
        &self.cfg
    }

    pub fn w_in(&self) -> &Matrix {
        &self.w_in
    }

    pub fn w_res(&self) -> &Matrix {
        &self.w_res
    }

    pub fn n_units(&self) -> usize {
        self.w_res.rows()
    }

    pub fn n_inputs(&self) -> usize {
        self.w_in.cols() - 1
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn reset_state(&mut self) {
        self.state.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn set_state(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != self.state.len() {
            return Err(Error::Dimension(format!(
                "state has {} entries, reservoir has {}",
                state.len(),
                self.state.len()
            )));
        }
        if state.iter().any(|x| !x.is_finite()) {
            return Err(Error::Dimension("state entries must be finite".into()));
        }
        self.state.copy_from_slice(state);
        Ok(())
    }

    pub fn readout(&self, lag: usize) -> Option<&Matrix> {
        self.readouts.get(&lag)
    }

    pub fn readout_lags(&self) -> Vec<usize> {
        self.readouts.keys().copied().collect()
    }

    /// One update of `state` from `input`.
    fn advance(&self, state: &mut [f64], input: &[f64]) {
        let n_r = state.len();
        let a = self.cfg.leakage;
        let mut next = vec![0.0f64; n_r];
        for (i, nx) in next.iter_mut().enumerate() {
            let wrow = self.w_in.row(i);
            let mut drive = wrow[0];
            for (w, &c) in wrow[1..].iter().zip(input) {
                drive += w * c;
            }
            let rrow = self.w_res.row(i);
            let mut rec = 0.0;
            for (w, &x) in rrow.iter().zip(state.iter()) {
                rec += w * x;
            }
            *nx = match self.cfg.update_rule {
                UpdateRule::Blend => (a * drive + (1.0 - a) * rec + self.cfg.bias).tanh(),
                UpdateRule::Leaky => {
                    (1.0 - a) * state[i] + a * (drive + rec + self.cfg.bias).tanh()
                }
            };
        }
        state.copy_from_slice(&next);
    }

    /// Advances the live state by one input vector and returns it.
    pub fn step(&mut self, input: &[f64]) -> Result<&[f64]> {
        if input.len() != self.n_inputs() {
            return Err(Error::Dimension(format!(
                "input has {} values, reservoir expects {}",
                input.len(),
                self.n_inputs()
            )));
        }
        let mut state = std::mem::take(&mut self.state);
        self.advance(&mut state, input);
        self.state = state;
        Ok(&self.state)
    }

    /// Runs the sequence from a zero state after a warm-up that replays the
    /// sequence cyclically for `n_transient` steps, returning one state row
    /// per frame. The live stepping state is not touched.
    pub fn harvest_states(&self, seq: &ImageSequence) -> Result<Matrix> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        if seq.n_pixels() != self.n_inputs() {
            return Err(Error::Dimension(format!(
                "frames have {} pixels, reservoir expects {}",
                seq.n_pixels(),
                self.n_inputs()
            )));
        }
        let t_len = seq.len();
        let mut state = vec![0.0f64; self.n_units()];
        for i in 0..self.cfg.n_transient {
            self.advance(&mut state, seq.frame(i % t_len).as_slice());
        }
        let mut rows = Matrix::zeros(t_len, self.n_units());
        for t in 0..t_len {
            self.advance(&mut state, seq.frame(t).as_slice());
            rows.row_mut(t).copy_from_slice(&state);
        }
        Ok(rows)
    }
}

fn checked_lags(lags: &[usize], t_len: usize) -> Result<Vec<usize>> {
    if lags.is_empty() {
        return Err(Error::Lag("no lags requested".into()));
    }
    let mut sorted: Vec<usize> = lags.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&worst) = sorted.last() {
        if worst >= t_len {
            return Err(Error::Lag(format!(
                "lag {worst} out of range for a {t_len}-frame sequence"
            )));
        }
    }
    Ok(sorted)
}

/// Predictions of the lag-`lag` readout over sample times `window`, paired
/// with the true delayed frames; both are (window length) x n_pixels.
fn lag_samples(
    states: &Matrix,
    seq: &ImageSequence,
    readout: &Matrix,
    lag: usize,
    window: Range<usize>,
) -> (Matrix, Matrix) {
    let n_out = readout.rows();
    let n_samples = window.end - window.start;
    let mut preds = Matrix::zeros(n_samples, n_out);
    let mut truths = Matrix::zeros(n_samples, n_out);
    for (row, t) in window.enumerate() {
        let x = states.row(t);
        let p = preds.row_mut(row);
        for (j, pv) in p.iter_mut().enumerate() {
            let wrow = readout.row(j);
            let mut acc = 0.0;
            for (w, &xv) in wrow.iter().zip(x) {
                acc += w * xv;
            }
            *pv = acc;
        }
        truths
            .row_mut(row)
            .copy_from_slice(seq.frame(t - lag).as_slice());
    }
    (preds, truths)
}

impl EchoStateNetwork {
    /// Fits one ridge readout per lag on the harvested states (sample times
    /// t = lag..T-1 predict frame t-lag) and returns the cognitive loss: the
    /// per-lag mean squared reconstruction error averaged over lags.
    pub fn train_readouts(&mut self, seq: &ImageSequence, lags: &[usize]) -> Result<f64> {
        let states = self.harvest_states(seq)?;
        let lags = checked_lags(lags, seq.len())?;
        let t_len = seq.len();
        let n_out = seq.n_pixels();
        let mut total = 0.0;
        for &lag in &lags {
            let n_samples = t_len - lag;
            let mut design = Matrix::zeros(n_samples, self.n_units());
            let mut targets = Matrix::zeros(n_samples, n_out);
            for (row, t) in (lag..t_len).enumerate() {
                design.row_mut(row).copy_from_slice(states.row(t));
                targets
                    .row_mut(row)
                    .copy_from_slice(seq.frame(t - lag).as_slice());
            }
            let coef = ridge_solve(&design, &targets, self.cfg.ridge_lambda)?;
            let readout = coef.transpose();
            let mut sq = 0.0;
            for (row, t) in (lag..t_len).enumerate() {
                let x = states.row(t);
                let truth = targets.row(row);
                for j in 0..n_out {
                    let wrow = readout.row(j);
                    let mut acc = 0.0;
                    for (w, &xv) in wrow.iter().zip(x) {
                        acc += w * xv;
                    }
                    let d = acc - truth[j];
                    sq += d * d;
                }
            }
            total += sq / n_samples as f64;
            self.readouts.insert(lag, readout);
        }
        Ok(total / lags.len() as f64)
    }

    /// Visual memory capacity over the stated lags, with each lag scored on
    /// its full range of sample times t = lag..T-1.
    pub fn vis_mc(&self, seq: &ImageSequence, lags: &[usize]) -> Result<f64> {
        let states = self.harvest_states(seq)?;
        let lags = checked_lags(lags, seq.len())?;
        let mut pairs = Vec::with_capacity(lags.len());
        for &lag in &lags {
            let readout = self.readouts.get(&lag).ok_or(Error::MissingReadout(lag))?;
            pairs.push(lag_samples(&states, seq, readout, lag, lag..seq.len()));
        }
        Ok(vis_mc_from_predictions(&pairs))
    }

    /// Per-lag (predictions, truths) sample pairs with sample times
    /// restricted to `window`, each matrix sample-major with one pixel per
    /// column. Every lag must reach back within the sequence from the
    /// window start.
    pub fn windowed_samples(
        &self,
        seq: &ImageSequence,
        lags: &[usize],
        window: Range<usize>,
    ) -> Result<Vec<(usize, (Matrix, Matrix))>> {
        let lags = checked_lags(lags, seq.len())?;
        if window.start >= window.end || window.end > seq.len() {
            return Err(Error::Dimension(format!(
                "window {}..{} outside sequence of length {}",
                window.start,
                window.end,
                seq.len()
            )));
        }
        if let Some(&worst) = lags.last() {
            if worst > window.start {
                return Err(Error::Lag(format!(
                    "lag {worst} reaches before the sequence start from window {}..{}",
                    window.start, window.end
                )));
            }
        }
        let states = self.harvest_states(seq)?;
        let mut samples = Vec::with_capacity(lags.len());
        for &lag in &lags {
            let readout = self.readouts.get(&lag).ok_or(Error::MissingReadout(lag))?;
            samples.push((lag, lag_samples(&states, seq, readout, lag, window.clone())));
        }
        Ok(samples)
    }

    /// Visual memory capacity restricted to sample times in `window`, used
    /// to score recall on held-out frames while the state still runs over
    /// the whole sequence.
    pub fn vis_mc_windowed(
        &self,
        seq: &ImageSequence,
        lags: &[usize],
        window: Range<usize>,
    ) -> Result<f64> {
        let samples = self.windowed_samples(seq, lags, window)?;
        let pairs: Vec<(Matrix, Matrix)> = samples.into_iter().map(|(_, p)| p).collect();
        Ok(vis_mc_from_predictions(&pairs))
    }
}

/// Per-pair squared centered correlation, in input order.
pub fn r_squared_per_pair(pairs: &[(Matrix, Matrix)]) -> Vec<f64> {
    pairs
        .iter()
        .map(|(preds, truths)| {
            let r = centered_cosine(preds, truths);
            r * r
        })
        .collect()
}

/// Squared-correlation sum from explicit (predictions, truths) pairs, one
/// pair per lag, each matrix sample-major with one pixel per column.
///
/// Every pixel is centered by its own mean over samples (the "mean image"
/// of that lag), both matrices are flattened, and their cosine similarity is
/// the lag's correlation. A side with (numerically) zero variance scores 0.
pub fn vis_mc_from_predictions(pairs: &[(Matrix, Matrix)]) -> f64 {
    r_squared_per_pair(pairs).into_iter().sum()
}

fn column_means(m: &Matrix) -> Vec<f64> {
    let mut means = vec![0.0f64; m.cols()];
    for r in 0..m.rows() {
        for (mean, &v) in means.iter_mut().zip(m.row(r)) {
            *mean += v;
        }
    }
    let n = m.rows() as f64;
    means.iter_mut().for_each(|m| *m /= n);
    means
}

fn centered_cosine(a: &Matrix, b: &Matrix) -> f64 {
    debug_assert_eq!(a.rows(), b.rows());
    debug_assert_eq!(a.cols(), b.cols());
    if a.rows() == 0 || a.cols() == 0 {
        return 0.0;
    }
    let ma = column_means(a);
    let mb = column_means(b);
    let (mut saa, mut sbb, mut sab) = (0.0f64, 0.0f64, 0.0f64);
    let (mut raw_a, mut raw_b) = (0.0f64, 0.0f64);
    for r in 0..a.rows() {
        for ((&av, &bv), (&mav, &mbv)) in a.row(r).iter().zip(b.row(r)).zip(ma.iter().zip(&mb)) {
            let ca = av - mav;
            let cb = bv - mbv;
            saa += ca * ca;
            sbb += cb * cb;
            sab += ca * cb;
            raw_a += av * av;
            raw_b += bv * bv;
        }
    }
    // Zero-variance convention with a relative noise floor: centering a
    // numerically constant signal leaves only rounding residue.
    if saa <= 1e-24 * raw_a || sbb <= 1e-24 * raw_b || saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// On-disk form of a reservoir: configuration, projection and recurrent
/// matrices, and the trained readouts sorted by lag. The transient stepping
/// state is not persisted; a loaded reservoir starts from zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsnCheckpoint {
    pub format_version: u32,
    pub config: EsnConfig,
    w_in: Matrix,
    w_res: Matrix,
    readouts: Vec<ReadoutCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReadoutCheckpoint {
    lag: usize,
    weights: Matrix,
}

pub const ESN_FORMAT_VERSION: u32 = 1;

impl EsnCheckpoint {
    pub fn from_network(esn: &EchoStateNetwork) -> EsnCheckpoint {
        EsnCheckpoint {
            format_version: ESN_FORMAT_VERSION,
            config: esn.cfg.clone(),
            w_in: esn.w_in.clone(),
            w_res: esn.w_res.clone(),
            readouts: esn
                .readouts
                .iter()
                .map(|(&lag, weights)| ReadoutCheckpoint {
                    lag,
                    weights: weights.clone(),
                })
                .collect(),
        }
    }

    pub fn into_network(self) -> Result<EchoStateNetwork> {
        if self.format_version != ESN_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported reservoir checkpoint version {}",
                self.format_version
            )));
        }
        self.config.validate()?;
        if !self.w_res.is_square() || self.w_res.rows() == 0 {
            return Err(Error::Format(
                "recurrent matrix must be square and nonempty".into(),
            ));
        }
        if self.w_in.rows() != self.w_res.rows() || self.w_in.cols() < 2 {
            return Err(Error::Format(format!(
                "input projection is {}x{}, expected {} rows and at least 2 columns",
                self.w_in.rows(),
                self.w_in.cols(),
                self.w_res.rows()
            )));
        }
        if !self.w_in.all_finite() || !self.w_res.all_finite() {
            return Err(Error::Format("reservoir weights must be finite".into()));
        }
        let n_r = self.w_res.rows();
        let mut readouts = BTreeMap::new();
        for r in self.readouts {
            if r.weights.cols() != n_r {
                return Err(Error::Format(format!(
                    "readout for lag {} has {} columns, expected {n_r}",
                    r.lag,
                    r.weights.cols()
                )));
            }
            if readouts.insert(r.lag, r.weights).is_some() {
                return Err(Error::Format(format!(
                    "duplicate readout for lag {}",
                    r.lag
                )));
            }
        }
        Ok(EchoStateNetwork {
            state: vec![0.0; n_r],
            w_in: self.w_in,
            w_res: self.w_res,
            readouts,
            cfg: self.config,
        })
    }
}

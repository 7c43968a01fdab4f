//! Population data model: multi-view brain networks, view normalizers,
//! fold splitting and a synthetic population generator with known ground
//! truth. All matrices are weighted adjacency matrices over the same set of
//! regions: symmetric, nonnegative, zero diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngSeed};

/// One subject: a stack of connectivity views over `n_regions` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewNetwork {
    subject_id: String,
    class_label: String,
    views: Vec<Matrix>,
}

impl MultiViewNetwork {
    /// Validates every view: square, one shared size, finite, nonnegative,
    /// exactly symmetric, zero diagonal.
    pub fn new(
        subject_id: impl Into<String>,
        class_label: impl Into<String>,
        views: Vec<Matrix>,
    ) -> Result<MultiViewNetwork> {
        let subject_id = subject_id.into();
        if views.is_empty() {
            return Err(Error::Format(format!("subject {subject_id} has no views")));
        }
        let n = views[0].rows();
        if n == 0 {
            return Err(Error::Format(format!(
                "subject {subject_id} has an empty view"
            )));
        }
        for (v, m) in views.iter().enumerate() {
            if !m.is_square() || m.rows() != n {
                return Err(Error::Format(format!(
                    "subject {subject_id} view {v}: expected {n}x{n}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
            for i in 0..n {
                if m[(i, i)] != 0.0 {
                    return Err(Error::Format(format!(
                        "subject {subject_id} view {v}: nonzero diagonal at {i}"
                    )));
                }
                for j in 0..n {
                    let w = m[(i, j)];
                    if !w.is_finite() || w < 0.0 {
                        return Err(Error::Format(format!(
                            "subject {subject_id} view {v}: invalid weight {w} at ({i},{j})"
                        )));
                    }
                    if m[(j, i)] != w {
                        return Err(Error::Format(format!(
                            "subject {subject_id} view {v}: asymmetric at ({i},{j})"
                        )));
                    }
                }
            }
        }
        Ok(MultiViewNetwork {
            subject_id,
            class_label: class_label.into(),
            views,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn class_label(&self) -> &str {
        &self.class_label
    }

    pub fn views(&self) -> &[Matrix] {
        &self.views
    }

    pub fn view(&self, v: usize) -> &Matrix {
        &self.views[v]
    }

    pub fn n_regions(&self) -> usize {
        self.views[0].rows()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }
}

/// A cohort of subjects sharing region count, view count and view names.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    subjects: Vec<MultiViewNetwork>,
    view_names: Vec<String>,
}

impl Population {
    pub fn new(subjects: Vec<MultiViewNetwork>, view_names: Vec<String>) -> Result<Population> {
        let first = subjects
            .first()
            .ok_or_else(|| Error::Format("population has no subjects".into()))?;
        let (n_r, n_v) = (first.n_regions(), first.n_views());
        if view_names.len() != n_v {
            return Err(Error::Format(format!(
                "{} view names for {} views",
                view_names.len(),
                n_v
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &subjects {
            if s.n_regions() != n_r || s.n_views() != n_v {
                return Err(Error::Format(format!(
                    "subject {} has {} regions / {} views, expected {n_r}/{n_v}",
                    s.subject_id(),
                    s.n_regions(),
                    s.n_views()
                )));
            }
            if !seen.insert(s.subject_id().to_string()) {
                return Err(Error::Format(format!(
                    "duplicate subject id {}",
                    s.subject_id()
                )));
            }
        }
        Ok(Population {
            subjects,
            view_names,
        })
    }

    pub fn subjects(&self) -> &[MultiViewNetwork] {
        &self.subjects
    }

    pub fn view_names(&self) -> &[String] {
        &self.view_names
    }

    pub fn n_regions(&self) -> usize {
        self.subjects[0].n_regions()
    }

    pub fn n_views(&self) -> usize {
        self.subjects[0].n_views()
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects
            .iter()
            .map(|s| s.subject_id().to_string())
            .collect()
    }

    pub fn by_id(&self, id: &str) -> Option<&MultiViewNetwork> {
        self.subjects.iter().find(|s| s.subject_id() == id)
    }

    /// Subjects in the order of `ids`; unknown ids are an error.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&MultiViewNetwork>> {
        ids.iter()
            .map(|id| {
                self.by_id(id)
                    .ok_or_else(|| Error::Split(format!("unknown subject id {id}")))
            })
            .collect()
    }
}

/// Per-view scale factors balancing heterogeneous view magnitudes. The view
/// with the smallest mean weight gets factor exactly 1; every other view is
/// scaled down in proportion to its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewNormalizers {
    pub lambdas: Vec<f64>,
}

/// Mean off-diagonal weight of each view across `subjects`, turned into
/// normalizers `lambda_v = (1/mu_v) / max_j (1/mu_j)`.
pub fn compute_view_normalizers(subjects: &[&MultiViewNetwork]) -> Result<ViewNormalizers> {
    let first = subjects
        .first()
        .ok_or_else(|| Error::DegenerateView("no subjects to normalize over".into()))?;
    let n_v = first.n_views();
    let n_r = first.n_regions();
    let mut means = vec![0.0f64; n_v];
    for v in 0..n_v {
        let mut sum = 0.0;
        for s in subjects {
            let m = s.view(v);
            for i in 0..n_r {
                for j in 0..n_r {
                    if i != j {
                        sum += m[(i, j)];
                    }
                }
            }
        }
        let count = (subjects.len() * n_r * (n_r - 1)) as f64;
        means[v] = sum / count;
        if means[v] <= 0.0 {
            return Err(Error::DegenerateView(format!(
                "view {v} has zero mean weight; it cannot be normalized"
            )));
        }
    }
    let max_inv = means.iter().map(|m| 1.0 / m).fold(f64::MIN, f64::max);
    let lambdas = means.iter().map(|m| (1.0 / m) / max_inv).collect();
    Ok(ViewNormalizers { lambdas })
}

/// One cross-validation fold. Both id lists keep the shuffle order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Shuffled k-fold partition. Test sets are disjoint, cover everyone, and
/// differ in size by at most one; the first `n mod k` folds take the extra
/// subject.
pub fn kfold_split(ids: &[String], k: usize, seed: RngSeed) -> Result<Vec<FoldSplit>> {
    if k < 2 || k > ids.len() {
        return Err(Error::Split(format!(
            "cannot split {} subjects into {k} folds",
            ids.len()
        )));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    use rand::seq::SliceRandom;
    shuffled.shuffle(&mut seed.rng());
    let base = shuffled.len() / k;
    let extra = shuffled.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let test_ids: Vec<String> = shuffled[start..start + size].to_vec();
        let train_ids: Vec<String> = shuffled[..start]
            .iter()
            .chain(&shuffled[start + size..])
            .cloned()
            .collect();
        folds.push(FoldSplit {
            fold_index: f,
            train_ids,
            test_ids,
        });
        start += size;
    }
    Ok(folds)
}

/// Uniform sample of `size` ids without replacement. The draw is a pure
/// function of `(seed, draw_index)`, so repeated calls with an advancing
/// index give fresh but reproducible subsets.
pub fn sample_training_subset(
    ids: &[String],
    size: usize,
    seed: RngSeed,
    draw_index: u64,
) -> Result<Vec<String>> {
    if size == 0 || size > ids.len() {
        return Err(Error::Sampling(format!(
            "cannot sample {size} of {} subjects",
            ids.len()
        )));
    }
    let mut rng = seed.stream_rng(draw_index);
    let mut pool: Vec<usize> = (0..ids.len()).collect();
    let mut picked = Vec::with_capacity(size);
    for i in 0..size {
        let j = rand::Rng::gen_range(&mut rng, i..pool.len());
        pool.swap(i, j);
        picked.push(ids[pool[i]].clone());
    }
    Ok(picked)
}

/// Generator settings for a synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_regions: usize,
    pub n_views: usize,
    pub classes: usize,
    pub noise_sigma: f64,
    /// Per-view magnitude multipliers; length must equal `n_views`.
    pub view_scales: Vec<f64>,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.n_regions < 2 || self.n_views == 0 || self.classes == 0 {
            return Err(Error::Config(format!(
                "invalid synthetic population shape: {} subjects, {} regions, {} views, {} classes",
                self.n_subjects, self.n_regions, self.n_views, self.classes
            )));
        }
        if self.classes > self.n_subjects {
            return Err(Error::Config("more classes than subjects".into()));
        }
        if self.view_scales.len() != self.n_views {
            return Err(Error::Config(format!(
                "{} view scales for {} views",
                self.view_scales.len(),
                self.n_views
            )));
        }
        if self
            .view_scales
            .iter()
            .any(|&s| !(s > 0.0) || !s.is_finite())
        {
            return Err(Error::Config(
                "view scales must be positive and finite".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config("noise sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A generated population together with the class templates it was grown
/// from, for recovery experiments.
#[derive(Debug, Clone)]
pub struct SyntheticPopulation {
    pub population: Population,
    pub class_templates: Vec<(String, Matrix)>,
}

fn standard_normal(rng: &mut impl rand::Rng) -> f64 {
    // Box-Muller; u1 is shifted away from zero so the log is finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Number of latent regional attributes behind each class template.
const TEMPLATE_LATENT_DIMS: usize = 3;

/// Draws one symmetric template per class, then per subject and view
/// perturbs it with Gaussian noise, takes absolute values, applies the view
/// scale and zeroes the diagonal. With zero noise and unit scales every
/// subject reproduces its class template exactly.
///
/// Templates mirror how morphological connectivity is measured: each class
/// gets latent per-region attribute values, and the template edge (i, j) is
/// the mean absolute attribute difference between regions i and j. Edges
/// therefore carry the low-dimensional metric structure real multi-view
/// networks have, instead of independent random weights.
pub fn generate_synthetic_population(
    cfg: &SynthConfig,
    seed: RngSeed,
) -> Result<SyntheticPopulation> {
    cfg.validate()?;
    let n = cfg.n_regions;
    let template_seed = seed.derive(0x7e4c);
    let noise_seed = seed.derive(0x4015e);

    let mut class_templates = Vec::with_capacity(cfg.classes);
    for c in 0..cfg.classes {
        let mut rng = template_seed.stream_rng(c as u64);
        let attrs = Matrix::from_fn(n, TEMPLATE_LATENT_DIMS, |_, _| standard_normal(&mut rng));
        let mut t = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let d: f64 = attrs
                    .row(i)
                    .iter()
                    .zip(attrs.row(j))
                    .map(|(&a, &b)| (a - b).abs())
                    .sum();
                let w = d / TEMPLATE_LATENT_DIMS as f64;
                t[(i, j)] = w;
                t[(j, i)] = w;
            }
        }
        class_templates.push((format!("class_{c}"), t));
    }

    let base = cfg.n_subjects / cfg.classes;
    let extra = cfg.n_subjects % cfg.classes;
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    let mut subject_index = 0u64;
    for (c, (label, template)) in class_templates.iter().enumerate() {
        let count = base + usize::from(c < extra);
        for s in 0..count {
            let mut rng = noise_seed.stream_rng(subject_index);
            subject_index += 1;
            let mut views = Vec::with_capacity(cfg.n_views);
            for scale in &cfg.view_scales {
                let mut m = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in i + 1..n {
                        let noise = if cfg.noise_sigma > 0.0 {
                            cfg.noise_sigma * standard_normal(&mut rng)
                        } else {
                            0.0
                        };
                        let w = (template[(i, j)] + noise).abs() * scale;
                        m[(i, j)] = w;
                        m[(j, i)] = w;
                    }
                }
                views.push(m);
            }
            subjects.push(MultiViewNetwork::new(
                format!("{label}_s{s:03}"),
                label,
                views,
            )?);
        }
    }

    let view_names = (0..cfg.n_views).map(|v| format!("view_{v}")).collect();
    Ok(SyntheticPopulation {
        population: Population::new(subjects, view_names)?,
        class_templates,
    })
}

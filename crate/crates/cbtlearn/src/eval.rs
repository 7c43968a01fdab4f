//! Template evaluation: centeredness against held-out subjects, visual
//! memory capacity on a fixed scoring window, weighted-graph topology
//! metrics, and paired t-tests across folds.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::coopt::ExperimentBundle;
use crate::dgn::Cbt;
use crate::error::{Error, Result};
use crate::graphdata::MultiViewNetwork;
use crate::io;
use crate::linalg::{cholesky_solve, frobenius_norm, Matrix};
use crate::reservoir::ImageSequence;

/// Mean Frobenius distance between a template and every (subject, view)
/// pair of a held-out set. Unlike the training loss, no per-view scaling
/// enters here.
pub fn centeredness(cbt: &Cbt, test: &[MultiViewNetwork]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Protocol(
            "centeredness needs at least one test subject".into(),
        ));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for subject in test {
        for view in subject.views() {
            let delta = cbt.matrix().sub(view)?;
            total += frobenius_norm(&delta)?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Node strength: the row sums of the weight matrix.
pub fn node_strength(cbt: &Cbt) -> Vec<f64> {
    let m = cbt.matrix();
    (0..m.rows()).map(|i| m.row(i).iter().sum()).collect()
}

/// Squared-entry Laplacian energy `sum_i s_i^2 + 2 sum_{i<j} w_ij^2`,
/// skipping any node in `dropped` together with its incident edges.
fn laplacian_energy_without(m: &Matrix, dropped: Option<usize>) -> f64 {
    let n = m.rows();
    let mut energy = 0.0;
    for i in 0..n {
        if dropped == Some(i) {
            continue;
        }
        let mut strength = 0.0;
        for j in 0..n {
            if dropped == Some(j) {
                continue;
            }
            let w = m[(i, j)];
            strength += w;
            if j > i {
                energy += 2.0 * w * w;
            }
        }
        energy += strength * strength;
    }
    energy
}

/// Laplacian centrality: the relative drop in Laplacian energy when a node
/// and its incident edges are removed, `LC_i = (E - E_i) / E`.
pub fn laplacian_centrality(cbt: &Cbt) -> Result<Vec<f64>> {
    let m = cbt.matrix();
    let full = laplacian_energy_without(m, None);
    if full <= 0.0 {
        return Err(Error::DegenerateGraph(
            "Laplacian centrality of an edgeless graph".into(),
        ));
    }
    Ok((0..m.rows())
        .map(|i| (full - laplacian_energy_without(m, Some(i))) / full)
        .collect())
}

/// Breadth-first reachability over nonzero edges.
fn is_connected(m: &Matrix) -> bool {
    let n = m.rows();
    let mut seen = vec![false; n];
    let mut queue = vec![0usize];
    seen[0] = true;
    while let Some(i) = queue.pop() {
        for j in 0..n {
            if !seen[j] && m[(i, j)] > 0.0 {
                seen[j] = true;
                queue.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Information centrality of a connected weighted graph. With
/// `B = (L + J)^{-1}` (Laplacian plus all-ones), node i scores
/// `I_i = 1 / (B_ii + (trace(B) - 2 R_i) / n)` where `R_i` is B's row sum —
/// equivalently n over the summed effective resistances from i.
pub fn information_centrality(cbt: &Cbt) -> Result<Vec<f64>> {
    let m = cbt.matrix();
    let n = m.rows();
    if n < 2 {
        return Err(Error::DegenerateGraph(
            "information centrality needs at least two nodes".into(),
        ));
    }
    if !is_connected(m) {
        return Err(Error::Connectivity(
            "information centrality of a disconnected graph".into(),
        ));
    }
    let strengths = node_strength(cbt);
    let a = Matrix::from_fn(n, n, |i, j| {
        let lap = if i == j { strengths[i] } else { -m[(i, j)] };
        lap + 1.0
    });
    let b = cholesky_solve(&a, &Matrix::identity(n))?;
    let trace: f64 = (0..n).map(|i| b[(i, i)]).sum();
    Ok((0..n)
        .map(|i| {
            let row_sum: f64 = b.row(i).iter().sum();
            1.0 / (b[(i, i)] + (trace - 2.0 * row_sum) / n as f64)
        })
        .collect())
}

// Lanczos approximation of ln Γ(x) for x > 0 (g = 7, 9 coefficients),
// accurate to ~1e-13 over the range the t-test touches.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    // Reflection is never needed for x > 0.5; the t-test only evaluates
    // ln_gamma at positive half-integers.
    if x < 0.5 {
        // ln Γ(x) = ln(π / sin(πx)) − ln Γ(1 − x)
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (z + i as f64 + 1.0);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the regularized incomplete beta (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> Result<f64> {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::Convergence {
        last_estimate: h,
        iterations: MAX_ITER,
    })
}

/// Regularized incomplete beta function I_x(a, b).
fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x >= 1.0 {
        return Ok(1.0);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_continued_fraction(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_continued_fraction(b, a, 1.0 - x)? / b)
    }
}

/// Two-tailed paired t-test. Returns `(t, p)` with `t` carrying the sign of
/// `mean(a - b)` and `p = P(|T_{n-1}| >= |t|)` computed through the
/// regularized incomplete beta. A (numerically) constant difference has no
/// variance to test against and errors instead of fabricating a p-value.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::DegenerateTest(format!(
            "need at least 2 pairs, got {n}"
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    // Relative floor: a constant difference vector can acquire ~1e-16-level
    // variance from the mean subtraction alone.
    if var == 0.0 || var <= mean * mean * 1e-24 {
        return Err(Error::DegenerateTest(
            "difference variance is zero; the pairs are constant offsets".into(),
        ));
    }
    let t = mean / (var / n as f64).sqrt();
    let nu = (n - 1) as f64;
    let p = regularized_incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t))?;
    Ok((t, p.clamp(0.0, 1.0)))
}

/// The three per-node topology profiles of one template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyVectors {
    pub node_strength: Vec<f64>,
    pub laplacian_centrality: Vec<f64>,
    pub information_centrality: Vec<f64>,
}

pub fn topology_vectors(cbt: &Cbt) -> Result<TopologyVectors> {
    Ok(TopologyVectors {
        node_strength: node_strength(cbt),
        laplacian_centrality: laplacian_centrality(cbt)?,
        information_centrality: information_centrality(cbt)?,
    })
}

/// Per-fold metric values for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEval {
    pub label: String,
    pub centeredness: Vec<f64>,
    pub vis_mc: Vec<f64>,
    pub topology: Vec<TopologyVectors>,
}

/// Outcome of one paired comparison; `t`/`p` are absent when the
/// differences had no variance to test against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTest {
    pub metric: String,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub degenerate: bool,
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Full evaluation output, serializable as JSON and flattenable to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub folds: usize,
    /// What the t-tests pair over.
    pub pairing: String,
    pub lags: Vec<usize>,
    pub score_window: (usize, usize),
    pub method: MethodEval,
    pub baseline: MethodEval,
    /// Topology of the mean network over every test subject's views.
    pub reference_topology: TopologyVectors,
    pub tests: Vec<ComparisonTest>,
}

fn eval_one_method(
    label: &str,
    bundles: &[&ExperimentBundle],
    test_sets: &[Vec<MultiViewNetwork>],
    images: &ImageSequence,
    lags: &[usize],
    window: &Range<usize>,
) -> Result<MethodEval> {
    let mut cent = Vec::with_capacity(bundles.len());
    let mut vis = Vec::with_capacity(bundles.len());
    let mut topo = Vec::with_capacity(bundles.len());
    for (bundle, test) in bundles.iter().zip(test_sets) {
        cent.push(centeredness(&bundle.refined_cbt, test)?);
        let esn = bundle.esn_checkpoint.clone().into_network()?;
        vis.push(esn.vis_mc_windowed(images, lags, window.clone())?);
        topo.push(topology_vectors(&bundle.refined_cbt)?);
    }
    Ok(MethodEval {
        label: label.to_string(),
        centeredness: cent,
        vis_mc: vis,
        topology: topo,
    })
}

fn run_paired_test(metric: &str, a: &[f64], b: &[f64]) -> Result<ComparisonTest> {
    match paired_t_test(a, b) {
        Ok((t, p)) => Ok(ComparisonTest {
            metric: metric.to_string(),
            t: Some(t),
            p: Some(p),
            degenerate: false,
        }),
        Err(Error::DegenerateTest(_)) => Ok(ComparisonTest {
            metric: metric.to_string(),
            t: None,
            p: None,
            degenerate: true,
        }),
        Err(e) => Err(e),
    }
}

/// Scores method and baseline bundles fold by fold — centeredness on each
/// fold's held-out subjects, windowed recall capacity on shared images —
/// computes topology profiles (plus a reference profile of the mean test
/// network), and pairs the two methods across folds with t-tests.
pub fn evaluate_experiment(
    method: &[&ExperimentBundle],
    baseline: &[&ExperimentBundle],
    test_sets: &[Vec<MultiViewNetwork>],
    images: &ImageSequence,
    lags: &[usize],
    score_window: Range<usize>,
) -> Result<EvalReport> {
    let folds = method.len();
    if folds == 0 {
        return Err(Error::Protocol("no folds to evaluate".into()));
    }
    if baseline.len() != folds || test_sets.len() != folds {
        return Err(Error::Protocol(format!(
            "fold mismatch: {folds} method bundles, {} baseline bundles, {} test sets",
            baseline.len(),
            test_sets.len()
        )));
    }
    if test_sets.iter().any(|t| t.is_empty()) {
        return Err(Error::Protocol("a fold has an empty test set".into()));
    }

    let method_eval = eval_one_method("method", method, test_sets, images, lags, &score_window)?;
    let baseline_eval =
        eval_one_method("baseline", baseline, test_sets, images, lags, &score_window)?;

    // Mean network across every held-out subject's views.
    let n = test_sets[0][0].n_regions();
    let mut mean = Matrix::zeros(n, n);
    let mut count = 0usize;
    for test in test_sets {
        for subject in test {
            for view in subject.views() {
                mean = mean.add(view)?;
                count += 1;
            }
        }
    }
    let reference_topology = topology_vectors(&Cbt::new(mean.scale(1.0 / count as f64))?)?;

    let tests = vec![
        run_paired_test(
            "centeredness",
            &method_eval.centeredness,
            &baseline_eval.centeredness,
        )?,
        run_paired_test("vis_mc", &method_eval.vis_mc, &baseline_eval.vis_mc)?,
    ];

    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        folds,
        pairing: "folds".to_string(),
        lags: lags.to_vec(),
        score_window: (score_window.start, score_window.end),
        method: method_eval,
        baseline: baseline_eval,
        reference_topology,
        tests,
    })
}

fn push_rows(rows: &mut String, fold: &str, method: &str, topo: &TopologyVectors) {
    for (name, vec) in [
        ("node_strength", &topo.node_strength),
        ("laplacian_centrality", &topo.laplacian_centrality),
        ("information_centrality", &topo.information_centrality),
    ] {
        for (i, v) in vec.iter().enumerate() {
            rows.push_str(&format!("{fold},{name}_{i},{method},{v:.16e}\n"));
        }
    }
}

/// Flattens a report to `fold,metric,method,value` rows; reference-topology
/// rows leave the fold column empty.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out = String::from("fold,metric,method,value\n");
    for side in [&report.method, &report.baseline] {
        for f in 0..report.folds {
            out.push_str(&format!(
                "{f},centeredness,{},{:.16e}\n",
                side.label, side.centeredness[f]
            ));
            out.push_str(&format!(
                "{f},vis_mc,{},{:.16e}\n",
                side.label, side.vis_mc[f]
            ));
            push_rows(&mut out, &f.to_string(), &side.label, &side.topology[f]);
        }
    }
    push_rows(&mut out, "", "reference", &report.reference_topology);
    out
}

/// Writes `report.json` and `report.csv` into an existing directory.
pub fn save_report(dir: &std::path::Path, report: &EvalReport) -> Result<()> {
    io::save_json(&dir.join("report.json"), report)?;
    std::fs::write(dir.join("report.csv"), report_to_csv(report))
        .map_err(|e| Error::io(dir.join("report.csv"), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coopt::{co_train, CooptConfig, SelectionMode};
    use crate::dgn::{cbt_from_embeddings, TrainConfig};
    use crate::graphdata::{generate_synthetic_population, SynthConfig};
    use crate::linalg::{invert, RngSeed};
    use crate::reservoir::{random_image_sequence, EsnConfig};

    fn cbt_from(rows: &[Vec<f64>]) -> Cbt {
        Cbt::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn random_cbt(n: usize, seed: u64) -> Cbt {
        let mut rng = seed_rng(seed);
        cbt_from_embeddings(&Matrix::from_fn(n, 3, |_, _| {
            rand::Rng::gen_range(&mut rng, -1.0..1.0)
        }))
    }

    fn seed_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        RngSeed(seed).rng()
    }

    #[test]
    fn centeredness_zero_for_matching_view() {
        let view = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let subject = MultiViewNetwork::new("s0", "a", vec![view.clone()]).unwrap();
        let cbt = Cbt::new(view).unwrap();
        assert_eq!(centeredness(&cbt, &[subject]).unwrap(), 0.0);
    }

    #[test]
    fn centeredness_of_zero_template_is_mean_view_norm() {
        let mut rng = seed_rng(500);
        let subjects: Vec<MultiViewNetwork> = (0..2)
            .map(|s| {
                let views: Vec<Matrix> = (0..2)
                    .map(|_| {
                        let mut m = Matrix::zeros(4, 4);
                        for i in 0..4 {
                            for j in i + 1..4 {
                                let w = rand::Rng::gen_range(&mut rng, 0.0..1.0);
                                m[(i, j)] = w;
                                m[(j, i)] = w;
                            }
                        }
                        m
                    })
                    .collect();
                MultiViewNetwork::new(format!("s{s}"), "a", views).unwrap()
            })
            .collect();
        let zero = Cbt::new(Matrix::zeros(4, 4)).unwrap();
        let got = centeredness(&zero, &subjects).unwrap();
        let want: f64 = subjects
            .iter()
            .flat_map(|s| s.views())
            .map(|v| frobenius_norm(v).unwrap())
            .sum::<f64>()
            / 4.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn centeredness_matches_flat_loop_oracle() {
        let mut rng = seed_rng(501);
        let cbt = random_cbt(5, 502);
        let subjects: Vec<MultiViewNetwork> = (0..2)
            .map(|s| {
                let views: Vec<Matrix> = (0..2)
                    .map(|_| {
                        let mut m = Matrix::zeros(5, 5);
                        for i in 0..5 {
                            for j in i + 1..5 {
                                let w = rand::Rng::gen_range(&mut rng, 0.0..2.0);
                                m[(i, j)] = w;
                                m[(j, i)] = w;
                            }
                        }
                        m
                    })
                    .collect();
                MultiViewNetwork::new(format!("s{s}"), "a", views).unwrap()
            })
            .collect();

        let mut acc = 0.0;
        let mut pairs = 0;
        for s in &subjects {
            for v in s.views() {
                let mut sq = 0.0;
                for i in 0..5 {
                    for j in 0..5 {
                        let d = cbt.matrix()[(i, j)] - v[(i, j)];
                        sq += d * d;
                    }
                }
                acc += sq.sqrt();
                pairs += 1;
            }
        }
        let want = acc / pairs as f64;
        assert!((centeredness(&cbt, &subjects).unwrap() - want).abs() < 1e-12);
        assert!(matches!(centeredness(&cbt, &[]), Err(Error::Protocol(_))));
    }

    #[test]
    fn node_strength_cases() {
        let zero = Cbt::new(Matrix::zeros(3, 3)).unwrap();
        assert_eq!(node_strength(&zero), vec![0.0; 3]);

        let complete =
            Cbt::new(Matrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 })).unwrap();
        assert_eq!(node_strength(&complete), vec![3.0; 4]);

        let c = random_cbt(6, 503);
        let by_rows = node_strength(&c);
        let t = Cbt::new(c.matrix().transpose()).unwrap();
        assert_eq!(by_rows, node_strength(&t));
    }

    #[test]
    fn laplacian_centrality_two_node_and_star() {
        let two = cbt_from(&[vec![0.0, 0.7], vec![0.7, 0.0]]);
        assert_eq!(laplacian_centrality(&two).unwrap(), vec![1.0, 1.0]);

        // 4-node star, unit weights, center node 0: full energy 18, leaf
        // removal leaves 10.
        let star = Cbt::new(Matrix::from_fn(4, 4, |i, j| {
            if (i == 0) != (j == 0) {
                1.0
            } else {
                0.0
            }
        }))
        .unwrap();
        let lc = laplacian_centrality(&star).unwrap();
        assert_eq!(lc[0], 1.0);
        for leaf in 1..4 {
            assert!((lc[leaf] - 4.0 / 9.0).abs() < 1e-15);
            assert!(lc[0] > lc[leaf]);
        }

        let complete =
            Cbt::new(Matrix::from_fn(5, 5, |i, j| if i == j { 0.0 } else { 1.0 })).unwrap();
        let lc = laplacian_centrality(&complete).unwrap();
        for &v in &lc {
            assert_eq!(v, lc[0]);
        }

        let zero = Cbt::new(Matrix::zeros(3, 3)).unwrap();
        assert!(matches!(
            laplacian_centrality(&zero),
            Err(Error::DegenerateGraph(_))
        ));
    }

    /// Effective resistance between i and j from the grounded Laplacian
    /// (last node grounded), an independent path to the same quantity the
    /// implementation reaches through (L + J)^{-1}.
    fn resistance_oracle(m: &Matrix) -> Matrix {
        let n = m.rows();
        let g = n - 1;
        let reduced = Matrix::from_fn(n - 1, n - 1, |i, j| {
            if i == j {
                m.row(i).iter().sum::<f64>()
            } else {
                -m[(i, j)]
            }
        });
        let inv = invert(&reduced).unwrap();
        Matrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else if j == g {
                inv[(i, i)]
            } else if i == g {
                inv[(j, j)]
            } else {
                inv[(i, i)] + inv[(j, j)] - 2.0 * inv[(i, j)]
            }
        })
    }

    fn information_centrality_oracle(m: &Matrix) -> Vec<f64> {
        let r = resistance_oracle(m);
        let n = m.rows();
        (0..n)
            .map(|i| n as f64 / r.row(i).iter().sum::<f64>())
            .collect()
    }

    #[test]
    fn information_centrality_path_graph_exact() {
        // Unit path 0-1-2: resistances R(0,1)=R(1,2)=1, R(0,2)=2, so
        // I = (1, 1.5, 1).
        let path = cbt_from(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
        ]);
        let ic = information_centrality(&path).unwrap();
        assert!((ic[0] - 1.0).abs() < 1e-12, "{ic:?}");
        assert!((ic[1] - 1.5).abs() < 1e-12, "{ic:?}");
        assert!((ic[2] - 1.0).abs() < 1e-12, "{ic:?}");
        assert!(ic[1] > ic[0] && ic[1] > ic[2]);
    }

    #[test]
    fn information_centrality_matches_resistance_oracle() {
        for seed in 504..509 {
            let c = random_cbt(7, seed);
            let got = information_centrality(&c).unwrap();
            let want = information_centrality_oracle(c.matrix());
            for (g, w) in got.iter().zip(&want) {
                assert!(
                    (g - w).abs() < 1e-8 * w.abs().max(1.0),
                    "{got:?} vs {want:?}"
                );
            }
        }
    }

    #[test]
    fn information_centrality_scales_linearly_with_weights() {
        let c = random_cbt(6, 510);
        let base = information_centrality(&c).unwrap();
        let scaled = Cbt::new(c.matrix().scale(3.7)).unwrap();
        let got = information_centrality(&scaled).unwrap();
        for (g, b) in got.iter().zip(&base) {
            assert!((g - 3.7 * b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn information_centrality_complete_graph_symmetric() {
        let complete =
            Cbt::new(Matrix::from_fn(5, 5, |i, j| if i == j { 0.0 } else { 2.0 })).unwrap();
        let ic = information_centrality(&complete).unwrap();
        for &v in &ic {
            assert!((v - ic[0]).abs() < 1e-12);
            assert!(v > 0.0);
        }
    }

    #[test]
    fn information_centrality_rejects_disconnected_and_trivial() {
        let disconnected = cbt_from(&[
            vec![0.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ]);
        assert!(matches!(
            information_centrality(&disconnected),
            Err(Error::Connectivity(_))
        ));
        let single = Cbt::new(Matrix::zeros(1, 1)).unwrap();
        assert!(matches!(
            information_centrality(&single),
            Err(Error::DegenerateGraph(_))
        ));
    }

    #[test]
    fn centralities_are_permutation_equivariant() {
        let c = random_cbt(6, 511);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted =
            Cbt::new(Matrix::from_fn(6, 6, |i, j| c.matrix()[(perm[i], perm[j])])).unwrap();
        let lc = laplacian_centrality(&c).unwrap();
        let lcp = laplacian_centrality(&permuted).unwrap();
        let ic = information_centrality(&c).unwrap();
        let icp = information_centrality(&permuted).unwrap();
        for i in 0..6 {
            assert!((lcp[i] - lc[perm[i]]).abs() < 1e-12);
            assert!((icp[i] - ic[perm[i]]).abs() < 1e-9);
        }
    }

    /// Student-t two-tailed p by Simpson quadrature of the density, with
    /// the normalizing constant from exact half-integer gamma values.
    fn t_two_tailed_quadrature(t: f64, nu: u32) -> f64 {
        // c = Γ((ν+1)/2) / (√(νπ) Γ(ν/2)) with both gammas expanded
        // exactly: Γ(n) = (n−1)!, Γ(n + 1/2) = (2n−1)!! √π / 2^n.
        fn factorial(n: u32) -> f64 {
            (1..=n).map(f64::from).product()
        }
        fn double_factorial(n: u32) -> f64 {
            let mut acc = 1.0;
            let mut k = n;
            while k > 1 {
                acc *= f64::from(k);
                k -= 2;
            }
            acc
        }
        let pi = std::f64::consts::PI;
        let c = if nu % 2 == 0 {
            // ν=2m: Γ((2m+1)/2) = (2m−1)!!√π/2^m, Γ(m) = (m−1)!
            let m = nu / 2;
            double_factorial(2 * m - 1) * pi.sqrt()
                / 2f64.powi(m as i32)
                / ((f64::from(nu) * pi).sqrt() * factorial(m - 1))
        } else {
            // ν=2m+1: Γ(m+1) = m!, Γ((2m+1)/2) = (2m−1)!!√π/2^m
            let m = (nu - 1) / 2;
            factorial(m)
                / ((f64::from(nu) * pi).sqrt()
                    * (double_factorial(2 * m - 1) * pi.sqrt() / 2f64.powi(m as i32)))
        };
        let density = |x: f64| c * (1.0 + x * x / f64::from(nu)).powf(-(f64::from(nu) + 1.0) / 2.0);
        // Simpson over [0, |t|].
        let hi = t.abs();
        let steps = 40_000usize;
        let h = hi / steps as f64;
        let mut acc = density(0.0) + density(hi);
        for k in 1..steps {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * density(h * k as f64);
        }
        let integral = acc * h / 3.0;
        1.0 - 2.0 * integral
    }

    #[test]
    fn paired_t_test_matches_quadrature_oracle() {
        let cases: Vec<(Vec<f64>, Vec<f64>)> = vec![
            // n = 3 → ν = 2
            (vec![1.0, 2.0, 3.5], vec![0.5, 2.2, 2.9]),
            // n = 5 → ν = 4
            (vec![1.0, 2.0, 3.0, 4.0, 5.5], vec![1.1, 1.7, 3.2, 3.6, 5.0]),
            // n = 10 → ν = 9
            (
                (0..10).map(|i| (i as f64 * 0.37).sin()).collect(),
                (0..10)
                    .map(|i| (i as f64 * 0.37).sin() * 0.8 + 0.05)
                    .collect(),
            ),
            // n = 30 → ν = 29
            (
                (0..30)
                    .map(|i| (i as f64 * 0.11).cos() + i as f64 * 0.01)
                    .collect(),
                (0..30).map(|i| (i as f64 * 0.13).cos()).collect(),
            ),
        ];
        for (a, b) in cases {
            let nu = (a.len() - 1) as u32;
            let (t, p) = paired_t_test(&a, &b).unwrap();
            let want = t_two_tailed_quadrature(t, nu);
            assert!(
                (p - want).abs() < 1e-6,
                "nu={nu}: p={p} vs quadrature {want} (t={t})"
            );
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn paired_t_test_antisymmetric_and_degenerate() {
        let a = vec![1.0, 2.0, 3.0, 5.0];
        let b = vec![0.5, 2.5, 2.0, 4.0];
        let (t_ab, p_ab) = paired_t_test(&a, &b).unwrap();
        let (t_ba, p_ba) = paired_t_test(&b, &a).unwrap();
        assert_eq!(t_ab, -t_ba);
        assert_eq!(p_ab, p_ba);

        // Identical samples: zero variance.
        assert!(matches!(
            paired_t_test(&a, &a),
            Err(Error::DegenerateTest(_))
        ));
        // Constant nonzero shift: still zero variance.
        let shifted: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!(matches!(
            paired_t_test(&shifted, &a),
            Err(Error::DegenerateTest(_))
        ));
        // Too small.
        assert!(matches!(
            paired_t_test(&[1.0], &[2.0]),
            Err(Error::DegenerateTest(_))
        ));
        assert!(matches!(
            paired_t_test(&[1.0, 2.0], &[2.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn paired_t_test_zero_t_gives_p_one() {
        // Antisymmetric differences with mean exactly zero.
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![2.0, 1.0, 4.0, 3.0];
        let (t, p) = paired_t_test(&a, &b).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(p, 1.0);
    }

    fn tiny_bundles(
        seed: u64,
        selection: SelectionMode,
    ) -> (
        Vec<ExperimentBundle>,
        Vec<Vec<MultiViewNetwork>>,
        ImageSequence,
        Vec<usize>,
    ) {
        let synth = generate_synthetic_population(
            &SynthConfig {
                n_subjects: 6,
                n_regions: 6,
                n_views: 2,
                classes: 2,
                noise_sigma: 0.1,
                view_scales: vec![1.0, 0.5],
            },
            RngSeed(seed),
        )
        .unwrap();
        let pop = synth.population;
        let images = random_image_sequence(12, 3, 3, RngSeed(seed ^ 1)).unwrap();
        let lags = vec![1, 2];
        let cfg = CooptConfig {
            dgn_cfg: TrainConfig {
                epochs: 3,
                subset_size: 2,
                layer_dims: vec![6, 3],
                seed: RngSeed(seed ^ 2),
                ..TrainConfig::default()
            },
            esn_cfg: EsnConfig {
                n_transient: 5,
                tau_max: 4,
                seed: RngSeed(seed ^ 3),
                ..EsnConfig::default()
            },
            readout_refit_every: 2,
            selection,
            lags: lags.clone(),
        };
        let folds =
            crate::graphdata::kfold_split(&pop.subject_ids(), 2, RngSeed(seed ^ 4)).unwrap();
        let mut bundles = Vec::new();
        let mut test_sets = Vec::new();
        for fold in &folds {
            let train: Vec<MultiViewNetwork> = pop
                .select(&fold.train_ids)
                .unwrap()
                .into_iter()
                .cloned()
                .collect();
            let train_pop =
                crate::graphdata::Population::new(train, pop.view_names().to_vec()).unwrap();
            bundles.push(co_train(&train_pop, &images, &cfg).unwrap());
            test_sets.push(
                pop.select(&fold.test_ids)
                    .unwrap()
                    .into_iter()
                    .cloned()
                    .collect(),
            );
        }
        (bundles, test_sets, images, lags)
    }

    #[test]
    fn evaluate_experiment_self_comparison_is_degenerate() {
        let (bundles, test_sets, images, lags) = tiny_bundles(520, SelectionMode::CombinedLoss);
        let refs: Vec<&ExperimentBundle> = bundles.iter().collect();
        let report = evaluate_experiment(&refs, &refs, &test_sets, &images, &lags, 8..12).unwrap();
        assert_eq!(report.folds, 2);
        assert_eq!(report.method.centeredness, report.baseline.centeredness);
        assert_eq!(report.method.vis_mc, report.baseline.vis_mc);
        for test in &report.tests {
            assert!(test.degenerate, "{test:?}");
            assert!(test.t.is_none() && test.p.is_none());
        }
        for f in 0..2 {
            assert_eq!(
                report.method.topology[f].node_strength.len(),
                report.reference_topology.node_strength.len()
            );
        }
    }

    #[test]
    fn evaluate_experiment_distinct_methods_and_report_round_trip() {
        let (bundles, test_sets, images, lags) = tiny_bundles(521, SelectionMode::CombinedLoss);
        let (others, _, _, _) = tiny_bundles(521, SelectionMode::GnnLoss);
        let refs: Vec<&ExperimentBundle> = bundles.iter().collect();
        let other_refs: Vec<&ExperimentBundle> = others.iter().collect();
        let report =
            evaluate_experiment(&refs, &other_refs, &test_sets, &images, &lags, 8..12).unwrap();
        for test in &report.tests {
            if let (Some(_), Some(p)) = (test.t, test.p) {
                assert!((0.0..=1.0).contains(&p));
            }
        }

        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);

        let csv = report_to_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "fold,metric,method,value");
        // 2 methods × 2 folds × (2 scalar + 3×6 topology) + 18 reference rows.
        assert_eq!(lines.len(), 1 + 2 * 2 * 20 + 18);

        // Fold mismatch is a protocol error.
        assert!(matches!(
            evaluate_experiment(&refs, &other_refs[..1], &test_sets, &images, &lags, 8..12),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn save_report_writes_both_files() {
        let (bundles, test_sets, images, lags) = tiny_bundles(522, SelectionMode::CombinedLoss);
        let refs: Vec<&ExperimentBundle> = bundles.iter().collect();
        let report = evaluate_experiment(&refs, &refs, &test_sets, &images, &lags, 8..12).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_report(dir.path(), &report).unwrap();
        let loaded: EvalReport = io::load_json(&dir.path().join("report.json")).unwrap();
        assert_eq!(loaded, report);
        assert!(dir.path().join("report.csv").is_file());
    }
}

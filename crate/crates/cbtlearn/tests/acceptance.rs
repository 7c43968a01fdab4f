//! Acceptance gate: ten end-to-end properties the finished library and
//! binary must satisfy, each asserted by one test that prints a single
//! PASS/FAIL line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! The checks are oracle-based: analytic gradients against central finite
//! differences, medians against per-entry sorts, recall losses against
//! plain two-loop accumulation, p-values against quadrature of the exact
//! density, plus determinism and format round-trips through the real CLI.

mod common;

use std::ops::Range;
use std::time::Instant;

use rand::Rng;

use cbtlearn::dgn::{
    cbt_from_embeddings, centeredness_loss, ecc_forward, loss_gradients, Cbt, EccDims, EccNetwork,
};
use cbtlearn::eval::{centeredness, paired_t_test};
use cbtlearn::graphdata::{
    compute_view_normalizers, generate_synthetic_population, MultiViewNetwork, SynthConfig,
};
use cbtlearn::io::{downsample_mean, read_idx_images, write_idx_images};
use cbtlearn::linalg::{spectral_radius, Matrix, RngSeed};
use cbtlearn::reservoir::{
    build_reservoir_from_connectome, random_image_sequence, vis_mc_from_predictions,
    EchoStateNetwork, EsnConfig, ImageSequence, UpdateRule,
};

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    let v = if ok { "PASS" } else { "FAIL" };
    println!("criterion {n:>2} ({name}): {v} — {detail}");
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn random_symmetric(n: usize, rng: &mut impl Rng) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.gen_range(0.05..1.5);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn random_subjects(
    n_s: usize,
    n_r: usize,
    n_v: usize,
    rng: &mut impl Rng,
) -> Vec<MultiViewNetwork> {
    (0..n_s)
        .map(|s| {
            let views = (0..n_v).map(|_| random_symmetric(n_r, rng)).collect();
            MultiViewNetwork::new(format!("s{s}"), "c", views).expect("valid random views")
        })
        .collect()
}

fn random_template(n: usize, rng: &mut impl Rng) -> Cbt {
    let emb = Matrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
    cbt_from_embeddings(&emb)
}

// --- 1: analytic gradients match central finite differences -------------

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let started = Instant::now();
    let mut rng = RngSeed(9001).rng();
    let h = 1e-5;
    let mut checked = 0usize;
    let mut live = 0usize;
    let mut worst = 0.0f64;
    let mut worst_noise = 0.0f64;
    let mut above_noise = 0usize;
    for _ in 0..50 {
        let n_r = rng.gen_range(4..=8);
        let n_v = rng.gen_range(1..=3);
        let input_dim = rng.gen_range(1..=4);
        let depth = rng.gen_range(1..=3);
        let layer_dims: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=4)).collect();
        let filter_hidden = if rng.gen_bool(0.5) {
            Some(rng.gen_range(1..=3))
        } else {
            None
        };
        let dims = EccDims {
            n_views: n_v,
            input_dim,
            layer_dims,
            filter_hidden,
        };

        let subjects = random_subjects(rng.gen_range(3..=5), n_r, n_v, &mut rng);
        let refs: Vec<&MultiViewNetwork> = subjects.iter().collect();
        let normalizers = compute_view_normalizers(&refs).unwrap();
        let features = Matrix::from_fn(n_r, input_dim, |_, _| rng.gen_range(-1.0..1.0));
        let mut net = EccNetwork::init(dims, RngSeed(rng.gen())).unwrap();

        let (_, grad) = loss_gradients(&net, refs[0], &refs, &normalizers, &features).unwrap();
        for idx in 0..net.n_params() {
            let orig = net.param(idx);
            let mut probe = |value: f64| -> f64 {
                net.set_param(idx, value);
                let emb = ecc_forward(&net, refs[0], &features).unwrap();
                let cbt = cbt_from_embeddings(&emb);
                centeredness_loss(cbt.matrix(), &refs, &normalizers).unwrap()
            };
            let plus = probe(orig + h);
            let minus = probe(orig - h);
            let fd = (plus - minus) / (2.0 * h);
            net.set_param(idx, orig);
            // Central differencing of a loss L carries cancellation noise
            // of order eps·|L|/(2h); differences inside that resolution
            // are indistinguishable from an exact match (this is what a
            // parameter with a genuinely zero gradient produces).
            let noise = 32.0 * f64::EPSILON * plus.abs().max(minus.abs()) / (2.0 * h);
            let diff = (fd - grad[idx]).abs();
            if diff <= noise {
                worst_noise = worst_noise.max(diff / noise.max(f64::MIN_POSITIVE));
            } else {
                let rel = diff / fd.abs().max(grad[idx].abs()).max(1e-8);
                worst = worst.max(rel);
                above_noise += 1;
            }
            checked += 1;
            if grad[idx].abs() > 1e-12 {
                live += 1;
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let ok = worst < 1e-4 && live > checked / 4 && elapsed < 30.0;
    verdict(
        1,
        "analytic gradients match finite differences",
        ok,
        &format!(
            "50 instances, {checked} parameters ({live} with nonzero gradient): \
             {above_noise} differences exceeded the probe's cancellation-noise \
             resolution (worst relative error {worst:.1e} vs bound 1e-4); the rest \
             peaked at {worst_noise:.2} of that resolution; {elapsed:.1}s"
        ),
    );
}

// --- 2: template construction invariants --------------------------------

#[test]
fn criterion_02_template_construction_invariants() {
    let mut rng = RngSeed(9002).rng();
    let mut worst_slack = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=10);
        let d = rng.gen_range(1..=6);
        let emb = Matrix::from_fn(n, d, |_, _| rng.gen_range(-5.0..5.0));
        let c = cbt_from_embeddings(&emb).into_matrix();
        let scale = c.max_abs();
        for i in 0..n {
            assert_eq!(c[(i, i)], 0.0, "diagonal must be exactly zero");
            for j in 0..n {
                assert_eq!(c[(i, j)], c[(j, i)], "symmetry must be exact");
                assert!(c[(i, j)] >= 0.0, "distances are nonnegative");
                for k in 0..n {
                    let slack = c[(i, j)] - c[(i, k)] - c[(k, j)];
                    worst_slack = worst_slack.max(slack / scale.max(1.0));
                    assert!(
                        slack <= 1e-12 * scale.max(1.0),
                        "triangle inequality violated at ({i},{j},{k}) by {slack}"
                    );
                }
            }
        }
    }
    verdict(
        2,
        "pairwise-distance template invariants",
        true,
        &format!(
            "1000 embeddings: exact symmetry/diagonal, worst triangle slack {worst_slack:.2e}"
        ),
    );
}

// --- 3: reservoir conditioning and fading memory -------------------------

#[test]
fn criterion_03_reservoir_conditioning_and_fading_memory() {
    let mut rng = RngSeed(9003).rng();
    let mut worst_radius_err = 0.0f64;
    for _ in 0..5 {
        let cbt = random_template(35, &mut rng);
        let cfg = EsnConfig {
            seed: RngSeed(rng.gen()),
            ..EsnConfig::default()
        };
        let esn = build_reservoir_from_connectome(&cbt, &cfg, 100).unwrap();
        let rho = spectral_radius(esn.w_res(), 1e-13, 20_000).unwrap();
        worst_radius_err = worst_radius_err.max((rho - 0.98).abs());
    }

    // Fading memory: with the recurrent rule at spectral radius 0.9, two
    // trajectories driven by the same inputs from different initial states
    // must merge.
    let cbt = random_template(35, &mut rng);
    let cfg = EsnConfig {
        spectral_radius: 0.9,
        update_rule: UpdateRule::Leaky,
        leakage: 1.0,
        input_scaling: 0.5,
        seed: RngSeed(77),
        ..EsnConfig::default()
    };
    let drive = random_image_sequence(200, 5, 4, RngSeed(78)).unwrap();
    let mut a: EchoStateNetwork = build_reservoir_from_connectome(&cbt, &cfg, 20).unwrap();
    let mut b = a.clone();
    let init_a: Vec<f64> = (0..35).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let init_b: Vec<f64> = (0..35).map(|_| rng.gen_range(-1.0..1.0)).collect();
    a.set_state(&init_a).unwrap();
    b.set_state(&init_b).unwrap();
    let mut dist = f64::INFINITY;
    let mut steps = 0usize;
    for t in 0..200 {
        let frame = drive.frame(t).as_slice().to_vec();
        a.step(&frame).unwrap();
        b.step(&frame).unwrap();
        dist = a
            .state()
            .iter()
            .zip(b.state())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        steps = t + 1;
        if dist < 1e-8 {
            break;
        }
    }
    let ok = worst_radius_err < 1e-8 && dist < 1e-8;
    verdict(
        3,
        "reservoir conditioning and fading memory",
        ok,
        &format!(
            "spectral radius within {worst_radius_err:.2e} of 0.98; \
             trajectories {dist:.2e} apart after {steps} steps"
        ),
    );
}

// --- 4: recall capacity bounds and oracles -------------------------------

#[test]
fn criterion_04_recall_capacity_bounds_and_oracles() {
    // Perfect recall scores exactly one point per lag.
    let lags = [5, 9, 17, 23];
    let seq = random_image_sequence(100, 6, 6, RngSeed(9104)).unwrap();
    let cbt = random_template(30, &mut RngSeed(9004).rng());
    let mut esn = build_reservoir_from_connectome(
        &cbt,
        &EsnConfig {
            seed: RngSeed(5),
            ..EsnConfig::default()
        },
        36,
    )
    .unwrap();
    esn.train_readouts(&seq, &lags).unwrap();
    let samples = esn.windowed_samples(&seq, &lags, 30..100).unwrap();
    let perfect: Vec<(Matrix, Matrix)> = samples
        .iter()
        .map(|(_, (_, truth))| (truth.clone(), truth.clone()))
        .collect();
    let oracle_score = vis_mc_from_predictions(&perfect);
    let oracle_exact = oracle_score == lags.len() as f64;

    // Shuffling the truth frames in time destroys recall.
    let mut worst_null = 0.0f64;
    for null_seed in 0..3u64 {
        let mut rng = RngSeed(9204 + null_seed).rng();
        for (_, (preds, truths)) in &samples {
            let mut order: Vec<usize> = (0..truths.rows()).collect();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let mut shuffled = Matrix::zeros(truths.rows(), truths.cols());
            for (row, &src) in order.iter().enumerate() {
                shuffled.row_mut(row).copy_from_slice(truths.row(src));
            }
            let r2 = cbtlearn::reservoir::r_squared_per_pair(&[(preds.clone(), shuffled)])[0];
            worst_null = worst_null.max(r2);
        }
    }

    // Capacity always lands in [0, number of lags].
    let mut worst_low = f64::INFINITY;
    let mut worst_high = f64::NEG_INFINITY;
    let mut rng = RngSeed(9304).rng();
    for _ in 0..100 {
        let cbt = random_template(12, &mut rng);
        let cfg = EsnConfig {
            update_rule: UpdateRule::Leaky,
            leakage: 0.8,
            input_scaling: 0.3,
            n_transient: 10,
            tau_max: 3,
            seed: RngSeed(rng.gen()),
            ..EsnConfig::default()
        };
        let seq = random_image_sequence(30, 2, 2, RngSeed(rng.gen())).unwrap();
        let mut esn = build_reservoir_from_connectome(&cbt, &cfg, 4).unwrap();
        esn.train_readouts(&seq, &[1, 2, 3]).unwrap();
        let mc = esn.vis_mc(&seq, &[1, 2, 3]).unwrap();
        worst_low = worst_low.min(mc);
        worst_high = worst_high.max(mc);
    }
    let ok = oracle_exact && worst_null < 0.1 && worst_low >= 0.0 && worst_high <= 3.0;
    verdict(
        4,
        "recall capacity bounds and oracles",
        ok,
        &format!(
            "perfect recall = {oracle_score} (want exactly {}); worst shuffled r² {worst_null:.3}; \
             100 runs stayed in [{worst_low:.3}, {worst_high:.3}] of [0, 3]",
            lags.len()
        ),
    );
}

// --- 5: median refinement oracle and template quality ---------------------

#[test]
fn criterion_05_median_refinement_beats_single_subject_templates() {
    // Exact agreement with a per-entry sort on random stacks.
    let mut rng = RngSeed(9005).rng();
    for case in 0..100 {
        let n = rng.gen_range(2..=8);
        let count = rng.gen_range(1..=7);
        let stack: Vec<Cbt> = (0..count).map(|_| random_template(n, &mut rng)).collect();
        let refined = cbtlearn::coopt::refine_cbt(&stack).unwrap();
        for i in 0..n {
            for j in 0..n {
                let mut vals: Vec<f64> = stack.iter().map(|c| c.matrix()[(i, j)]).collect();
                vals.sort_by(f64::total_cmp);
                let mid = vals.len() / 2;
                let want = if vals.len() % 2 == 1 {
                    vals[mid]
                } else {
                    0.5 * (vals[mid - 1] + vals[mid])
                };
                assert_eq!(
                    refined.matrix()[(i, j)],
                    want,
                    "case {case}: median mismatch at ({i},{j})"
                );
            }
        }
    }

    // The refined median is at least as centered as the best individual
    // view used directly as a template, in nearly every population.
    let mut successes = 0;
    for seed in 0..20u64 {
        let synth = generate_synthetic_population(
            &SynthConfig {
                n_subjects: 6,
                n_regions: 10,
                n_views: 3,
                classes: 1,
                noise_sigma: 0.2,
                view_scales: vec![1.0; 3],
            },
            RngSeed(500 + seed),
        )
        .unwrap();
        let pop = synth.population;
        let all_views: Vec<Cbt> = pop
            .subjects()
            .iter()
            .flat_map(|s| s.views().iter().cloned())
            .map(|v| Cbt::new(v).unwrap())
            .collect();
        let refined = cbtlearn::coopt::refine_cbt(&all_views).unwrap();
        let refined_score = centeredness(&refined, pop.subjects()).unwrap();
        let best_single = all_views
            .iter()
            .map(|v| centeredness(v, pop.subjects()).unwrap())
            .fold(f64::INFINITY, f64::min);
        if refined_score <= best_single {
            successes += 1;
        }
    }
    let ok = successes >= 19;
    verdict(
        5,
        "median refinement oracle and template quality",
        ok,
        &format!(
            "100 stacks match the per-entry sort exactly; \
             median beat every single-view template in {successes}/20 populations (need ≥ 19)"
        ),
    );
}

// --- 6: recall loss and capacity match two-loop oracles -------------------

#[test]
fn criterion_06_recall_numerics_match_two_loop_oracles() {
    // Protocol shape: 15 training and 5 held-out frames of 10x10 pixels,
    // lags 5..=14 (the longest that leave at least one sample).
    let seq = random_image_sequence(20, 10, 10, RngSeed(9006)).unwrap();
    let train = seq.window(0..15).unwrap();
    let lags: Vec<usize> = (5..=14).collect();
    let cbt = random_template(35, &mut RngSeed(9106).rng());
    let cfg = EsnConfig {
        update_rule: UpdateRule::Leaky,
        leakage: 0.9,
        input_scaling: 0.1,
        n_transient: 50,
        tau_max: 14,
        seed: RngSeed(606),
        ..EsnConfig::default()
    };
    let mut esn = build_reservoir_from_connectome(&cbt, &cfg, 100).unwrap();
    let l_cog = esn.train_readouts(&train, &lags).unwrap();

    // Oracle A: the training loss, re-accumulated with plain loops from the
    // harvested states and the fitted readouts.
    let states = esn.harvest_states(&train).unwrap();
    let mut total = 0.0;
    for &lag in &lags {
        let readout = esn.readout(lag).expect("readout was just fitted");
        let mut sq = 0.0;
        let mut samples = 0usize;
        for t in lag..train.len() {
            let truth = train.frame(t - lag);
            for j in 0..train.n_pixels() {
                let mut pred = 0.0;
                for (k, &w) in readout.row(j).iter().enumerate() {
                    pred += w * states[(t, k)];
                }
                let d = pred - truth.as_slice()[j];
                sq += d * d;
            }
            samples += 1;
        }
        total += sq / samples as f64;
    }
    let l_cog_oracle = total / lags.len() as f64;
    let loss_err = (l_cog - l_cog_oracle).abs();

    // Oracle B: held-out capacity, re-derived with two passes — per-pixel
    // means across the window samples, then one pooled centered cosine per
    // lag.
    let window = 15..20;
    let vis = esn.vis_mc_windowed(&seq, &lags, window.clone()).unwrap();
    let full_states = esn.harvest_states(&seq).unwrap();
    let n_px = seq.n_pixels();
    let n_samples = window.len();
    let mut vis_oracle = 0.0;
    for &lag in &lags {
        let readout = esn.readout(lag).unwrap();
        let mut preds = Matrix::zeros(n_samples, n_px);
        let mut truths = Matrix::zeros(n_samples, n_px);
        for (row, t) in window.clone().enumerate() {
            let truth = seq.frame(t - lag);
            for j in 0..n_px {
                let mut pred = 0.0;
                for (k, &w) in readout.row(j).iter().enumerate() {
                    pred += w * full_states[(t, k)];
                }
                preds[(row, j)] = pred;
                truths[(row, j)] = truth.as_slice()[j];
            }
        }
        let col_mean = |m: &Matrix, j: usize| -> f64 {
            (0..n_samples).map(|r| m[(r, j)]).sum::<f64>() / n_samples as f64
        };
        let (mut spp, mut stt, mut spt) = (0.0, 0.0, 0.0);
        for j in 0..n_px {
            let (mp, mt) = (col_mean(&preds, j), col_mean(&truths, j));
            for r in 0..n_samples {
                let (cp, ct) = (preds[(r, j)] - mp, truths[(r, j)] - mt);
                spp += cp * cp;
                stt += ct * ct;
                spt += cp * ct;
            }
        }
        if spp > 0.0 && stt > 0.0 {
            let r = (spt / (spp * stt).sqrt()).clamp(-1.0, 1.0);
            vis_oracle += r * r;
        }
    }
    let vis_err = (vis - vis_oracle).abs();

    let ok = loss_err < 1e-10 && vis_err < 1e-10;
    verdict(
        6,
        "recall numerics match two-loop oracles",
        ok,
        &format!(
            "training loss differs by {loss_err:.2e}, capacity by {vis_err:.2e} (bound 1e-10)"
        ),
    );
}

// --- 7: paired test p-values match density quadrature ---------------------

fn factorial(k: u64) -> f64 {
    (2..=k).map(|v| v as f64).product()
}

fn odd_double_factorial(k: i64) -> f64 {
    // k!! for odd k, with (-1)!! = 1.
    let mut acc = 1.0;
    let mut v = k;
    while v >= 1 {
        acc *= v as f64;
        v -= 2;
    }
    acc
}

/// Γ(half/2) for positive integer `half`, from the exact integer and
/// half-integer factorial identities.
fn gamma_of_half_integer(half: u64) -> f64 {
    if half % 2 == 0 {
        factorial(half / 2 - 1)
    } else {
        let n = (half - 1) / 2; // Γ(n + 1/2)
        odd_double_factorial(2 * n as i64 - 1) * std::f64::consts::PI.sqrt() / 2f64.powi(n as i32)
    }
}

#[test]
fn criterion_07_paired_test_matches_quadrature_oracle() {
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for &n in &[3usize, 5, 10, 30] {
        let mut rng = RngSeed(9007 + n as u64).rng();
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..4.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(-0.8..1.0)).collect();
        let (t, p) = paired_t_test(&a, &b).unwrap();

        let nu = (n - 1) as u64;
        let c = gamma_of_half_integer(nu + 1)
            / ((nu as f64 * std::f64::consts::PI).sqrt() * gamma_of_half_integer(nu));
        let pdf = |x: f64| c * (1.0 + x * x / nu as f64).powf(-((nu as f64 + 1.0) / 2.0));
        // Simpson's rule on [0, |t|]; two-sided p = 1 - 2 * integral.
        let m = 40_000usize;
        let upper = t.abs();
        let h = upper / m as f64;
        let mut integral = pdf(0.0) + pdf(upper);
        for i in 1..m {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            integral += w * pdf(i as f64 * h);
        }
        integral *= h / 3.0;
        let p_oracle = (1.0 - 2.0 * integral).clamp(0.0, 1.0);
        worst = worst.max((p - p_oracle).abs());
        details.push(format!("n={n}: |Δp|={:.1e}", (p - p_oracle).abs()));
    }
    verdict(
        7,
        "paired test p-values match density quadrature",
        worst < 1e-6,
        &details.join(", "),
    );
}

// --- 8: scaled end-to-end protocol through the binary ---------------------

#[test]
fn criterion_08_scaled_protocol_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("protocol.toml");
    std::fs::write(&cfg_path, "[dgn]\nepochs = 100\n").unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let pop = tmp.path().join("pop");
    let run = tmp.path().join("run");
    let rep = tmp.path().join("rep");

    let started = Instant::now();
    common::run_expect(
        &["synth", "--config", cfg, "--out", pop.to_str().unwrap()],
        0,
    );
    common::run_expect(
        &[
            "cotrain",
            "--config",
            cfg,
            "--population",
            pop.to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
        ],
        0,
    );
    common::run_expect(
        &[
            "eval",
            "--method",
            run.to_str().unwrap(),
            "--population",
            pop.to_str().unwrap(),
            "--out",
            rep.to_str().unwrap(),
        ],
        0,
    );
    let elapsed = started.elapsed().as_secs_f64();

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    let method: Vec<f64> = report["method"]["centeredness"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let baseline: Vec<f64> = report["baseline"]["centeredness"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(method.len(), 5, "five folds expected");
    let wins = method
        .iter()
        .zip(&baseline)
        .filter(|(m, b)| **m <= 1.05 * **b)
        .count();
    let ratios: Vec<String> = method
        .iter()
        .zip(&baseline)
        .map(|(m, b)| format!("{:.3}", m / b))
        .collect();
    let ok = wins >= 3 && elapsed < 600.0;
    verdict(
        8,
        "scaled protocol: learned templates rival the view median",
        ok,
        &format!(
            "20 subjects x 4 views of 35 regions, 5 folds x 100 epochs in {elapsed:.0}s; \
             method/baseline centeredness ratios {} → {wins}/5 within 5% or better",
            ratios.join(", ")
        ),
    );
}

// --- 9: image container round-trips --------------------------------------

#[test]
fn criterion_09_image_container_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = RngSeed(9009).rng();

    // Byte-level: a file written from parsed frames reproduces the
    // original container exactly.
    for case in 0..20 {
        let (n, r, c) = (
            rng.gen_range(1..=6),
            rng.gen_range(1..=9),
            rng.gen_range(1..=9),
        );
        let mut raw = Vec::new();
        raw.extend_from_slice(&[0, 0, 8, 3]);
        for dim in [n as u32, r as u32, c as u32] {
            raw.extend_from_slice(&dim.to_be_bytes());
        }
        for _ in 0..n * r * c {
            raw.push(rng.gen::<u8>());
        }
        let path = tmp.path().join(format!("fixture_{case}.idx"));
        std::fs::write(&path, &raw).unwrap();
        let seq = read_idx_images(&path, n).unwrap();
        let back = tmp.path().join(format!("fixture_{case}_back.idx"));
        write_idx_images(&back, &seq).unwrap();
        assert_eq!(
            std::fs::read(&back).unwrap(),
            raw,
            "case {case}: bytes changed"
        );
    }

    // Value-level: frames on the 1/255 grid survive write → read exactly.
    for case in 0..20 {
        let frames: Vec<Matrix> = (0..3)
            .map(|_| Matrix::from_fn(5, 7, |_, _| rng.gen_range(0..=255u16) as f64 / 255.0))
            .collect();
        let seq = ImageSequence::new(frames).unwrap();
        let path = tmp.path().join(format!("grid_{case}.idx"));
        write_idx_images(&path, &seq).unwrap();
        let reread = read_idx_images(&path, seq.len()).unwrap();
        for (a, b) in seq.frames().iter().zip(reread.frames()) {
            assert_eq!(
                a.as_slice(),
                b.as_slice(),
                "case {case}: pixel values changed"
            );
        }
    }

    // Area-mean downsampling preserves the global mean.
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let img = Matrix::from_fn(28, 28, |_, _| rng.gen_range(0.0..1.0));
        let down = downsample_mean(&img, 10, 10).unwrap();
        let mean_in = img.as_slice().iter().sum::<f64>() / img.as_slice().len() as f64;
        let mean_out = down.as_slice().iter().sum::<f64>() / down.as_slice().len() as f64;
        worst = worst.max((mean_in - mean_out).abs());
    }
    verdict(
        9,
        "image container round-trips and pooling",
        worst < 1e-12,
        &format!(
            "20 containers byte-identical, 20 grids value-identical, \
             worst 28→10 mean drift {worst:.2e} (bound 1e-12)"
        ),
    );
}

// --- 10: every command is deterministic -----------------------------------

#[test]
fn criterion_10_every_command_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::write_tiny_config(tmp.path());
    let pop = tmp.path().join("pop");
    common::run_expect(
        &["synth", "--config", &cfg, "--out", pop.to_str().unwrap()],
        0,
    );
    let pop_arg = pop.to_str().unwrap().to_string();

    let mut all = Vec::new();
    for round in ["x", "y"] {
        let dir = |name: &str| tmp.path().join(format!("{name}_{round}"));
        let synth_out = dir("synth");
        let train_out = dir("train");
        let run_out = dir("run");
        let refined = tmp.path().join(format!("refined_{round}.csv"));
        let rep_out = dir("rep");
        let recall_out = dir("recall");

        common::run_expect(
            &[
                "synth",
                "--config",
                &cfg,
                "--out",
                synth_out.to_str().unwrap(),
            ],
            0,
        );
        common::run_expect(
            &[
                "train",
                "--config",
                &cfg,
                "--population",
                &pop_arg,
                "--out",
                train_out.to_str().unwrap(),
            ],
            0,
        );
        common::run_expect(
            &[
                "cotrain",
                "--config",
                &cfg,
                "--population",
                &pop_arg,
                "--out",
                run_out.to_str().unwrap(),
            ],
            0,
        );
        common::run_expect(
            &[
                "refine",
                run_out.join("fold_0/cbt.csv").to_str().unwrap(),
                run_out.join("fold_1/cbt.csv").to_str().unwrap(),
                "--out",
                refined.to_str().unwrap(),
            ],
            0,
        );
        common::run_expect(
            &[
                "eval",
                "--method",
                run_out.to_str().unwrap(),
                "--population",
                &pop_arg,
                "--out",
                rep_out.to_str().unwrap(),
            ],
            0,
        );
        common::run_expect(
            &[
                "recall-demo",
                "--cbt",
                run_out.join("fold_0/cbt.csv").to_str().unwrap(),
                "--config",
                &cfg,
                "--out",
                recall_out.to_str().unwrap(),
            ],
            0,
        );

        let mut trees = vec![
            common::tree_map(&synth_out),
            common::tree_map(&train_out),
            common::tree_map(&run_out),
            common::tree_map(&rep_out),
            common::tree_map(&recall_out),
        ];
        let refined_bytes = std::fs::read(&refined).unwrap();
        trees.push(
            [("refined.csv".to_string(), refined_bytes)]
                .into_iter()
                .collect(),
        );
        all.push(trees);
    }
    let equal = all[0] == all[1];
    verdict(
        10,
        "repeated runs are byte-identical",
        equal,
        "synth, train, cotrain, refine, eval and recall-demo all reproduced their output trees",
    );
}

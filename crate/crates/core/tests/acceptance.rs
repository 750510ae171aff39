//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Heavy protocol runs are shared: criterion 5 and criterion 9 reuse one
//! full default experiment; criterion 7 runs its own 20-seed mini protocol.

use std::sync::OnceLock;
use std::time::Instant;

use dmia_core::attack::{
    ensemble_detect_with_kernels, train_deep_kernel, DetectConfig, TrainConfig,
};
use dmia_core::baseline::{instance_attack_metrics, instance_scores, ModelTag};
use dmia_core::experiment::{
    run_experiment, run_size_sweep, with_thread_pool, ExperimentConfig, RunReport,
};
use dmia_core::kernel::{gaussian_gram, DeepKernel};
use dmia_core::mmd::{
    dmia_loss, dmia_loss_and_grad, h_matrix, mmd2_u, normalized_stat, variance_reg, MmdEstimate,
    Objective,
};
use dmia_core::net::{Activation, FeatureNet};
use dmia_core::numeric::{gaussian_noise, subsample, Matrix, RngStream};
use dmia_core::world::{build_world, make_candidate, memory_chain_win_rate, WorldSpec};

use rayon::prelude::*;

fn report_line(criterion: u32, name: &str, pass: bool, detail: &str, started: Instant) {
    println!(
        "[criterion {criterion}] {}: {} ({detail}; {:.1}s)",
        name,
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// Criterion 1: exact-value oracles.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_exact_value_oracles() {
    let started = Instant::now();

    // Hand case: X = {0, 0}, Y = {1, 1}, gamma = 1.
    let x = Matrix::from_vec(2, 1, vec![0.0, 0.0]).unwrap();
    let y = Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
    let kxx = gaussian_gram(&x, &x, 1.0).unwrap();
    let kyy = gaussian_gram(&y, &y, 1.0).unwrap();
    let kxy = gaussian_gram(&x, &y, 1.0).unwrap();
    let hand = mmd2_u(&kxx, &kyy, &kxy).unwrap();
    let expected = 2.0 - 2.0 * (-0.5f64).exp();
    let hand_ok = (hand - expected).abs() < 1e-12;

    // Constant H collapses the variance estimate to exactly lambda.
    let mut exact_lambda = true;
    for &(n, c) in &[(2usize, 0.7), (5, -1.3), (6, 2.25), (9, 0.031)] {
        let h = Matrix::from_vec(n, n, vec![c; n * n]).unwrap();
        exact_lambda &= variance_reg(&h, 1e-8).unwrap() == 1e-8;
    }

    // H-matrix / mmd2_u algebraic consistency on 50 random instances.
    let mut consistent = true;
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let s = RngStream::new(seed);
        let a = gaussian_noise(8, 3, 1.0, s.substream(0)).unwrap();
        let b = gaussian_noise(8, 3, 1.4, s.substream(1)).unwrap();
        let kxx = gaussian_gram(&a, &a, 0.9).unwrap();
        let kyy = gaussian_gram(&b, &b, 0.9).unwrap();
        let kxy = gaussian_gram(&a, &b, 0.9).unwrap();
        let h = h_matrix(&kxx, &kyy, &kxy).unwrap();
        let n = 8;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += h.get(i, j);
                }
            }
        }
        let gap = (acc / (n * (n - 1)) as f64 - mmd2_u(&kxx, &kyy, &kxy).unwrap()).abs();
        worst = worst.max(gap);
        consistent &= gap < 1e-12;
    }

    report_line(
        1,
        "exact-value oracles",
        hand_ok && exact_lambda && consistent,
        &format!("hand case {hand:.15}, worst identity gap {worst:.2e}"),
        started,
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: gradient correctness against central finite differences.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_gradient_correctness() {
    let started = Instant::now();
    let h_step = 1e-5;
    let mut worst = 0.0f64;
    for depth in 1..=3usize {
        for seed in 0..10u64 {
            let s = RngStream::new(1000 * depth as u64 + seed);
            let net =
                FeatureNet::new(2, 4, depth, 3, Activation::Softplus, s.substream(0)).unwrap();
            let mut kernel = DeepKernel::new(net, 0.05, 0.8, 1.1).unwrap();
            let anc = gaussian_noise(8, 2, 1.0, s.substream(1)).unwrap();
            let mem = gaussian_noise(8, 2, 1.0, s.substream(2)).unwrap();
            let non = gaussian_noise(8, 2, 1.2, s.substream(3)).unwrap();
            let (_, analytic) = dmia_loss_and_grad(
                &kernel,
                &anc,
                &mem,
                &non,
                Objective::DiscrepancyDifference,
                1e-8,
            )
            .unwrap();
            let mut params = kernel.net.params_to_vec();
            for p in 0..params.len() {
                let orig = params[p];
                params[p] = orig + h_step;
                kernel.net.set_params_from_vec(&params).unwrap();
                let up = dmia_loss(
                    &kernel,
                    &anc,
                    &mem,
                    &non,
                    Objective::DiscrepancyDifference,
                    1e-8,
                )
                .unwrap();
                params[p] = orig - h_step;
                kernel.net.set_params_from_vec(&params).unwrap();
                let down = dmia_loss(
                    &kernel,
                    &anc,
                    &mem,
                    &non,
                    Objective::DiscrepancyDifference,
                    1e-8,
                )
                .unwrap();
                params[p] = orig;
                kernel.net.set_params_from_vec(&params).unwrap();
                let fd = (up - down) / (2.0 * h_step);
                // Absolute floor: central differences bottom out at ~1e-10
                // roundoff, so gradients this small count as matched.
                let err = (analytic[p] - fd).abs() / analytic[p].abs().max(fd.abs()).max(1e-3);
                worst = worst.max(err);
            }
        }
    }
    report_line(
        2,
        "gradient correctness",
        worst < 1e-4,
        &format!("max relative error {worst:.3e} over depths 1-3 x 10 seeds"),
        started,
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: null calibration of the estimator.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_null_calibration() {
    let started = Instant::now();
    let draws = 200;
    let n = 100;
    let mut values = Vec::with_capacity(draws);
    let mut exceed = 0usize;
    for t in 0..draws {
        let s = RngStream::new(31_000 + t as u64);
        let x = gaussian_noise(n, 5, 1.0, s.substream(0)).unwrap();
        let y = gaussian_noise(n, 5, 1.0, s.substream(1)).unwrap();
        let kxx = gaussian_gram(&x, &x, 2.0).unwrap();
        let kyy = gaussian_gram(&y, &y, 2.0).unwrap();
        let kxy = gaussian_gram(&x, &y, 2.0).unwrap();
        let value = mmd2_u(&kxx, &kyy, &kxy).unwrap();
        let h = h_matrix(&kxx, &kyy, &kxy).unwrap();
        let variance = variance_reg(&h, 1e-8).unwrap();
        if normalized_stat(&MmdEstimate { value, variance, n }).abs() > 3.0 {
            exceed += 1;
        }
        values.push(value);
    }
    let mean = values.iter().sum::<f64>() / draws as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (draws - 1) as f64;
    let se = (var / draws as f64).sqrt();
    let rate = exceed as f64 / draws as f64;
    report_line(
        3,
        "null calibration",
        mean.abs() < 3.0 * se && rate < 0.02,
        &format!(
            "null mean {mean:.2e} (3se {:.2e}), |stat|>3 rate {rate:.3}",
            3.0 * se
        ),
        started,
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: memory-chain reproduction on the reference world.
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_memory_chain() {
    let started = Instant::now();
    let world = build_world(&WorldSpec::reference(0)).unwrap();
    let rate = memory_chain_win_rate(&world, 100, 200, RngStream::new(77)).unwrap();
    report_line(
        4,
        "memory-chain reproduction",
        rate >= 0.90,
        &format!("student-gen closer to members in {rate:.2} of 100 subset pairs"),
        started,
    );
}

// ---------------------------------------------------------------------------
// Criteria 5 and 9 share one full default experiment run.
// ---------------------------------------------------------------------------

static DEFAULT_RUN: OnceLock<RunReport> = OnceLock::new();

fn default_run() -> &'static RunReport {
    DEFAULT_RUN.get_or_init(|| {
        run_experiment(&ExperimentConfig::reference(0), Some(2)).expect("default run")
    })
}

#[test]
fn criterion_5_end_to_end_detection() {
    let started = Instant::now();
    let report = default_run();
    let at = |ratio: f64| {
        report
            .per_ratio
            .iter()
            .find(|r| (r.ratio - ratio).abs() < 1e-12)
            .unwrap()
    };
    let full = at(1.0);
    let third = at(0.3);
    let pass = full.asr >= 0.9 && full.auc >= 0.95 && third.auc >= 0.8;
    report_line(
        5,
        "end-to-end detection",
        pass,
        &format!(
            "rho=1.0 asr {:.3} auc {:.3}; rho=0.3 auc {:.3}",
            full.asr, full.auc, third.auc
        ),
        started,
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: the instance-level baseline dies on the student.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_instance_baseline_fails_on_student() {
    let started = Instant::now();
    let seeds: Vec<u64> = (0..20).collect();
    let results: Vec<(f64, f64)> = with_thread_pool(Some(2), || {
        seeds
            .par_iter()
            .map(|&seed| {
                let world = build_world(&WorldSpec::reference(seed)).unwrap();
                let bs = RngStream::new(seed).substream(0xBA5E);
                let member_q = subsample(&world.d_mem.matrix, 500, bs.substream(0), false).unwrap();
                let non_q = world.sample_non_members(500, bs.substream(1));
                let teacher = instance_attack_metrics(
                    &instance_scores(
                        &member_q,
                        &non_q,
                        &world.d_teacher_gen.matrix,
                        ModelTag::Teacher,
                    )
                    .unwrap(),
                )
                .unwrap();
                let student = instance_attack_metrics(
                    &instance_scores(
                        &member_q,
                        &non_q,
                        &world.d_student_gen.matrix,
                        ModelTag::Student,
                    )
                    .unwrap(),
                )
                .unwrap();
                (teacher.auc, student.auc)
            })
            .collect()
    })
    .unwrap();
    let passing = results
        .iter()
        .filter(|(t, s)| t - s >= 0.1 && (0.45..=0.65).contains(s))
        .count();
    let mean_student = results.iter().map(|(_, s)| s).sum::<f64>() / results.len() as f64;
    let mean_teacher = results.iter().map(|(t, _)| t).sum::<f64>() / results.len() as f64;
    report_line(
        6,
        "instance baseline fails under distillation",
        passing >= 16,
        &format!(
            "{passing}/20 seeds pass; mean teacher auc {mean_teacher:.3}, student {mean_student:.3}"
        ),
        started,
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: ensemble score grows with the member ratio.
// ---------------------------------------------------------------------------

fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &orig in &idx[i..j] {
            ranks[orig] = midrank;
        }
        i = j;
    }
    ranks
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = midranks(x);
    let ry = midranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

#[test]
fn criterion_7_score_monotone_in_member_ratio() {
    let started = Instant::now();
    let grid = [0.0, 0.3, 0.5, 1.0];
    let seeds: Vec<u64> = (0..20).collect();
    // Per seed: train a two-kernel ensemble once, evaluate one candidate per
    // ratio, record the ensemble means.
    let per_seed: Vec<[f64; 4]> = with_thread_pool(Some(2), || {
        seeds
            .par_iter()
            .map(|&seed| {
                let world = build_world(&WorldSpec::reference(seed)).unwrap();
                let root = RngStream::new(seed).substream(0x707);
                let shuffled = subsample(
                    &world.d_non.matrix,
                    world.d_non.rows(),
                    root.substream(0),
                    false,
                )
                .unwrap();
                let non_train = shuffled.take_rows(&(0..500).collect::<Vec<_>>());
                let non_detect = shuffled.take_rows(&(500..1500).collect::<Vec<_>>());
                let train_cfg = TrainConfig::default();
                let detect_cfg = DetectConfig::default();
                let kernels: Vec<_> = (0..2)
                    .map(|i| {
                        train_deep_kernel(
                            &non_train,
                            &world.student,
                            &world.encoder,
                            &train_cfg,
                            root.substream(1).substream(i),
                        )
                        .unwrap()
                    })
                    .collect();
                let mut out = [0.0; 4];
                for (g, &rho) in grid.iter().enumerate() {
                    let cand =
                        make_candidate(&world, rho, 500, root.substream(2).substream(g as u64))
                            .unwrap();
                    let report = ensemble_detect_with_kernels(
                        &kernels,
                        &cand.matrix,
                        &non_detect,
                        &world.encoder,
                        0.7,
                        &detect_cfg,
                        root.substream(3).substream(g as u64),
                    )
                    .unwrap();
                    out[g] = report.p_mem_mean;
                }
                out
            })
            .collect()
    })
    .unwrap();
    let means: Vec<f64> = (0..4)
        .map(|g| per_seed.iter().map(|s| s[g]).sum::<f64>() / per_seed.len() as f64)
        .collect();
    let rho_s = spearman(&grid, &means);
    report_line(
        7,
        "score monotone in member ratio",
        rho_s >= 0.9,
        &format!("mean p_mem {means:?}, spearman {rho_s:.3}"),
        started,
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: detection degrades as candidate and non-member pools shrink.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_size_degradation() {
    let started = Instant::now();
    let sizes = [500usize, 200, 60, 30];
    let mut monotone_seeds = 0;
    let mut traces = Vec::new();
    for seed in 0..10u64 {
        let mut base = ExperimentConfig::reference(seed);
        base.ensemble_size = 2;
        base.rounds = 25;
        base.detect.trials = 60;
        base.ratio_grid = vec![1.0];
        base.baseline_queries = 64;
        let sweep = run_size_sweep(&base, &sizes, Some(2)).unwrap();
        let asrs: Vec<f64> = sweep.iter().map(|(_, a)| *a).collect();
        if asrs.windows(2).all(|w| w[1] <= w[0] + 1e-12) {
            monotone_seeds += 1;
        }
        traces.push(asrs);
    }
    report_line(
        8,
        "size degradation",
        monotone_seeds >= 8,
        &format!("nonincreasing on {monotone_seeds}/10 seeds; traces {traces:?}"),
        started,
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical reports across thread counts.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_determinism_across_thread_counts() {
    let started = Instant::now();
    let first = default_run();
    let second = run_experiment(&ExperimentConfig::reference(0), Some(3)).unwrap();
    // Compare the canonical on-disk artifacts byte for byte.
    let dir = std::env::temp_dir().join(format!("dmia-acceptance-{}", std::process::id()));
    let (da, db) = (dir.join("a"), dir.join("b"));
    first.write_to_dir(&da).unwrap();
    second.write_to_dir(&db).unwrap();
    let bytes_a = std::fs::read(da.join("report.json")).unwrap();
    let bytes_b = std::fs::read(db.join("report.json")).unwrap();
    let identical = bytes_a == bytes_b;
    std::fs::remove_dir_all(&dir).ok();
    report_line(
        9,
        "determinism across thread counts",
        identical,
        &format!(
            "reports of {} bytes from 2-thread and 3-thread runs",
            bytes_a.len()
        ),
        started,
    );
}

//! End-to-end experiment orchestration: build a world, train an ensemble of
//! kernels, run repeated rounds of candidate sampling and detection over a
//! member-ratio grid, score the attack, and emit a reproducible report.
//!
//! Determinism contract: with a fixed config (seed included), the canonical
//! `report.json` is byte-identical across runs and thread counts. Every
//! parallel work item draws from its own stream keyed by index, results
//! reduce in index order, and timing goes to a separate `timing.json` so the
//! canonical report stays deterministic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

use crate::attack::{
    ensemble_detect_with_kernels, train_deep_kernel, DetectConfig, TrainConfig, TrainedKernel,
};
use crate::baseline::{instance_attack_metrics, instance_scores, ModelTag};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json, F32BIN_VERSION, KERNEL_SCHEMA_VERSION};
use crate::metrics::{asr, Histogram, MetricSummary, ScoredSample};
use crate::numeric::{subsample, Matrix, RngStream};
use crate::world::{build_world, make_candidate, WorldInstance, WorldSpec};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Full configuration of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub world: WorldSpec,
    pub train: TrainConfig,
    pub detect: DetectConfig,
    /// Number of independently trained kernels.
    pub ensemble_size: usize,
    /// Ensemble decision threshold on the mean membership probability.
    pub tau: f64,
    /// When set, tau is re-fit on labeled calibration pairs (proxy-member
    /// positives from the student, negatives from a held-out non-member
    /// split) before any detection round.
    pub calibrate_tau: bool,
    pub calibration_rounds: usize,
    /// Member ratios of the positive candidate sets.
    pub ratio_grid: Vec<f64>,
    pub candidate_size: usize,
    /// Non-member rows reserved for kernel training.
    pub non_train_size: usize,
    /// Non-member rows reserved for detection comparisons.
    pub non_detect_size: usize,
    /// Sampling-and-detection rounds per ratio.
    pub rounds: usize,
    /// Instance-baseline queries per class.
    pub baseline_queries: usize,
    pub histogram_bins: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    /// The default protocol on the reference world.
    pub fn reference(seed: u64) -> Self {
        ExperimentConfig {
            schema_version: REPORT_SCHEMA_VERSION,
            world: WorldSpec::reference(seed),
            train: TrainConfig::default(),
            detect: DetectConfig::default(),
            ensemble_size: 5,
            tau: 0.7,
            calibrate_tau: false,
            calibration_rounds: 16,
            ratio_grid: vec![0.0, 0.3, 0.5, 1.0],
            candidate_size: 500,
            non_train_size: 500,
            non_detect_size: 1000,
            rounds: 50,
            baseline_queries: 500,
            histogram_bins: 20,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion {
                got: self.schema_version,
                supported: REPORT_SCHEMA_VERSION,
            });
        }
        self.world.validate()?;
        self.train.validate()?;
        self.detect.validate()?;
        if self.ensemble_size < 1 {
            return Err(Error::InvalidArgument("ensemble size must be >= 1".into()));
        }
        if self.rounds < 1 {
            return Err(Error::InvalidArgument("rounds must be >= 1".into()));
        }
        if !(0.0 < self.tau && self.tau < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if self.ratio_grid.is_empty() || self.ratio_grid.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidArgument(
                "ratio grid must be nonempty with entries in [0, 1]".into(),
            ));
        }
        for (i, a) in self.ratio_grid.iter().enumerate() {
            if self.ratio_grid[i + 1..].iter().any(|b| a == b) {
                return Err(Error::InvalidArgument(format!(
                    "ratio grid contains duplicate entry {a}"
                )));
            }
        }
        if self.calibrate_tau && self.calibration_rounds < 1 {
            return Err(Error::InvalidArgument(
                "tau calibration needs at least one calibration round".into(),
            ));
        }
        let cal = if self.calibrate_tau {
            self.candidate_size
        } else {
            0
        };
        let needed = self.non_train_size + self.non_detect_size + cal;
        if self.world.n_non < needed {
            return Err(Error::InvalidArgument(format!(
                "world non-member budget {} is below the {} rows the experiment needs",
                self.world.n_non, needed
            )));
        }
        if self.candidate_size > self.world.n_mem {
            return Err(Error::InvalidArgument(
                "candidate size exceeds the member budget".into(),
            ));
        }
        if self.candidate_size < self.detect.batch_size
            || self.non_detect_size < self.detect.batch_size
        {
            return Err(Error::InvalidArgument(
                "candidate and detection pools must cover the detection batch size".into(),
            ));
        }
        if self.non_train_size < 2 * self.train.batch_size {
            return Err(Error::InvalidArgument(
                "training non-member split must cover two training batches".into(),
            ));
        }
        Ok(())
    }
}

/// Ensemble outcome kept per round: enough to recompute every reported metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutcome {
    pub p_mem_per_kernel: Vec<f64>,
    pub p_mem_mean: f64,
    pub decision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub ratio: f64,
    pub positive: EnsembleOutcome,
    pub negative: EnsembleOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioMetrics {
    pub ratio: f64,
    /// Best-threshold attack success rate over the round scores.
    pub asr: f64,
    pub asr_threshold: f64,
    /// Accuracy of the fixed-tau ensemble decision.
    pub asr_at_tau: f64,
    pub auc: f64,
    pub tpr_at_fpr_05: f64,
    pub mean_p_positive: f64,
    pub mean_p_negative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub queries_per_class: usize,
    pub teacher: MetricSummary,
    pub student: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioHistograms {
    pub ratio: f64,
    pub positive: Histogram,
    pub negative: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTrainSummary {
    pub kernel_id: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub gamma_phi: f64,
    pub gamma_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub package: String,
    pub report_schema: u32,
    pub kernel_schema: u32,
    pub f32bin: u32,
}

impl Versions {
    fn current() -> Self {
        Versions {
            package: env!("CARGO_PKG_VERSION").to_string(),
            report_schema: REPORT_SCHEMA_VERSION,
            kernel_schema: KERNEL_SCHEMA_VERSION,
            f32bin: F32BIN_VERSION,
        }
    }
}

/// The canonical experiment report. Wall-clock and thread count live outside
/// the serialized form so the canonical bytes stay deterministic; they are
/// written to a sidecar `timing.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub tau_used: f64,
    pub tau_calibrated: bool,
    pub kernel_training: Vec<KernelTrainSummary>,
    pub rounds: Vec<RoundRecord>,
    pub per_ratio: Vec<RatioMetrics>,
    pub baseline: BaselineReport,
    pub histograms: Vec<RatioHistograms>,
    pub versions: Versions,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
    #[serde(skip)]
    pub threads_used: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTiming {
    pub wall_clock_seconds: f64,
    pub threads_used: usize,
}

impl RunReport {
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), self)?;
        write_json(
            &dir.join("timing.json"),
            &RunTiming {
                wall_clock_seconds: self.wall_clock_seconds,
                threads_used: self.threads_used,
            },
        )
    }

    pub fn read_from_file(path: &Path) -> Result<Self> {
        let report: RunReport = read_json(path)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion {
                got: report.schema_version,
                supported: REPORT_SCHEMA_VERSION,
            });
        }
        Ok(report)
    }

    /// Per-ratio metric table as CSV.
    pub fn metrics_csv_string(&self) -> String {
        let mut out = String::from(
            "ratio,asr,asr_threshold,asr_at_tau,auc,tpr_at_fpr_05,mean_p_positive,mean_p_negative\n",
        );
        for r in &self.per_ratio {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.ratio,
                r.asr,
                r.asr_threshold,
                r.asr_at_tau,
                r.auc,
                r.tpr_at_fpr_05,
                r.mean_p_positive,
                r.mean_p_negative
            ));
        }
        out
    }

    pub fn baseline_csv_string(&self) -> String {
        let mut out = String::from("model,asr,auc,tpr_at_fpr_05\n");
        for (name, m) in [
            ("teacher", &self.baseline.teacher),
            ("student", &self.baseline.student),
        ] {
            out.push_str(&format!(
                "{},{},{},{}\n",
                name, m.asr, m.auc, m.tpr_at_fpr_05
            ));
        }
        out
    }

    /// Score histograms flattened to one CSV across ratios and labels.
    pub fn histograms_csv_string(&self) -> String {
        let mut out = String::from("ratio,label,bin_lo,bin_hi,count\n");
        for rh in &self.histograms {
            for (label, hist) in [("positive", &rh.positive), ("negative", &rh.negative)] {
                let width = (hist.hi - hist.lo) / hist.counts.len() as f64;
                for (i, c) in hist.counts.iter().enumerate() {
                    let lo = hist.lo + i as f64 * width;
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        rh.ratio,
                        label,
                        lo,
                        lo + width,
                        c
                    ));
                }
            }
        }
        out
    }
}

mod ns {
    pub const NON_SPLIT: u64 = 0x10;
    pub const TRAIN: u64 = 0x11;
    pub const CANDIDATE: u64 = 0x12;
    pub const DETECT: u64 = 0x13;
    pub const CALIBRATE: u64 = 0x14;
    pub const BASELINE: u64 = 0x15;
}

struct NonMemberSplits {
    train: Matrix,
    detect: Matrix,
    calibration: Matrix,
}

fn split_non_members(cfg: &ExperimentConfig, world: &WorldInstance) -> Result<NonMemberSplits> {
    let stream = RngStream::new(cfg.seed).substream(ns::NON_SPLIT);
    let shuffled = subsample(&world.d_non.matrix, world.d_non.rows(), stream, false)?;
    let cal = if cfg.calibrate_tau {
        cfg.candidate_size
    } else {
        0
    };
    let train: Vec<usize> = (0..cfg.non_train_size).collect();
    let detect: Vec<usize> =
        (cfg.non_train_size..cfg.non_train_size + cfg.non_detect_size).collect();
    let calibration: Vec<usize> = (cfg.non_train_size + cfg.non_detect_size
        ..cfg.non_train_size + cfg.non_detect_size + cal)
        .collect();
    Ok(NonMemberSplits {
        train: shuffled.take_rows(&train),
        detect: shuffled.take_rows(&detect),
        calibration: shuffled.take_rows(&calibration),
    })
}

fn outcome_from(report: crate::attack::EnsembleReport) -> EnsembleOutcome {
    EnsembleOutcome {
        p_mem_per_kernel: report.members.iter().map(|m| m.p_mem).collect(),
        p_mem_mean: report.p_mem_mean,
        decision: report.decision,
    }
}

/// Fit tau on labeled calibration pairs by scanning decision thresholds at
/// score midpoints and maximizing accuracy.
fn calibrate_tau(
    cfg: &ExperimentConfig,
    world: &WorldInstance,
    kernels: &[TrainedKernel],
    splits: &NonMemberSplits,
    stream: RngStream,
) -> Result<f64> {
    let mut samples = Vec::with_capacity(2 * cfg.calibration_rounds);
    for c in 0..cfg.calibration_rounds {
        let cs = stream.substream(c as u64);
        // Proxy positives: fresh student-generated sets (the attacker's only
        // member-like data); negatives from the held-out calibration split.
        let proxy_pos = world.student.sample(cfg.candidate_size, cs.substream(0));
        let neg = subsample(
            &splits.calibration,
            cfg.candidate_size.min(splits.calibration.rows()),
            cs.substream(1),
            false,
        )?;
        for (pool, positive, tag) in [(&proxy_pos, true, 2u64), (&neg, false, 3u64)] {
            let report = ensemble_detect_with_kernels(
                kernels,
                pool,
                &splits.detect,
                &world.encoder,
                cfg.tau,
                &cfg.detect,
                cs.substream(tag),
            )?;
            samples.push(ScoredSample::new(report.p_mem_mean, positive));
        }
    }
    // Threshold scan over midpoints, restricted to (0, 1).
    let mut stats: Vec<f64> = samples.iter().map(|s| s.statistic).collect();
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    stats.dedup();
    let mut best = (f64::NEG_INFINITY, cfg.tau);
    let mut candidates = vec![cfg.tau];
    for w in stats.windows(2) {
        candidates.push(((w[0] + w[1]) / 2.0).clamp(1e-6, 1.0 - 1e-6));
    }
    for t in candidates {
        let a = asr(&samples, t)?;
        if a > best.0 {
            best = (a, t);
        }
    }
    Ok(best.1)
}

/// Run `f` inside a dedicated rayon pool of `threads` workers; on the current
/// pool when `threads` is None. Results do not depend on the pool size.
pub fn with_thread_pool<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Run the full protocol on `threads` worker threads (current pool when None).
pub fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RunReport> {
    let mut report = with_thread_pool(threads, || run_experiment_inner(cfg))??;
    if let Some(n) = threads {
        report.threads_used = n.max(1);
    }
    Ok(report)
}

fn run_experiment_inner(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let root = RngStream::new(cfg.seed);

    let world = build_world(&cfg.world)?;
    let splits = split_non_members(cfg, &world)?;

    // Train the ensemble once; every detection round reuses these kernels.
    let kernels: Result<Vec<TrainedKernel>> = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|i| {
            train_deep_kernel(
                &splits.train,
                &world.student,
                &world.encoder,
                &cfg.train,
                root.substream(ns::TRAIN).substream(i as u64),
            )
        })
        .collect();
    let kernels = kernels?;
    let kernel_training: Vec<KernelTrainSummary> = kernels
        .iter()
        .enumerate()
        .map(|(i, k)| KernelTrainSummary {
            kernel_id: i as u64,
            initial_loss: *k.losses.first().unwrap(),
            final_loss: *k.losses.last().unwrap(),
            gamma_phi: k.kernel.gamma_phi,
            gamma_q: k.kernel.gamma_q,
        })
        .collect();

    let (tau_used, tau_calibrated) = if cfg.calibrate_tau {
        (
            calibrate_tau(
                cfg,
                &world,
                &kernels,
                &splits,
                root.substream(ns::CALIBRATE),
            )?,
            true,
        )
    } else {
        (cfg.tau, false)
    };

    // One work item per (round, ratio): a positive candidate at the ratio and
    // a negative candidate, both pushed through the ensemble.
    let items: Vec<(usize, usize)> = (0..cfg.rounds)
        .flat_map(|r| (0..cfg.ratio_grid.len()).map(move |g| (r, g)))
        .collect();
    let records: Result<Vec<RoundRecord>> = items
        .par_iter()
        .map(|&(round, gidx)| {
            let ratio = cfg.ratio_grid[gidx];
            let item = (round * cfg.ratio_grid.len() + gidx) as u64;
            let cand_stream = root.substream(ns::CANDIDATE).substream(item);
            let detect_stream = root.substream(ns::DETECT).substream(item);
            let positive =
                make_candidate(&world, ratio, cfg.candidate_size, cand_stream.substream(0))?;
            let negative =
                make_candidate(&world, 0.0, cfg.candidate_size, cand_stream.substream(1))?;
            let pos_report = ensemble_detect_with_kernels(
                &kernels,
                &positive.matrix,
                &splits.detect,
                &world.encoder,
                tau_used,
                &cfg.detect,
                detect_stream.substream(0),
            )?;
            let neg_report = ensemble_detect_with_kernels(
                &kernels,
                &negative.matrix,
                &splits.detect,
                &world.encoder,
                tau_used,
                &cfg.detect,
                detect_stream.substream(1),
            )?;
            Ok(RoundRecord {
                round,
                ratio,
                positive: outcome_from(pos_report),
                negative: outcome_from(neg_report),
            })
        })
        .collect();
    let records = records?;

    // Per-ratio metrics over the round scores (grid entries are unique by
    // validation).
    let mut per_ratio = Vec::with_capacity(cfg.ratio_grid.len());
    let mut histograms = Vec::with_capacity(cfg.ratio_grid.len());
    for &ratio in &cfg.ratio_grid {
        let of_ratio: Vec<&RoundRecord> = records.iter().filter(|r| r.ratio == ratio).collect();
        let mut samples = Vec::with_capacity(2 * of_ratio.len());
        let mut pos_scores = Vec::with_capacity(of_ratio.len());
        let mut neg_scores = Vec::with_capacity(of_ratio.len());
        for r in &of_ratio {
            samples.push(ScoredSample::new(r.positive.p_mem_mean, true));
            samples.push(ScoredSample::new(r.negative.p_mem_mean, false));
            pos_scores.push(r.positive.p_mem_mean);
            neg_scores.push(r.negative.p_mem_mean);
        }
        let summary = MetricSummary::from_samples(&samples)?;
        let decision_acc = samples
            .iter()
            .filter(|s| (s.statistic >= tau_used) == s.positive)
            .count() as f64
            / samples.len() as f64;
        per_ratio.push(RatioMetrics {
            ratio,
            asr: summary.asr,
            asr_threshold: summary.asr_threshold,
            asr_at_tau: decision_acc,
            auc: summary.auc,
            tpr_at_fpr_05: summary.tpr_at_fpr_05,
            mean_p_positive: mean(&pos_scores),
            mean_p_negative: mean(&neg_scores),
        });
        histograms.push(RatioHistograms {
            ratio,
            positive: Histogram::from_values(&pos_scores, cfg.histogram_bins, 0.0, 1.0)?,
            negative: Histogram::from_values(&neg_scores, cfg.histogram_bins, 0.0, 1.0)?,
        });
    }

    // Instance-level baseline on both generated pools.
    let bstream = root.substream(ns::BASELINE);
    let member_q = subsample(
        &world.d_mem.matrix,
        cfg.baseline_queries.min(world.d_mem.rows()),
        bstream.substream(0),
        false,
    )?;
    let non_q = world.sample_non_members(cfg.baseline_queries, bstream.substream(1));
    let teacher_table = instance_scores(
        &member_q,
        &non_q,
        &world.d_teacher_gen.matrix,
        ModelTag::Teacher,
    )?;
    let student_table = instance_scores(
        &member_q,
        &non_q,
        &world.d_student_gen.matrix,
        ModelTag::Student,
    )?;
    let baseline = BaselineReport {
        queries_per_class: member_q.rows(),
        teacher: instance_attack_metrics(&teacher_table)?,
        student: instance_attack_metrics(&student_table)?,
    };

    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        tau_used,
        tau_calibrated,
        kernel_training,
        rounds: records,
        per_ratio,
        baseline,
        histograms,
        versions: Versions::current(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        threads_used: rayon::current_num_threads(),
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Derive the configs of the size-degradation sweep: candidate sizes shrink
/// while the non-member pools scale 3:1 (one third for kernel training, two
/// thirds for detection) and batch sizes cap at half the candidate size.
pub fn size_sweep_configs(base: &ExperimentConfig, sizes: &[usize]) -> Vec<ExperimentConfig> {
    sizes
        .iter()
        .map(|&s| {
            let mut cfg = base.clone();
            cfg.candidate_size = s;
            cfg.non_train_size = s;
            cfg.non_detect_size = 2 * s;
            cfg.world.n_non = 3 * s + if cfg.calibrate_tau { s } else { 0 };
            let b = (s / 2).max(2);
            cfg.train.batch_size = cfg.train.batch_size.min(b);
            cfg.detect.batch_size = cfg.detect.batch_size.min(b);
            cfg
        })
        .collect()
}

/// Run the sweep and return (size, best-threshold ASR at the first grid
/// ratio) per entry.
pub fn run_size_sweep(
    base: &ExperimentConfig,
    sizes: &[usize],
    threads: Option<usize>,
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(sizes.len());
    for cfg in size_sweep_configs(base, sizes) {
        let report = run_experiment(&cfg, threads)?;
        out.push((cfg.candidate_size, report.per_ratio[0].asr));
    }
    Ok(out)
}

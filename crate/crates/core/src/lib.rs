//! Distribution-level membership inference for auditing distilled generative
//! models.
//!
//! Instance-level membership attacks die under distillation: a student model
//! trained only on teacher outputs never sees the teacher's members, so
//! per-sample scores carry no membership signal. The distributional signal
//! survives, though — student-generated data stays measurably closer to the
//! teacher's member distribution than to non-members. This crate implements
//! the full audit built on that observation:
//!
//! * [`numeric`] — matrices, pairwise distances, splittable seeded RNG;
//! * [`net`] — the trainable feature extractor with exact gradients and Adam;
//! * [`kernel`] — Gaussian base kernels and the composite deep kernel;
//! * [`mmd`] — unbiased MMD^2 U-statistics, variance estimation, and the
//!   training objective with its gradients;
//! * [`attack`] — deep-kernel training, candidate detection over repeated
//!   Bernoulli trials, and multi-kernel ensembling;
//! * [`world`] — a synthetic teacher/student distillation simulator;
//! * [`baseline`] — the nearest-generated-sample instance attack, for
//!   contrast;
//! * [`metrics`] — ASR / AUC / TPR@FPR metrics and histograms;
//! * [`io`] — dataset formats and kernel/report persistence;
//! * [`experiment`] — the seeded end-to-end protocol runner.

// Index-based loops mirror the matrix arithmetic they implement, and negated
// comparisons like `!(x > 0.0)` deliberately reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod baseline;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod mmd;
pub mod net;
pub mod numeric;
pub mod world;

pub use attack::{
    detect_candidate, ensemble_detect, ensemble_detect_with_kernels, train_deep_kernel,
    train_deep_kernel_from_pool, DetectConfig, DetectionReport, EnsembleReport, Generator,
    TrainConfig, TrainedKernel,
};
pub use baseline::{instance_attack_metrics, instance_scores, InstanceScoreTable, ModelTag};
pub use dataset::{Dataset, Provenance};
pub use error::{Error, Result};
pub use experiment::{run_experiment, run_size_sweep, ExperimentConfig, RunReport};
pub use kernel::{gaussian_gram, median_heuristic, DeepKernel};
pub use metrics::{asr, auc, best_asr, tpr_at_fpr, Histogram, MetricSummary, ScoredSample};
pub use mmd::{
    dmia_loss, dmia_loss_and_grad, h_matrix, mmd2_u, mmd2_u_deep, mmd_estimate, normalized_stat,
    variance_reg, MmdEstimate, Objective,
};
pub use net::{adam_step, Activation, AdamState, FeatureNet};
pub use numeric::{gaussian_noise, pairwise_sq_dists, subsample, Matrix, RngStream};
pub use world::{
    build_world, make_candidate, EncoderHandle, FittedMixture, MixtureSpec, TeacherModel,
    WorldInstance, WorldSpec,
};

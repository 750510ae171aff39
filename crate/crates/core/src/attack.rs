//! The distribution-level attack: deep-kernel training against a student
//! generator, candidate detection by relative discrepancy, and multi-kernel
//! ensembling.
//!
//! Two deliberate departures from a literal reading of the pseudocode, both
//! recorded here because they change observable behavior:
//!
//! * Detection resamples mini-batches (and redraws noise) inside the trial
//!   loop. Sampling once outside would make all T trials identical, which
//!   contradicts their role as repeated Bernoulli trials.
//! * Training draws fresh mini-batches and fresh noise every epoch; the
//!   generated pool is split in half up front so the proxy-member and anchor
//!   batches come from disjoint pools by construction, not just per batch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{median_heuristic_capped, DeepKernel};
use crate::mmd::{dmia_loss_and_grad, AnchorContext, Objective};
use crate::net::{adam_step, Activation, AdamState, FeatureNet};
use crate::numeric::{add_gaussian_noise, subsample, Matrix, RngStream};
use crate::world::EncoderHandle;

/// Anything that can produce samples in input space: the student generator
/// handle passed to training and ensembling.
pub trait Generator: Sync {
    fn generate(&self, n: usize, stream: RngStream) -> Matrix;
}

impl Generator for crate::world::FittedMixture {
    fn generate(&self, n: usize, stream: RngStream) -> Matrix {
        self.sample(n, stream)
    }
}

impl Generator for crate::world::TeacherModel {
    fn generate(&self, n: usize, stream: RngStream) -> Matrix {
        self.sample(n, stream)
    }
}

impl Generator for crate::world::MixtureSpec {
    fn generate(&self, n: usize, stream: RngStream) -> Matrix {
        self.sample(n, stream)
    }
}

/// A pre-drawn pool of generated samples also serves as a generator, so the
/// file-based CLI path and the simulator path share one entry point.
impl Generator for Matrix {
    fn generate(&self, n: usize, stream: RngStream) -> Matrix {
        let take = n.min(self.rows());
        subsample(self, take, stream, false).expect("bounded draw")
    }
}

/// Deep-kernel training configuration (defaults in `Default`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Training iterations; one optimizer step each.
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Std of the additive Gaussian noise applied to every batch.
    pub noise_sigma: f64,
    /// Deep-kernel mixing weight.
    pub epsilon: f64,
    /// Feature-space bandwidth; median heuristic at initialization when None.
    pub gamma_phi: Option<f64>,
    /// Raw-input bandwidth; median heuristic over the pools when None.
    pub gamma_q: Option<f64>,
    pub hidden_dim: usize,
    pub depth: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Variance regularizer floor.
    pub lambda: f64,
    pub objective: Objective,
    /// Generated-pool size drawn from the student; `2 * batch_size` floor
    /// applies. Defaults to 16x the batch size.
    pub gen_pool_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 128,
            noise_sigma: 0.05,
            epsilon: 0.05,
            gamma_phi: None,
            gamma_q: None,
            hidden_dim: 64,
            depth: 3,
            out_dim: 16,
            activation: Activation::Softplus,
            lambda: 1e-8,
            objective: Objective::DiscrepancyDifference,
            gen_pool_size: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be >= 2".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("noise sigma must be >= 0".into()));
        }
        // Zero is allowed so a no-op optimizer stays expressible.
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument("learning rate must be >= 0".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument("lambda must be > 0".into()));
        }
        Ok(())
    }
}

/// Detection configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    /// Bernoulli trials per kernel.
    pub trials: usize,
    pub batch_size: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            trials: 100,
            batch_size: 128,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::InvalidArgument("trial count must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be >= 2".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("noise sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// A trained kernel with its anchor batch and the per-epoch loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedKernel {
    pub kernel: DeepKernel,
    /// Encoded anchor batch from the final epoch.
    pub anchor: Matrix,
    pub losses: Vec<f64>,
}

mod ns {
    pub const GEN_POOL: u64 = 0x01;
    pub const POOL_SPLIT: u64 = 0x02;
    pub const NET_INIT: u64 = 0x03;
    pub const BANDWIDTH: u64 = 0x04;
    pub const EPOCH: u64 = 0x05;
    pub const TRIAL: u64 = 0x06;
    pub const MEMBER: u64 = 0x07;
}

/// Deep-kernel training against a student generator: draws the generated
/// pool and delegates to [`train_deep_kernel_from_pool`].
pub fn train_deep_kernel(
    d_non: &Matrix,
    student: &dyn Generator,
    encoder: &EncoderHandle,
    cfg: &TrainConfig,
    stream: RngStream,
) -> Result<TrainedKernel> {
    cfg.validate()?;
    let pool_size = cfg
        .gen_pool_size
        .unwrap_or(16 * cfg.batch_size)
        .max(2 * cfg.batch_size);
    let s_gen = student.generate(pool_size, stream.substream(ns::GEN_POOL));
    train_deep_kernel_from_pool(d_non, &s_gen, encoder, cfg, stream)
}

/// Deep-kernel training from an already-drawn generated pool.
///
/// The generated pool is shuffled and split in half into a proxy-member pool
/// and an anchor pool. Each epoch samples one mini-batch from each pool plus
/// one from the non-member pool, freshly noised and encoded, and takes one
/// Adam step on the separation objective. Returns the trained kernel, the
/// final anchor batch, and the loss trace.
pub fn train_deep_kernel_from_pool(
    d_non: &Matrix,
    s_gen: &Matrix,
    encoder: &EncoderHandle,
    cfg: &TrainConfig,
    stream: RngStream,
) -> Result<TrainedKernel> {
    cfg.validate()?;
    let b = cfg.batch_size;
    if d_non.rows() < 2 * b {
        return Err(Error::SampleTooSmall {
            context: "train_deep_kernel non-member pool",
            need: 2 * b,
            got: d_non.rows(),
        });
    }
    if s_gen.rows() < 2 * b {
        return Err(Error::SampleTooSmall {
            context: "train_deep_kernel generated pool",
            need: 2 * b,
            got: s_gen.rows(),
        });
    }

    // Disjoint proxy-member and anchor pools via one up-front shuffled split.
    let shuffled = subsample(s_gen, s_gen.rows(), stream.substream(ns::POOL_SPLIT), false)?;
    let half = shuffled.rows() / 2;
    let proxy_pool = shuffled.take_rows(&(0..half).collect::<Vec<_>>());
    let anchor_pool = shuffled.take_rows(&(half..shuffled.rows()).collect::<Vec<_>>());
    debug_assert!(proxy_pool.rows() >= b && anchor_pool.rows() >= b);

    let enc_dim = encoder.out_dim(s_gen.cols());

    // Bandwidths once, before training, on a noised + encoded pool sample.
    let bw_stream = stream.substream(ns::BANDWIDTH);
    let gamma_q = match cfg.gamma_q {
        Some(g) => g,
        None => {
            let probe = s_gen.vstack(d_non)?;
            let noised = add_gaussian_noise(&probe, cfg.noise_sigma, bw_stream.substream(0))?;
            let encoded = encoder.encode(&noised)?;
            median_heuristic_capped(&encoded, 512, bw_stream.substream(1))?
        }
    };

    let net = FeatureNet::new(
        enc_dim,
        cfg.hidden_dim,
        cfg.depth,
        cfg.out_dim,
        cfg.activation,
        stream.substream(ns::NET_INIT),
    )?;

    let gamma_phi = match cfg.gamma_phi {
        Some(g) => g,
        None => {
            let probe = s_gen.vstack(d_non)?;
            let noised = add_gaussian_noise(&probe, cfg.noise_sigma, bw_stream.substream(2))?;
            let encoded = encoder.encode(&noised)?;
            let sample = subsample(
                &encoded,
                encoded.rows().min(512),
                bw_stream.substream(3),
                false,
            )?;
            median_heuristic_capped(&net.forward(&sample)?, 512, bw_stream.substream(4))?
        }
    };

    let mut kernel = DeepKernel::new(net, cfg.epsilon, gamma_phi, gamma_q)?;
    let mut params = kernel.net.params_to_vec();
    let mut adam = AdamState::new(params.len(), cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut anchor = Matrix::zeros(0, enc_dim);

    for epoch in 0..cfg.epochs {
        let es = stream.substream(ns::EPOCH).substream(epoch as u64);
        let draw = |pool: &Matrix, tag: u64| -> Result<Matrix> {
            let batch = subsample(pool, b, es.substream(2 * tag), false)?;
            let noised = add_gaussian_noise(&batch, cfg.noise_sigma, es.substream(2 * tag + 1))?;
            encoder.encode(&noised)
        };
        let b_mem = draw(&proxy_pool, 0)?;
        let b_anc = draw(&anchor_pool, 1)?;
        let b_non = draw(d_non, 2)?;

        let (loss, grads) =
            dmia_loss_and_grad(&kernel, &b_anc, &b_mem, &b_non, cfg.objective, cfg.lambda)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at epoch {epoch} (lr {}, sigma {})",
                cfg.learning_rate, cfg.noise_sigma
            )));
        }
        losses.push(loss);
        adam_step(&mut params, &grads, &mut adam)?;
        kernel.net.set_params_from_vec(&params)?;
        anchor = b_anc;
    }

    Ok(TrainedKernel {
        kernel,
        anchor,
        losses,
    })
}

/// One trial's record: the two discrepancies and the membership indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub m_candidate: f64,
    pub m_non_member: f64,
    pub indicator: bool,
}

/// Per-kernel detection output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub kernel_id: u64,
    pub trials: Vec<TrialRecord>,
    /// Fraction of trials whose candidate discrepancy beat the non-member one.
    pub p_mem: f64,
}

/// Candidate detection: over `trials` Bernoulli trials, resample a candidate
/// batch and a non-member batch (fresh noise each trial), compare their
/// deep-kernel discrepancies against the anchor, and average the indicators.
///
/// Within a trial the two pools share the subsample and noise streams
/// (common random numbers): the paired comparison gets tighter, and for
/// equal-size pools swapping the candidate and non-member roles complements
/// every indicator exactly.
pub fn detect_candidate(
    d_can: &Matrix,
    d_non: &Matrix,
    anchor: &Matrix,
    kernel: &DeepKernel,
    encoder: &EncoderHandle,
    cfg: &DetectConfig,
    stream: RngStream,
) -> Result<DetectionReport> {
    cfg.validate()?;
    let b = cfg.batch_size;
    for (pool, context) in [
        (d_can, "detect candidate pool"),
        (d_non, "detect non-member pool"),
    ] {
        if pool.rows() < b {
            return Err(Error::SampleTooSmall {
                context,
                need: b,
                got: pool.rows(),
            });
        }
    }
    let ctx = AnchorContext::new(kernel, anchor)?;
    let mut trials = Vec::with_capacity(cfg.trials);
    let mut hits = 0usize;
    for t in 0..cfg.trials {
        let ts = stream.substream(ns::TRIAL).substream(t as u64);
        let (idx_stream, noise_stream) = (ts.substream(0), ts.substream(1));
        let draw = |pool: &Matrix| -> Result<Matrix> {
            let batch = subsample(pool, b, idx_stream, false)?;
            let noised = add_gaussian_noise(&batch, cfg.noise_sigma, noise_stream)?;
            encoder.encode(&noised)
        };
        let b_can = draw(d_can)?;
        let b_non = draw(d_non)?;
        let m1 = ctx.mmd2_u_against(kernel, &b_can)?;
        let m2 = ctx.mmd2_u_against(kernel, &b_non)?;
        let indicator = m1 < m2;
        hits += indicator as usize;
        trials.push(TrialRecord {
            m_candidate: m1,
            m_non_member: m2,
            indicator,
        });
    }
    Ok(DetectionReport {
        kernel_id: 0,
        trials,
        p_mem: hits as f64 / cfg.trials as f64,
    })
}

/// Ensemble decision output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub members: Vec<DetectionReport>,
    pub p_mem_mean: f64,
    pub tau: f64,
    /// 1 iff the mean membership probability reached tau.
    pub decision: bool,
}

/// Full ensembling procedure: train `h` kernels on independent streams, run
/// detection with each, average the per-kernel membership probabilities, and
/// threshold at `tau`.
#[allow(clippy::too_many_arguments)] // mirrors the procedure's input list
pub fn ensemble_detect(
    d_can: &Matrix,
    d_non: &Matrix,
    student: &dyn Generator,
    encoder: &EncoderHandle,
    h: usize,
    tau: f64,
    train_cfg: &TrainConfig,
    detect_cfg: &DetectConfig,
    stream: RngStream,
) -> Result<EnsembleReport> {
    if h < 1 {
        return Err(Error::InvalidArgument("ensemble size must be >= 1".into()));
    }
    let members: Vec<Result<DetectionReport>> = (0..h)
        .into_par_iter()
        .map(|i| {
            let ms = stream.substream(ns::MEMBER).substream(i as u64);
            let trained = train_deep_kernel(d_non, student, encoder, train_cfg, ms.substream(0))?;
            let mut report = detect_candidate(
                d_can,
                d_non,
                &trained.anchor,
                &trained.kernel,
                encoder,
                detect_cfg,
                ms.substream(1),
            )?;
            report.kernel_id = i as u64;
            Ok(report)
        })
        .collect();
    let members: Result<Vec<DetectionReport>> = members.into_iter().collect();
    let members = members?;
    finish_ensemble(members, tau)
}

/// Detection half of the ensemble over already-trained kernels; the
/// experiment runner trains once and reuses kernels across rounds.
pub fn ensemble_detect_with_kernels(
    kernels: &[TrainedKernel],
    d_can: &Matrix,
    d_non: &Matrix,
    encoder: &EncoderHandle,
    tau: f64,
    detect_cfg: &DetectConfig,
    stream: RngStream,
) -> Result<EnsembleReport> {
    if kernels.is_empty() {
        return Err(Error::InvalidArgument("ensemble size must be >= 1".into()));
    }
    let mut members = Vec::with_capacity(kernels.len());
    for (i, trained) in kernels.iter().enumerate() {
        let ms = stream.substream(ns::MEMBER).substream(i as u64);
        let mut report = detect_candidate(
            d_can,
            d_non,
            &trained.anchor,
            &trained.kernel,
            encoder,
            detect_cfg,
            ms.substream(1),
        )?;
        report.kernel_id = i as u64;
        members.push(report);
    }
    finish_ensemble(members, tau)
}

fn finish_ensemble(members: Vec<DetectionReport>, tau: f64) -> Result<EnsembleReport> {
    let p_mem_mean = members.iter().map(|m| m.p_mem).sum::<f64>() / members.len() as f64;
    Ok(EnsembleReport {
        p_mem_mean,
        members,
        tau,
        decision: p_mem_mean >= tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gaussian_noise;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 5,
            batch_size: 16,
            hidden_dim: 8,
            depth: 1,
            out_dim: 4,
            gen_pool_size: Some(64),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn train_rejects_zero_epochs() {
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let non = gaussian_noise(64, 2, 1.0, RngStream::new(0)).unwrap();
        let gen = gaussian_noise(64, 2, 1.0, RngStream::new(1)).unwrap();
        let err = train_deep_kernel_from_pool(
            &non,
            &gen,
            &EncoderHandle::Identity,
            &cfg,
            RngStream::new(2),
        );
        assert!(err.is_err());
    }

    #[test]
    fn train_rejects_small_pools() {
        let cfg = small_cfg();
        let non = gaussian_noise(8, 2, 1.0, RngStream::new(0)).unwrap();
        let gen = gaussian_noise(64, 2, 1.0, RngStream::new(1)).unwrap();
        assert!(train_deep_kernel_from_pool(
            &non,
            &gen,
            &EncoderHandle::Identity,
            &cfg,
            RngStream::new(2)
        )
        .is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = small_cfg();
        let non = gaussian_noise(64, 2, 1.0, RngStream::new(3)).unwrap();
        let gen = gaussian_noise(64, 2, 1.0, RngStream::new(4)).unwrap();
        let run = || {
            train_deep_kernel_from_pool(
                &non,
                &gen,
                &EncoderHandle::Identity,
                &cfg,
                RngStream::new(5),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn detection_single_trial_is_binary() {
        let cfg = small_cfg();
        let non = gaussian_noise(64, 2, 1.0, RngStream::new(6)).unwrap();
        let gen = gaussian_noise(64, 2, 1.0, RngStream::new(7)).unwrap();
        let trained = train_deep_kernel_from_pool(
            &non,
            &gen,
            &EncoderHandle::Identity,
            &cfg,
            RngStream::new(8),
        )
        .unwrap();
        let can = gaussian_noise(32, 2, 1.0, RngStream::new(9)).unwrap();
        let dcfg = DetectConfig {
            trials: 1,
            batch_size: 16,
            ..DetectConfig::default()
        };
        let report = detect_candidate(
            &can,
            &non,
            &trained.anchor,
            &trained.kernel,
            &EncoderHandle::Identity,
            &dcfg,
            RngStream::new(10),
        )
        .unwrap();
        assert!(report.p_mem == 0.0 || report.p_mem == 1.0);
        assert_eq!(report.trials.len(), 1);
    }

    #[test]
    fn swapping_pools_complements_indicators() {
        let cfg = small_cfg();
        let non = gaussian_noise(48, 2, 1.0, RngStream::new(11)).unwrap();
        let gen = gaussian_noise(64, 2, 1.0, RngStream::new(12)).unwrap();
        let trained = train_deep_kernel_from_pool(
            &non,
            &gen,
            &EncoderHandle::Identity,
            &cfg,
            RngStream::new(13),
        )
        .unwrap();
        // Same-size pools so the paired draws consume the stream identically.
        let pool_a = gaussian_noise(48, 2, 1.0, RngStream::new(14)).unwrap();
        let dcfg = DetectConfig {
            trials: 32,
            batch_size: 16,
            ..DetectConfig::default()
        };
        let fwd = detect_candidate(
            &pool_a,
            &non,
            &trained.anchor,
            &trained.kernel,
            &EncoderHandle::Identity,
            &dcfg,
            RngStream::new(15),
        )
        .unwrap();
        let rev = detect_candidate(
            &non,
            &pool_a,
            &trained.anchor,
            &trained.kernel,
            &EncoderHandle::Identity,
            &dcfg,
            RngStream::new(15),
        )
        .unwrap();
        for (f, r) in fwd.trials.iter().zip(&rev.trials) {
            assert_eq!(f.m_candidate, r.m_non_member);
            assert_eq!(f.m_non_member, r.m_candidate);
            assert_eq!(f.indicator, !r.indicator);
        }
        assert!((fwd.p_mem + rev.p_mem - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ensemble_of_one_matches_single_kernel() {
        let cfg = small_cfg();
        let non = gaussian_noise(64, 2, 1.0, RngStream::new(16)).unwrap();
        let gen_pool = gaussian_noise(128, 2, 1.0, RngStream::new(17)).unwrap();
        let can = gaussian_noise(32, 2, 1.0, RngStream::new(18)).unwrap();
        let dcfg = DetectConfig {
            trials: 16,
            batch_size: 16,
            ..DetectConfig::default()
        };
        let report = ensemble_detect(
            &can,
            &non,
            &gen_pool,
            &EncoderHandle::Identity,
            1,
            0.7,
            &cfg,
            &dcfg,
            RngStream::new(19),
        )
        .unwrap();
        assert_eq!(report.members.len(), 1);
        assert_eq!(report.p_mem_mean, report.members[0].p_mem);
        assert_eq!(report.decision, report.p_mem_mean >= 0.7);
    }

    #[test]
    fn ensemble_is_thread_count_invariant() {
        let cfg = small_cfg();
        let non = gaussian_noise(64, 2, 1.0, RngStream::new(20)).unwrap();
        let gen_pool = gaussian_noise(128, 2, 1.0, RngStream::new(21)).unwrap();
        let can = gaussian_noise(32, 2, 1.0, RngStream::new(22)).unwrap();
        let dcfg = DetectConfig {
            trials: 8,
            batch_size: 16,
            ..DetectConfig::default()
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                ensemble_detect(
                    &can,
                    &non,
                    &gen_pool,
                    &EncoderHandle::Identity,
                    3,
                    0.7,
                    &cfg,
                    &dcfg,
                    RngStream::new(23),
                )
                .unwrap()
            })
        };
        assert_eq!(run(1), run(2));
    }
}

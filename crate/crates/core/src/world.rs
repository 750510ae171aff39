//! Synthetic teacher/student distillation scenario.
//!
//! A ground-truth member mixture generates the teacher's training data. The
//! teacher is a mixture fitted to that data by EM; like the large generative
//! models it stands in for, it also partially memorizes its training rows
//! (a configurable fraction of its samples are near-copies of member rows).
//! The student is fitted by EM on teacher outputs only and never touches the
//! member data, which is exactly the barrier that kills instance-level
//! attacks while distributional alignment with the member data survives.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::numeric::{gaussian_noise, subsample_indices, Matrix, RngStream};

/// A Gaussian mixture with shared spherical covariance; the ground-truth
/// member and non-member distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    /// Component means, one row per component.
    pub means: Matrix,
    /// Shared covariance scale; each component is N(mean, scale^2 I).
    pub scale: f64,
    pub weights: Vec<f64>,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.means.rows() == 0 {
            return Err(Error::InvalidArgument(
                "mixture needs >= 1 component".into(),
            ));
        }
        if self.weights.len() != self.means.rows() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} components",
                self.weights.len(),
                self.means.rows()
            )));
        }
        if !(self.scale > 0.0) {
            return Err(Error::InvalidArgument(
                "mixture scale must be positive".into(),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "mixture weights must be nonnegative and sum to 1".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn sample(&self, n: usize, stream: RngStream) -> Matrix {
        let mut rng = stream.rng();
        let d = self.dim();
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            let k = sample_categorical(&self.weights, &mut rng);
            let row = out.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                let z: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
                *v = self.means.get(k, j) + self.scale * z;
            }
        }
        out
    }
}

fn sample_categorical(weights: &[f64], rng: &mut rand_chacha::ChaCha12Rng) -> usize {
    let u: f64 = rand::Rng::random(rng);
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// EM fitting controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Absolute tolerance on the per-sample mean log-likelihood.
    pub tol: f64,
    /// Restarts with fresh seeding before giving up.
    pub restarts: usize,
    pub var_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 100,
            tol: 1e-6,
            restarts: 5,
            var_floor: 1e-6,
        }
    }
}

/// Diagonal-covariance Gaussian mixture fitted by EM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedMixture {
    pub weights: Vec<f64>,
    pub means: Matrix,
    /// Per-component diagonal variances.
    pub vars: Matrix,
}

impl FittedMixture {
    /// Fit `k` components to `data` with k-means++-style seeding, restarting
    /// on non-convergence or degenerate components.
    pub fn fit_em(data: &Matrix, k: usize, cfg: &EmConfig, stream: RngStream) -> Result<Self> {
        if k == 0 || data.rows() < k {
            return Err(Error::InvalidArgument(format!(
                "cannot fit {k} components to {} rows",
                data.rows()
            )));
        }
        let attempts = cfg.restarts + 1;
        for attempt in 0..attempts {
            if let Some(model) = em_attempt(data, k, cfg, stream.substream(attempt as u64)) {
                return Ok(model);
            }
        }
        Err(Error::EmDidNotConverge { attempts })
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn sample(&self, n: usize, stream: RngStream) -> Matrix {
        let mut rng = stream.rng();
        let d = self.dim();
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            let k = sample_categorical(&self.weights, &mut rng);
            let row = out.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                let z: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
                *v = self.means.get(k, j) + self.vars.get(k, j).sqrt() * z;
            }
        }
        out
    }

    /// Mean per-sample log-likelihood.
    pub fn mean_log_likelihood(&self, data: &Matrix) -> f64 {
        let mut total = 0.0;
        for i in 0..data.rows() {
            total += self.log_density(data.row(i));
        }
        total / data.rows() as f64
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let k = self.weights.len();
        let mut terms = Vec::with_capacity(k);
        for c in 0..k {
            terms.push(
                self.weights[c].ln() + log_gaussian_diag(x, self.means.row(c), self.vars.row(c)),
            );
        }
        log_sum_exp(&terms)
    }
}

fn log_gaussian_diag(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&xi, &mi), &vi) in x.iter().zip(mean).zip(var) {
        let d = xi - mi;
        acc += -0.5 * ((2.0 * std::f64::consts::PI * vi).ln() + d * d / vi);
    }
    acc
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn em_attempt(data: &Matrix, k: usize, cfg: &EmConfig, stream: RngStream) -> Option<FittedMixture> {
    let (n, d) = data.shape();
    let mut rng = stream.rng();

    // k-means++ seeding: spread the initial means out distance-proportionally.
    let mut centers: Vec<usize> = vec![rand::Rng::random_range(&mut rng, 0..n)];
    let mut min_d2 = vec![f64::INFINITY; n];
    while centers.len() < k {
        let c = data.row(*centers.last().unwrap());
        for i in 0..n {
            let mut acc = 0.0;
            for (a, b) in data.row(i).iter().zip(c) {
                acc += (a - b) * (a - b);
            }
            min_d2[i] = min_d2[i].min(acc);
        }
        let total: f64 = min_d2.iter().sum();
        let next = if total > 0.0 {
            let mut u: f64 = rand::Rng::random(&mut rng);
            u *= total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rand::Rng::random_range(&mut rng, 0..n)
        };
        centers.push(next);
    }
    let mut means = data.take_rows(&centers);

    // Lloyd iterations before EM; hard assignments keep low-variance
    // dimensions from dominating the first soft E-step.
    let mut assignment = vec![0usize; n];
    for _ in 0..20 {
        let mut changed = false;
        for i in 0..n {
            let x = data.row(i);
            let mut best = (f64::INFINITY, 0usize);
            for c in 0..k {
                let mut acc = 0.0;
                for (a, b) in x.iter().zip(means.row(c)) {
                    acc += (a - b) * (a - b);
                }
                if acc < best.0 {
                    best = (acc, c);
                }
            }
            if assignment[i] != best.1 {
                assignment[i] = best.1;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = Matrix::zeros(k, d);
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            for (s, &v) in sums.row_mut(c).iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }
        if counts.contains(&0) {
            return None; // empty cluster; restart with fresh seeding
        }
        for c in 0..k {
            for j in 0..d {
                means.set(c, j, sums.get(c, j) / counts[c] as f64);
            }
        }
        if !changed {
            break;
        }
    }

    // Initialize the mixture from the clusters.
    let mut counts = vec![0usize; k];
    for &c in &assignment {
        counts[c] += 1;
    }
    let mut vars = Matrix::zeros(k, d);
    for i in 0..n {
        let c = assignment[i];
        for j in 0..d {
            let dd = data.get(i, j) - means.get(c, j);
            vars.set(c, j, vars.get(c, j) + dd * dd);
        }
    }
    for c in 0..k {
        for j in 0..d {
            vars.set(c, j, (vars.get(c, j) / counts[c] as f64).max(cfg.var_floor));
        }
    }
    let mut weights: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();

    let mut prev_ll = f64::NEG_INFINITY;
    let mut resp = Matrix::zeros(n, k);
    for _ in 0..cfg.max_iter {
        // E-step in log space.
        let mut ll_total = 0.0;
        for i in 0..n {
            let x = data.row(i);
            let mut terms = Vec::with_capacity(k);
            for c in 0..k {
                terms.push(weights[c].ln() + log_gaussian_diag(x, means.row(c), vars.row(c)));
            }
            let lse = log_sum_exp(&terms);
            if !lse.is_finite() {
                return None;
            }
            ll_total += lse;
            for c in 0..k {
                resp.set(i, c, (terms[c] - lse).exp());
            }
        }
        let ll = ll_total / n as f64;

        // M-step.
        for c in 0..k {
            let mut nk = 0.0;
            for i in 0..n {
                nk += resp.get(i, c);
            }
            if nk < 1e-8 * n as f64 {
                return None; // degenerate component; restart
            }
            weights[c] = nk / n as f64;
            for j in 0..d {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += resp.get(i, c) * data.get(i, j);
                }
                means.set(c, j, acc / nk);
            }
            for j in 0..d {
                let mut acc = 0.0;
                for i in 0..n {
                    let dd = data.get(i, j) - means.get(c, j);
                    acc += resp.get(i, c) * dd * dd;
                }
                vars.set(c, j, (acc / nk).max(cfg.var_floor));
            }
        }

        if (ll - prev_ll).abs() < cfg.tol {
            return Some(FittedMixture {
                weights,
                means,
                vars,
            });
        }
        prev_ll = ll;
    }
    None
}

/// The teacher generator: its EM fit plus a memorization channel that emits
/// jittered copies of training rows at the configured rate, standing in for
/// the per-instance overfitting of large generative teachers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherModel {
    pub mixture: FittedMixture,
    pub training_data: Matrix,
    /// Fraction of generated samples drawn as near-copies of training rows.
    pub overfit_rate: f64,
    /// Standard deviation of the jitter applied to a regurgitated row.
    pub overfit_jitter: f64,
}

impl TeacherModel {
    pub fn sample(&self, n: usize, stream: RngStream) -> Matrix {
        let mut rng = stream.rng();
        let d = self.mixture.dim();
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            let u: f64 = rand::Rng::random(&mut rng);
            let row_src: Vec<f64> = if u < self.overfit_rate {
                let idx = rand::Rng::random_range(&mut rng, 0..self.training_data.rows());
                let base = self.training_data.row(idx);
                base.iter()
                    .map(|&v| {
                        let z: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
                        v + self.overfit_jitter * z
                    })
                    .collect()
            } else {
                let k = sample_categorical(&self.mixture.weights, &mut rng);
                (0..d)
                    .map(|j| {
                        let z: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
                        self.mixture.means.get(k, j) + self.mixture.vars.get(k, j).sqrt() * z
                    })
                    .collect()
            };
            out.row_mut(i).copy_from_slice(&row_src);
        }
        out
    }
}

/// Fixed input encoder applied before kernel evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EncoderHandle {
    Identity,
    /// Fixed random linear projection to `matrix.cols()` dimensions.
    Projection {
        matrix: Matrix,
    },
}

impl EncoderHandle {
    /// A random projection with N(0, 1/d_out) entries, fixed at creation.
    pub fn random_projection(in_dim: usize, out_dim: usize, stream: RngStream) -> Result<Self> {
        let scale = 1.0 / (out_dim as f64).sqrt();
        let m = gaussian_noise(in_dim, out_dim, scale, stream)?;
        Ok(EncoderHandle::Projection { matrix: m })
    }

    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            EncoderHandle::Identity => Ok(x.clone()),
            EncoderHandle::Projection { matrix } => x.matmul(matrix),
        }
    }

    pub fn out_dim(&self, in_dim: usize) -> usize {
        match self {
            EncoderHandle::Identity => in_dim,
            EncoderHandle::Projection { matrix } => matrix.cols(),
        }
    }
}

/// Encoder choice recorded in a world spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EncoderSpec {
    #[default]
    Identity,
    RandomProjection {
        out_dim: usize,
    },
}

/// Full description of one synthetic distillation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub dim: usize,
    pub member: MixtureSpec,
    pub non_member: MixtureSpec,
    /// Components of the teacher's EM fit.
    pub k_teacher: usize,
    /// Member rows sampled to train the teacher.
    pub n_mem: usize,
    /// Non-member rows sampled into the auxiliary pool.
    pub n_non: usize,
    /// Teacher outputs generated for distillation (and student outputs drawn).
    pub n_gen: usize,
    /// Components of the student's EM fit.
    pub k_student: usize,
    pub teacher_overfit_rate: f64,
    pub teacher_overfit_jitter: f64,
    pub encoder: EncoderSpec,
    pub em: EmConfig,
    pub seed: u64,
}

impl WorldSpec {
    /// The reference world: 8 dimensions, 4-component member mixture, the
    /// non-member mixture shifted by 1.0 per component, 4000-row budgets,
    /// 4-component teacher and student fits.
    pub fn reference(seed: u64) -> Self {
        let d = 8;
        let k = 4;
        let stream = RngStream::new(seed).substream(0xD317);
        // Component means spread at radius-2 scale, unit covariance.
        let means = gaussian_noise(k, d, 2.0, stream.substream(1)).expect("sigma > 0");
        let weights = random_weights(k, stream.substream(2));
        let member = MixtureSpec {
            means,
            scale: 1.0,
            weights: weights.clone(),
        };
        // Non-members: every mean shifted by a random direction of norm 1.0,
        // weights re-drawn.
        let mut non_means = member.means.clone();
        for c in 0..k {
            let dir = random_unit_vector(d, stream.substream(3).substream(c as u64));
            let row = non_means.row_mut(c);
            for (v, u) in row.iter_mut().zip(&dir) {
                *v += u;
            }
        }
        let non_member = MixtureSpec {
            means: non_means,
            scale: 1.0,
            weights: random_weights(k, stream.substream(4)),
        };
        WorldSpec {
            dim: d,
            member,
            non_member,
            k_teacher: k,
            n_mem: 4000,
            n_non: 2000,
            n_gen: 4000,
            k_student: k,
            teacher_overfit_rate: 0.4,
            teacher_overfit_jitter: 0.12,
            encoder: EncoderSpec::Identity,
            em: EmConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.member.validate()?;
        self.non_member.validate()?;
        if self.member.dim() != self.dim || self.non_member.dim() != self.dim {
            return Err(Error::InvalidArgument(
                "mixture dimensions disagree with the world dimension".into(),
            ));
        }
        if self.k_teacher == 0 || self.k_student == 0 {
            return Err(Error::InvalidArgument("fits need >= 1 component".into()));
        }
        if self.n_mem < self.k_teacher || self.n_gen < self.k_student {
            return Err(Error::InvalidArgument(
                "sample budgets are smaller than the fitted component counts".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.teacher_overfit_rate) || self.teacher_overfit_jitter < 0.0 {
            return Err(Error::InvalidArgument(
                "teacher overfit rate must lie in [0,1] with nonnegative jitter".into(),
            ));
        }
        // Member and non-member distributions must genuinely differ: at least
        // one component mean shifted by >= 0.5 * covariance scale.
        if self.member.means.rows() == self.non_member.means.rows() {
            let threshold = 0.5 * self.member.scale;
            let mut max_shift = 0.0f64;
            for c in 0..self.member.means.rows() {
                let shift: f64 = self
                    .member
                    .means
                    .row(c)
                    .iter()
                    .zip(self.non_member.means.row(c))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                max_shift = max_shift.max(shift);
            }
            if max_shift < threshold {
                return Err(Error::InvalidArgument(format!(
                    "member and non-member means are too close: max shift {max_shift:.4} < {threshold:.4}"
                )));
            }
        }
        Ok(())
    }
}

fn random_weights(k: usize, stream: RngStream) -> Vec<f64> {
    let mut rng = stream.rng();
    // Uniform draws floored away from zero, normalized.
    let raw: Vec<f64> = (0..k)
        .map(|_| 0.5 + rand::Rng::random::<f64>(&mut rng))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn random_unit_vector(d: usize, stream: RngStream) -> Vec<f64> {
    let g = gaussian_noise(1, d, 1.0, stream).expect("sigma > 0");
    let norm: f64 = g.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
    g.row(0).iter().map(|v| v / norm).collect()
}

/// One realized world: datasets plus the fitted teacher and student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldInstance {
    pub spec: WorldSpec,
    pub d_mem: Dataset,
    pub d_non: Dataset,
    pub d_teacher_gen: Dataset,
    pub d_student_gen: Dataset,
    pub teacher: TeacherModel,
    pub student: FittedMixture,
    pub encoder: EncoderHandle,
}

mod stream_ns {
    pub const MEMBER: u64 = 1;
    pub const NON_MEMBER: u64 = 2;
    pub const TEACHER_FIT: u64 = 3;
    pub const TEACHER_GEN: u64 = 4;
    pub const STUDENT_FIT: u64 = 5;
    pub const STUDENT_GEN: u64 = 6;
    pub const ENCODER: u64 = 7;
    pub const HELD_OUT_NON: u64 = 8;
}

/// Realize a world: sample the pools, fit the teacher on members, generate,
/// fit the student on teacher outputs only, and draw the student pool.
///
/// The student fit is handed nothing but the teacher-generated matrix, so the
/// "student never sees members" guarantee is structural.
pub fn build_world(spec: &WorldSpec) -> Result<WorldInstance> {
    spec.validate()?;
    let root = RngStream::new(spec.seed);

    let d_mem = spec
        .member
        .sample(spec.n_mem, root.substream(stream_ns::MEMBER));
    let d_non = spec
        .non_member
        .sample(spec.n_non, root.substream(stream_ns::NON_MEMBER));

    let teacher_mixture = FittedMixture::fit_em(
        &d_mem,
        spec.k_teacher,
        &spec.em,
        root.substream(stream_ns::TEACHER_FIT),
    )?;
    let teacher = TeacherModel {
        mixture: teacher_mixture,
        training_data: d_mem.clone(),
        overfit_rate: spec.teacher_overfit_rate,
        overfit_jitter: spec.teacher_overfit_jitter,
    };
    let d_teacher_gen = teacher.sample(spec.n_gen, root.substream(stream_ns::TEACHER_GEN));

    let student = FittedMixture::fit_em(
        &d_teacher_gen,
        spec.k_student,
        &spec.em,
        root.substream(stream_ns::STUDENT_FIT),
    )?;
    let d_student_gen = student.sample(spec.n_gen, root.substream(stream_ns::STUDENT_GEN));

    let encoder = match spec.encoder {
        EncoderSpec::Identity => EncoderHandle::Identity,
        EncoderSpec::RandomProjection { out_dim } => {
            EncoderHandle::random_projection(spec.dim, out_dim, root.substream(stream_ns::ENCODER))?
        }
    };

    Ok(WorldInstance {
        spec: spec.clone(),
        d_mem: Dataset::new(d_mem, Provenance::Member),
        d_non: Dataset::new(d_non, Provenance::NonMember),
        d_teacher_gen: Dataset::new(d_teacher_gen, Provenance::Generated),
        d_student_gen: Dataset::new(d_student_gen, Provenance::Generated),
        teacher,
        student,
        encoder,
    })
}

impl WorldInstance {
    /// Fresh non-member rows, held out from `d_non`.
    pub fn sample_non_members(&self, n: usize, stream: RngStream) -> Matrix {
        self.spec
            .non_member
            .sample(n, stream.substream(stream_ns::HELD_OUT_NON))
    }
}

/// Candidate dataset with member ratio `rho`: ceil(rho * size) member rows
/// subsampled without replacement, the rest fresh non-member draws, shuffled.
pub fn make_candidate(
    world: &WorldInstance,
    rho: f64,
    size: usize,
    stream: RngStream,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!(
            "member ratio must lie in [0, 1], got {rho}"
        )));
    }
    let n_members = (rho * size as f64).ceil() as usize;
    let n_members = n_members.min(size);
    if n_members > world.d_mem.rows() {
        return Err(Error::SampleTooSmall {
            context: "make_candidate member pool",
            need: n_members,
            got: world.d_mem.rows(),
        });
    }
    let member_idx = subsample_indices(world.d_mem.rows(), n_members, stream.substream(1), false)?;
    let members = world.d_mem.matrix.take_rows(&member_idx);
    let fresh = world.sample_non_members(size - n_members, stream.substream(2));
    let stacked = if n_members == 0 {
        fresh
    } else if n_members == size {
        members
    } else {
        members.vstack(&fresh)?
    };
    let order = subsample_indices(size, size, stream.substream(3), false)?;
    Ok(Dataset::new(
        stacked.take_rows(&order),
        Provenance::Candidate,
    ))
}

/// Fraction of random subset pairs for which the student-generated pool is
/// MMD-closer to the member pool than to the non-member pool, under a fixed
/// Gaussian kernel with median-heuristic bandwidth. This is the memory-chain
/// measurement.
pub fn memory_chain_win_rate(
    world: &WorldInstance,
    pairs: usize,
    subset: usize,
    stream: RngStream,
) -> Result<f64> {
    use crate::kernel::{gaussian_gram, median_heuristic_capped};
    use crate::mmd::mmd2_u;
    use crate::numeric::subsample;

    let pool = world
        .d_student_gen
        .matrix
        .vstack(&world.d_mem.matrix)?
        .vstack(&world.d_non.matrix)?;
    let gamma = median_heuristic_capped(&pool, 256, stream.substream(0))?;

    let mut wins = 0usize;
    for t in 0..pairs {
        let s = stream.substream(1 + t as u64);
        let gen = subsample(&world.d_student_gen.matrix, subset, s.substream(0), false)?;
        let mem = subsample(&world.d_mem.matrix, subset, s.substream(1), false)?;
        let non = subsample(
            &world.d_non.matrix,
            subset.min(world.d_non.rows()),
            s.substream(2),
            false,
        )?;
        let k_gg = gaussian_gram(&gen, &gen, gamma)?;
        let k_mm = gaussian_gram(&mem, &mem, gamma)?;
        let k_gm = gaussian_gram(&gen, &mem, gamma)?;
        let k_nn = gaussian_gram(&non, &non, gamma)?;
        let k_gn = gaussian_gram(&gen, &non, gamma)?;
        let to_mem = mmd2_u(&k_gg, &k_mm, &k_gm)?;
        let to_non = mmd2_u(&k_gg, &k_nn, &k_gn)?;
        if to_mem < to_non {
            wins += 1;
        }
    }
    Ok(wins as f64 / pairs as f64)
}

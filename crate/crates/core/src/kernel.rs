//! Gaussian base kernels and the composite deep kernel.
//!
//! The deep kernel on a sample pair (a, b) is
//!
//! ```text
//! k(a, b) = [(1 - eps) * k_base(theta(a), theta(b)) + eps] * q_base(a, b)
//! ```
//!
//! where `theta` is the feature net, `k_base` is Gaussian with bandwidth
//! `gamma_phi` on features, and `q_base` is Gaussian with bandwidth `gamma_q`
//! on the raw inputs. The mixing weight `eps` keeps the kernel characteristic
//! even if the learned features collapse.
//!
//! Bandwidth convention, pinned once for the whole crate:
//! `k(d) = exp(-d^2 / (2 gamma^2))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{FeatureNet, ForwardCache};
use crate::numeric::{pairwise_sq_dists, subsample, Matrix, RngStream};

/// Gram matrix of the Gaussian kernel exp(-||a_i - b_j||^2 / (2 gamma^2)).
pub fn gaussian_gram(a: &Matrix, b: &Matrix, gamma: f64) -> Result<Matrix> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kernel bandwidth must be positive, got {gamma}"
        )));
    }
    let d2 = pairwise_sq_dists(a, b)?;
    let inv = 1.0 / (2.0 * gamma * gamma);
    Ok(d2.map(|d| (-d * inv).exp()))
}

fn gram_from_sq_dists(d2: &Matrix, gamma: f64) -> Matrix {
    let inv = 1.0 / (2.0 * gamma * gamma);
    d2.map(|d| (-d * inv).exp())
}

/// Median of the pairwise Euclidean distances between distinct rows.
///
/// The usual default for Gaussian bandwidths. Returns 1.0 for degenerate
/// inputs (fewer than two rows, or all rows identical).
pub fn median_heuristic(x: &Matrix) -> Result<f64> {
    let n = x.rows();
    if n < 2 {
        return Ok(1.0);
    }
    let d2 = pairwise_sq_dists(x, x)?;
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(d2.get(i, j).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = dists[dists.len() / 2];
    Ok(if med > 0.0 { med } else { 1.0 })
}

/// Median heuristic over a uniformly subsampled set of at most `cap` rows,
/// so large pools stay cheap. Deterministic given the stream.
pub fn median_heuristic_capped(x: &Matrix, cap: usize, stream: RngStream) -> Result<f64> {
    if x.rows() <= cap {
        median_heuristic(x)
    } else {
        median_heuristic(&subsample(x, cap, stream, false)?)
    }
}

/// The learned kernel: a feature net plus mixing weight and two bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepKernel {
    pub net: FeatureNet,
    /// Mixing weight toward the raw-input kernel, in [0, 1].
    pub epsilon: f64,
    /// Bandwidth of the Gaussian kernel on net features.
    pub gamma_phi: f64,
    /// Bandwidth of the Gaussian kernel on raw inputs.
    pub gamma_q: f64,
}

impl DeepKernel {
    pub fn new(net: FeatureNet, epsilon: f64, gamma_phi: f64, gamma_q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in [0, 1], got {epsilon}"
            )));
        }
        if !(gamma_phi > 0.0) || !(gamma_q > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bandwidths must be positive, got gamma_phi={gamma_phi}, gamma_q={gamma_q}"
            )));
        }
        Ok(DeepKernel {
            net,
            epsilon,
            gamma_phi,
            gamma_q,
        })
    }

    /// Deep-kernel Gram matrix between the rows of `a` and `b`.
    pub fn deep_gram(&self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        Ok(self.deep_gram_cached(a, b)?.gram)
    }

    /// Gram matrix plus every intermediate needed to backpropagate through it.
    pub fn deep_gram_cached(&self, a: &Matrix, b: &Matrix) -> Result<DeepGramCache> {
        self.net.check_input(a, "deep_gram")?;
        self.net.check_input(b, "deep_gram")?;
        let (feat_a, cache_a) = self.net.forward_cached(a)?;
        let (feat_b, cache_b) = self.net.forward_cached(b)?;
        self.deep_gram_from_features(a, b, feat_a, feat_b, Some((cache_a, cache_b)))
    }

    /// Same as `deep_gram_cached` but with features already computed (used
    /// when one side, typically the anchor batch, is evaluated many times).
    pub fn deep_gram_from_features(
        &self,
        a: &Matrix,
        b: &Matrix,
        feat_a: Matrix,
        feat_b: Matrix,
        caches: Option<(ForwardCache, ForwardCache)>,
    ) -> Result<DeepGramCache> {
        let k_phi = {
            let d2 = pairwise_sq_dists(&feat_a, &feat_b)?;
            gram_from_sq_dists(&d2, self.gamma_phi)
        };
        let q = gaussian_gram(a, b, self.gamma_q)?;
        let mut gram = Matrix::zeros(a.rows(), b.rows());
        let eps = self.epsilon;
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                let v = ((1.0 - eps) * k_phi.get(i, j) + eps) * q.get(i, j);
                gram.set(i, j, v);
            }
        }
        Ok(DeepGramCache {
            feat_a,
            feat_b,
            caches,
            k_phi,
            q,
            gram,
        })
    }
}

/// Intermediates of one deep-kernel Gram evaluation.
pub struct DeepGramCache {
    pub feat_a: Matrix,
    pub feat_b: Matrix,
    pub caches: Option<(ForwardCache, ForwardCache)>,
    /// Gaussian kernel on features.
    pub k_phi: Matrix,
    /// Gaussian kernel on raw inputs.
    pub q: Matrix,
    pub gram: Matrix,
}

impl DeepGramCache {
    /// Pull a loss gradient on the Gram entries back to gradients on the
    /// feature batches. `coeff[i][j]` is dLoss/dGram[i][j]; the returned pair
    /// is (dLoss/dfeat_a, dLoss/dfeat_b).
    ///
    /// Chain: gram = [(1-eps) k_phi + eps] * q with k_phi = exp(-D/(2 g^2))
    /// and D the pairwise squared feature distances, so
    /// dLoss/dD = -coeff * (1-eps) * q * k_phi / (2 g^2).
    pub fn backprop_to_features(&self, coeff: &Matrix, kernel: &DeepKernel) -> (Matrix, Matrix) {
        let (n, m) = self.gram.shape();
        let scale = -(1.0 - kernel.epsilon) / (2.0 * kernel.gamma_phi * kernel.gamma_phi);
        // w = dLoss/dD, where D[i][j] = ||feat_a_i - feat_b_j||^2.
        let mut w = Matrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                w.set(
                    i,
                    j,
                    coeff.get(i, j) * scale * self.q.get(i, j) * self.k_phi.get(i, j),
                );
            }
        }
        // dD/dfeat_a_i = 2 (feat_a_i - feat_b_j), dD/dfeat_b_j = -2 (...).
        let dim = self.feat_a.cols();
        let mut grad_a = Matrix::zeros(n, dim);
        let mut grad_b = Matrix::zeros(m, dim);
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..m {
                row_sum += w.get(i, j);
            }
            let fa = self.feat_a.row(i);
            let ga = grad_a.row_mut(i);
            for (k, g) in ga.iter_mut().enumerate() {
                *g += 2.0 * row_sum * fa[k];
            }
        }
        // grad_a -= 2 w feat_b; grad_b = 2 (colsum diag) feat_b - 2 w^T feat_a.
        let w_fb = w.matmul(&self.feat_b).expect("shape checked");
        for i in 0..n {
            let ga = grad_a.row_mut(i);
            for (k, g) in ga.iter_mut().enumerate() {
                *g -= 2.0 * w_fb.get(i, k);
            }
        }
        let wt_fa = w.matmul_tn(&self.feat_a).expect("shape checked");
        for j in 0..m {
            let mut col_sum = 0.0;
            for i in 0..n {
                col_sum += w.get(i, j);
            }
            let fb = self.feat_b.row(j);
            let gb = grad_b.row_mut(j);
            for (k, g) in gb.iter_mut().enumerate() {
                *g = 2.0 * col_sum * fb[k] - 2.0 * wt_fa.get(j, k);
            }
        }
        (grad_a, grad_b)
    }
}

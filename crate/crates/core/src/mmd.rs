//! Unbiased MMD^2 U-statistics, the H-matrix, the regularized variance
//! estimator, and gradients of the kernel-training objective.
//!
//! Estimator convention: the diagonal of the within-sample Gram matrices is
//! always excluded. For equal sample sizes the cross term also excludes paired
//! indices, so the estimator coincides exactly with the H-matrix U-statistic
//! `(1/(n(n-1))) sum_{i != j} H_ij`; for unequal sizes it uses the full cross
//! mean `2/(nm) sum_ij`. Both forms are unbiased.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::DeepKernel;
use crate::numeric::Matrix;

/// An unbiased MMD^2 value together with its regularized variance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    /// Unbiased MMD^2 estimate; may be negative.
    pub value: f64,
    /// Regularized variance estimate, always >= lambda.
    pub variance: f64,
    /// Per-sample-set size.
    pub n: usize,
}

fn check_square(m: &Matrix, context: &'static str) -> Result<usize> {
    if m.rows() != m.cols() {
        return Err(Error::DimensionMismatch {
            context,
            detail: format!("expected square matrix, got {}x{}", m.rows(), m.cols()),
        });
    }
    Ok(m.rows())
}

fn offdiag_mean(k: &Matrix) -> f64 {
    let n = k.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += k.get(i, j);
            }
        }
    }
    acc / (n * (n - 1)) as f64
}

fn full_mean(k: &Matrix) -> f64 {
    k.data().iter().sum::<f64>() / (k.rows() * k.cols()) as f64
}

/// Unbiased MMD^2 from precomputed Gram matrices.
pub fn mmd2_u(kxx: &Matrix, kyy: &Matrix, kxy: &Matrix) -> Result<f64> {
    let n = check_square(kxx, "mmd2_u")?;
    let m = check_square(kyy, "mmd2_u")?;
    if kxy.rows() != n || kxy.cols() != m {
        return Err(Error::DimensionMismatch {
            context: "mmd2_u",
            detail: format!(
                "cross gram is {}x{}, expected {n}x{m}",
                kxy.rows(),
                kxy.cols()
            ),
        });
    }
    if n < 2 || m < 2 {
        return Err(Error::SampleTooSmall {
            context: "mmd2_u",
            need: 2,
            got: n.min(m),
        });
    }
    let cross = if n == m {
        offdiag_mean(kxy)
    } else {
        full_mean(kxy)
    };
    Ok(offdiag_mean(kxx) + offdiag_mean(kyy) - 2.0 * cross)
}

/// H-matrix of the paired U-statistic:
/// `H_ij = k(x_i,x_j) + k(y_i,y_j) - k(x_i,y_j) - k(y_i,x_j)`.
///
/// Requires equal sample sizes. Its off-diagonal mean reproduces `mmd2_u`.
pub fn h_matrix(kxx: &Matrix, kyy: &Matrix, kxy: &Matrix) -> Result<Matrix> {
    let n = check_square(kxx, "h_matrix")?;
    let m = check_square(kyy, "h_matrix")?;
    if n != m || kxy.rows() != n || kxy.cols() != n {
        return Err(Error::DimensionMismatch {
            context: "h_matrix",
            detail: format!(
                "requires equal sizes, got {n}, {m}, {}x{}",
                kxy.rows(),
                kxy.cols()
            ),
        });
    }
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = kxx.get(i, j) + kyy.get(i, j) - kxy.get(i, j) - kxy.get(j, i);
            h.set(i, j, v);
        }
    }
    Ok(h)
}

/// Regularized variance estimate of the paired U-statistic:
/// `(4/n^3) sum_i (sum_j H_ij)^2 - (4/n^4) (sum_ij H_ij)^2 + lambda`.
///
/// Evaluated in the algebraically identical centered form
/// `(4/n^3) sum_i (R_i - mean(R))^2 + lambda`, which cannot fall below
/// `lambda` and cancels exactly for constant H.
pub fn variance_reg(h: &Matrix, lambda: f64) -> Result<f64> {
    let n = check_square(h, "variance_reg")?;
    if n < 2 {
        return Err(Error::SampleTooSmall {
            context: "variance_reg",
            need: 2,
            got: n,
        });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let row_sums: Vec<f64> = (0..n).map(|i| h.row(i).iter().sum()).collect();
    let mean = row_sums.iter().sum::<f64>() / n as f64;
    let centered_sq: f64 = row_sums.iter().map(|r| (r - mean) * (r - mean)).sum();
    Ok(4.0 / (n as f64).powi(3) * centered_sq + lambda)
}

/// The MMD estimate normalized by its estimated standard deviation.
pub fn normalized_stat(e: &MmdEstimate) -> f64 {
    e.value / e.variance.sqrt()
}

/// Full estimate (value + regularized variance) of the deep-kernel MMD
/// between two equal-size sample sets.
pub fn mmd_estimate(
    kernel: &DeepKernel,
    x: &Matrix,
    y: &Matrix,
    lambda: f64,
) -> Result<MmdEstimate> {
    if x.rows() != y.rows() {
        return Err(Error::DimensionMismatch {
            context: "mmd_estimate",
            detail: format!(
                "needs equal sample sizes, got {} and {}",
                x.rows(),
                y.rows()
            ),
        });
    }
    let kxx = kernel.deep_gram(x, x)?;
    let kyy = kernel.deep_gram(y, y)?;
    let kxy = kernel.deep_gram(x, y)?;
    let value = mmd2_u(&kxx, &kyy, &kxy)?;
    let h = h_matrix(&kxx, &kyy, &kxy)?;
    let variance = variance_reg(&h, lambda)?;
    Ok(MmdEstimate {
        value,
        variance,
        n: x.rows(),
    })
}

/// Unbiased deep-kernel MMD^2 between two sample sets.
pub fn mmd2_u_deep(kernel: &DeepKernel, x: &Matrix, y: &Matrix) -> Result<f64> {
    let kxx = kernel.deep_gram(x, x)?;
    let kyy = kernel.deep_gram(y, y)?;
    let kxy = kernel.deep_gram(x, y)?;
    mmd2_u(&kxx, &kyy, &kxy)
}

/// Which scalar the kernel trainer descends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `mmd2_u(anchor, member proxy) - mmd2_u(anchor, non-member)`, minimized.
    #[default]
    DiscrepancyDifference,
    /// Same difference with each term divided by its estimated standard
    /// deviation. Requires equal batch sizes.
    NormalizedDifference,
}

struct TermGrad {
    /// dLoss/dM for this term's plain MMD value.
    d_value: f64,
    /// dLoss/dH as a matrix, when the variance path is active.
    d_h: Option<Matrix>,
}

fn variance_grad_wrt_h(h: &Matrix, d_variance: f64) -> Matrix {
    let n = h.rows();
    let nf = n as f64;
    let row_sums: Vec<f64> = (0..n).map(|i| h.row(i).iter().sum()).collect();
    let mean = row_sums.iter().sum::<f64>() / nf;
    let mut g = Matrix::zeros(n, n);
    for a in 0..n {
        let v = d_variance * 8.0 / nf.powi(3) * (row_sums[a] - mean);
        for b in 0..n {
            g.set(a, b, v);
        }
    }
    g
}

/// Loss of the kernel-training objective on one batch triple.
pub fn dmia_loss(
    kernel: &DeepKernel,
    b_anc: &Matrix,
    b_mem_proxy: &Matrix,
    b_non: &Matrix,
    objective: Objective,
    lambda: f64,
) -> Result<f64> {
    Ok(loss_impl(kernel, b_anc, b_mem_proxy, b_non, objective, lambda, false)?.0)
}

/// Loss plus exact reverse-mode gradients over the feature-net parameters,
/// flattened in `FeatureNet::params_to_vec` order.
pub fn dmia_loss_and_grad(
    kernel: &DeepKernel,
    b_anc: &Matrix,
    b_mem_proxy: &Matrix,
    b_non: &Matrix,
    objective: Objective,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let (loss, grads) = loss_impl(kernel, b_anc, b_mem_proxy, b_non, objective, lambda, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

fn loss_impl(
    kernel: &DeepKernel,
    b_anc: &Matrix,
    b_mem: &Matrix,
    b_non: &Matrix,
    objective: Objective,
    lambda: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    for (batch, name) in [
        (b_anc, "anchor"),
        (b_mem, "member proxy"),
        (b_non, "non-member"),
    ] {
        if batch.rows() < 2 {
            return Err(Error::SampleTooSmall {
                context: "dmia loss batch",
                need: 2,
                got: batch.rows(),
            });
        }
        kernel.net.check_input(batch, "dmia_loss")?;
        let _ = name;
    }
    if objective == Objective::NormalizedDifference
        && (b_anc.rows() != b_mem.rows() || b_anc.rows() != b_non.rows())
    {
        return Err(Error::DimensionMismatch {
            context: "dmia_loss",
            detail: "normalized objective requires equal batch sizes".into(),
        });
    }

    let (feat_anc, cache_anc) = kernel.net.forward_cached(b_anc)?;
    let (feat_mem, cache_mem) = kernel.net.forward_cached(b_mem)?;
    let (feat_non, cache_non) = kernel.net.forward_cached(b_non)?;

    let g_aa =
        kernel.deep_gram_from_features(b_anc, b_anc, feat_anc.clone(), feat_anc.clone(), None)?;
    let g_mm =
        kernel.deep_gram_from_features(b_mem, b_mem, feat_mem.clone(), feat_mem.clone(), None)?;
    let g_am =
        kernel.deep_gram_from_features(b_anc, b_mem, feat_anc.clone(), feat_mem.clone(), None)?;
    let g_nn =
        kernel.deep_gram_from_features(b_non, b_non, feat_non.clone(), feat_non.clone(), None)?;
    let g_an = kernel.deep_gram_from_features(b_anc, b_non, feat_anc.clone(), feat_non, None)?;

    let m1 = mmd2_u(&g_aa.gram, &g_mm.gram, &g_am.gram)?;
    let m2 = mmd2_u(&g_aa.gram, &g_nn.gram, &g_an.gram)?;

    let (loss, term1, term2) = match objective {
        Objective::DiscrepancyDifference => (
            m1 - m2,
            TermGrad {
                d_value: 1.0,
                d_h: None,
            },
            TermGrad {
                d_value: -1.0,
                d_h: None,
            },
        ),
        Objective::NormalizedDifference => {
            let h1 = h_matrix(&g_aa.gram, &g_mm.gram, &g_am.gram)?;
            let h2 = h_matrix(&g_aa.gram, &g_nn.gram, &g_an.gram)?;
            let v1 = variance_reg(&h1, lambda)?;
            let v2 = variance_reg(&h2, lambda)?;
            let (s1, s2) = (v1.sqrt(), v2.sqrt());
            let loss = m1 / s1 - m2 / s2;
            (
                loss,
                TermGrad {
                    d_value: 1.0 / s1,
                    d_h: Some(variance_grad_wrt_h(&h1, -m1 / (2.0 * v1 * s1))),
                },
                TermGrad {
                    d_value: -1.0 / s2,
                    d_h: Some(variance_grad_wrt_h(&h2, m2 / (2.0 * v2 * s2))),
                },
            )
        }
    };

    if !want_grad {
        return Ok((loss, None));
    }

    // Assemble dLoss/dGram coefficient matrices for all five Gram blocks.
    let n_a = b_anc.rows();
    let mut c_aa = Matrix::zeros(n_a, n_a);
    let mut c_mm = Matrix::zeros(b_mem.rows(), b_mem.rows());
    let mut c_nn = Matrix::zeros(b_non.rows(), b_non.rows());
    let mut c_am = Matrix::zeros(n_a, b_mem.rows());
    let mut c_an = Matrix::zeros(n_a, b_non.rows());

    add_term_coeffs(&mut c_aa, &mut c_mm, &mut c_am, &term1);
    add_term_coeffs(&mut c_aa, &mut c_nn, &mut c_an, &term2);

    // Pull each Gram block back to feature gradients.
    let mut d_anc = Matrix::zeros(n_a, kernel.net.out_dim());
    let mut d_mem = Matrix::zeros(b_mem.rows(), kernel.net.out_dim());
    let mut d_non = Matrix::zeros(b_non.rows(), kernel.net.out_dim());

    let add = |target: &mut Matrix, grad: &Matrix| {
        for (t, g) in target.data_mut().iter_mut().zip(grad.data()) {
            *t += g;
        }
    };

    let (ga, gb) = g_aa.backprop_to_features(&c_aa, kernel);
    add(&mut d_anc, &ga);
    add(&mut d_anc, &gb);
    let (ga, gb) = g_mm.backprop_to_features(&c_mm, kernel);
    add(&mut d_mem, &ga);
    add(&mut d_mem, &gb);
    let (ga, gb) = g_am.backprop_to_features(&c_am, kernel);
    add(&mut d_anc, &ga);
    add(&mut d_mem, &gb);
    let (ga, gb) = g_nn.backprop_to_features(&c_nn, kernel);
    add(&mut d_non, &ga);
    add(&mut d_non, &gb);
    let (ga, gb) = g_an.backprop_to_features(&c_an, kernel);
    add(&mut d_anc, &ga);
    add(&mut d_non, &gb);

    // Through the net, summed over the three batches.
    let mut grads = kernel.net.backward(&cache_anc, &d_anc)?;
    grads.accumulate(&kernel.net.backward(&cache_mem, &d_mem)?);
    grads.accumulate(&kernel.net.backward(&cache_non, &d_non)?);
    Ok((loss, Some(grads.to_vec())))
}

/// Add one MMD term's coefficients: `d_value` times the U-statistic weights,
/// plus the variance path through the H-matrix when present.
fn add_term_coeffs(c_xx: &mut Matrix, c_yy: &mut Matrix, c_xy: &mut Matrix, term: &TermGrad) {
    let n = c_xx.rows();
    let m = c_yy.rows();
    let within_x = term.d_value / (n * (n - 1)) as f64;
    let within_y = term.d_value / (m * (m - 1)) as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                c_xx.set(i, j, c_xx.get(i, j) + within_x);
            }
        }
    }
    for i in 0..m {
        for j in 0..m {
            if i != j {
                c_yy.set(i, j, c_yy.get(i, j) + within_y);
            }
        }
    }
    if n == m {
        let cross = -2.0 * term.d_value / (n * (n - 1)) as f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    c_xy.set(i, j, c_xy.get(i, j) + cross);
                }
            }
        }
    } else {
        let cross = -2.0 * term.d_value / (n * m) as f64;
        for i in 0..n {
            for j in 0..m {
                c_xy.set(i, j, c_xy.get(i, j) + cross);
            }
        }
    }
    if let Some(dh) = &term.d_h {
        // H_ij = Kxx_ij + Kyy_ij - Kxy_ij - Kxy_ji.
        for i in 0..n {
            for j in 0..n {
                let g = dh.get(i, j);
                c_xx.set(i, j, c_xx.get(i, j) + g);
                c_yy.set(i, j, c_yy.get(i, j) + g);
                c_xy.set(i, j, c_xy.get(i, j) - g - dh.get(j, i));
            }
        }
    }
}

/// Deep-kernel MMD^2 against a fixed anchor whose features and self-Gram are
/// precomputed; the hot path of detection trials.
pub struct AnchorContext {
    pub raw: Matrix,
    pub features: Matrix,
    pub self_gram: Matrix,
}

impl AnchorContext {
    pub fn new(kernel: &DeepKernel, anchor: &Matrix) -> Result<Self> {
        let features = kernel.net.forward(anchor)?;
        let cache = kernel.deep_gram_from_features(
            anchor,
            anchor,
            features.clone(),
            features.clone(),
            None,
        )?;
        Ok(AnchorContext {
            raw: anchor.clone(),
            features,
            self_gram: cache.gram,
        })
    }

    /// `mmd2_u(batch, anchor)` under the given kernel.
    pub fn mmd2_u_against(&self, kernel: &DeepKernel, batch: &Matrix) -> Result<f64> {
        let feat = kernel.net.forward(batch)?;
        let kxx = kernel
            .deep_gram_from_features(batch, batch, feat.clone(), feat.clone(), None)?
            .gram;
        let kxy = kernel
            .deep_gram_from_features(batch, &self.raw, feat, self.features.clone(), None)?
            .gram;
        mmd2_u(&kxx, &self.self_gram, &kxy)
    }
}

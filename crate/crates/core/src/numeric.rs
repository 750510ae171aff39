//! Dense row-major matrices, pairwise squared distances, and a seedable,
//! splittable random source with Gaussian sampling.
//!
//! Everything downstream (kernels, MMD statistics, the simulator) sits on top
//! of this module. All arithmetic is f64: the distributional separations being
//! measured are small and would drown in f32 accumulation error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major f64 matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::from_vec",
                detail: format!(
                    "{rows}x{cols} needs {} values, got {}",
                    rows * cols,
                    data.len()
                ),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "Matrix::from_rows",
                    detail: format!("row {i} has {} entries, expected {cols}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Select the given rows into a new matrix (indices may repeat).
    pub fn take_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stack two matrices with equal column counts vertically.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::vstack",
                detail: format!("{} vs {} columns", self.cols, other.cols),
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// `self[n×k] * other[k×m]`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "Matrix::matmul",
                detail: format!(
                    "{}x{} * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate().take(k) {
                let b_row = other.row(p);
                for j in 0..m {
                    out_row[j] += a * b_row[j];
                }
            }
        }
        Ok(out)
    }

    /// `self^T[k×n] * other[k×m]` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch {
                context: "Matrix::matmul_tn",
                detail: format!(
                    "{}x{} ^T * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        let (k, n, m) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(n, m);
        for p in 0..k {
            let a_row = self.row(p);
            let b_row = other.row(p);
            for (i, &a) in a_row.iter().enumerate().take(n) {
                let out_row = &mut out.data[i * m..(i + 1) * m];
                for j in 0..m {
                    out_row[j] += a * b_row[j];
                }
            }
        }
        Ok(out)
    }

    /// `self[n×k] * other^T[m×k]`.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::matmul_nt",
                detail: format!(
                    "{}x{} * {}x{} ^T",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        let (n, m) = (self.rows, other.rows);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let a_row = self.row(i);
            for j in 0..m {
                out.data[i * m + j] = dot(a_row, other.row(j));
            }
        }
        Ok(out)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pairwise squared Euclidean distances between the rows of `a` and `b`.
///
/// Computed via ||x||^2 + ||y||^2 - 2 x.y with a clamp at zero to suppress
/// negative round-off. When `a` and `b` are the same values the diagonal is
/// exactly zero and the result is exactly symmetric, because each entry runs
/// the identical sequence of operations.
pub fn pairwise_sq_dists(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::DimensionMismatch {
            context: "pairwise_sq_dists",
            detail: format!("{} vs {} columns", a.cols, b.cols),
        });
    }
    let a_norms: Vec<f64> = (0..a.rows).map(|i| dot(a.row(i), a.row(i))).collect();
    let b_norms: Vec<f64> = (0..b.rows).map(|j| dot(b.row(j), b.row(j))).collect();
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ra = a.row(i);
        let row = out.row_mut(i);
        for (j, slot) in row.iter_mut().enumerate() {
            let d2 = a_norms[i] + b_norms[j] - 2.0 * dot(ra, b.row(j));
            *slot = d2.max(0.0);
        }
    }
    Ok(out)
}

/// A seedable, splittable stream of pseudorandomness.
///
/// A stream is a value, not a generator: instantiating the same
/// `(seed, stream)` pair always yields the same sequence, and distinct stream
/// ids select statistically independent ChaCha12 streams. Deriving substreams
/// by tag lets concurrent work items (ensemble members, detection trials,
/// rounds) each consume their own stream regardless of execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, stream: 0 }
    }

    /// Derive a child stream. Distinct tags give distinct streams; nested
    /// derivations mix the whole path.
    pub fn substream(self, tag: u64) -> Self {
        RngStream {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(tag)),
        }
    }

    /// Instantiate the generator at the start of this stream.
    pub fn rng(self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Matrix of i.i.d. Normal(0, sigma^2) entries. `sigma == 0` yields zeros.
pub fn gaussian_noise(rows: usize, cols: usize, sigma: f64, stream: RngStream) -> Result<Matrix> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be nonnegative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(Matrix::zeros(rows, cols));
    }
    let mut rng = stream.rng();
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let z: f64 = rng.sample(StandardNormal);
        data.push(sigma * z);
    }
    Ok(Matrix { rows, cols, data })
}

/// `x` plus fresh Gaussian noise of the given standard deviation.
pub fn add_gaussian_noise(x: &Matrix, sigma: f64, stream: RngStream) -> Result<Matrix> {
    let noise = gaussian_noise(x.rows, x.cols, sigma, stream)?;
    let mut out = x.clone();
    for (o, n) in out.data.iter_mut().zip(&noise.data) {
        *o += n;
    }
    Ok(out)
}

/// Draw `b` rows uniformly from `d`, with or without replacement.
pub fn subsample(d: &Matrix, b: usize, stream: RngStream, replacement: bool) -> Result<Matrix> {
    let idx = subsample_indices(d.rows, b, stream, replacement)?;
    Ok(d.take_rows(&idx))
}

/// Index form of [`subsample`]; shared so paired draws over equal-size pools
/// consume the stream identically.
pub fn subsample_indices(
    n: usize,
    b: usize,
    stream: RngStream,
    replacement: bool,
) -> Result<Vec<usize>> {
    let mut rng = stream.rng();
    if replacement {
        return Ok((0..b).map(|_| rng.random_range(0..n)).collect());
    }
    if b > n {
        return Err(Error::SampleTooSmall {
            context: "subsample without replacement",
            need: b,
            got: n,
        });
    }
    // Partial Fisher-Yates: the first b slots of a virtual shuffle.
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..b {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(b);
    Ok(pool)
}

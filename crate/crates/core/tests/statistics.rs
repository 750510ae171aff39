//! Statistical behavior of the MMD estimators: unbiasedness under the null,
//! power under a clear alternative, and calibration of the normalized
//! statistic.

use dmia_core::kernel::gaussian_gram;
use dmia_core::mmd::{h_matrix, mmd2_u, normalized_stat, variance_reg, MmdEstimate};
use dmia_core::numeric::{gaussian_noise, Matrix, RngStream};

fn null_draw(seed: u64, n: usize, d: usize) -> (Matrix, Matrix) {
    let s = RngStream::new(seed);
    (
        gaussian_noise(n, d, 1.0, s.substream(0)).unwrap(),
        gaussian_noise(n, d, 1.0, s.substream(1)).unwrap(),
    )
}

fn gaussian_mmd(x: &Matrix, y: &Matrix, gamma: f64) -> (f64, f64) {
    let kxx = gaussian_gram(x, x, gamma).unwrap();
    let kyy = gaussian_gram(y, y, gamma).unwrap();
    let kxy = gaussian_gram(x, y, gamma).unwrap();
    let value = mmd2_u(&kxx, &kyy, &kxy).unwrap();
    let h = h_matrix(&kxx, &kyy, &kxy).unwrap();
    let variance = variance_reg(&h, 1e-8).unwrap();
    (value, variance)
}

#[test]
fn null_mean_is_within_three_standard_errors_of_zero() {
    let trials = 200;
    let mut values = Vec::with_capacity(trials);
    for t in 0..trials {
        let (x, y) = null_draw(t as u64, 60, 5);
        values.push(gaussian_mmd(&x, &y, 2.0).0);
    }
    let mean = values.iter().sum::<f64>() / trials as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (trials - 1) as f64;
    let se = (var / trials as f64).sqrt();
    assert!(
        mean.abs() < 3.0 * se,
        "null mean {mean} exceeds 3 x standard error {se}"
    );
}

#[test]
fn normalized_stat_rarely_exceeds_three_under_null() {
    let trials = 300;
    let mut exceed = 0usize;
    for t in 0..trials {
        let (x, y) = null_draw(10_000 + t as u64, 60, 5);
        let (value, variance) = gaussian_mmd(&x, &y, 2.0);
        let stat = normalized_stat(&MmdEstimate {
            value,
            variance,
            n: 60,
        });
        if stat.abs() > 3.0 {
            exceed += 1;
        }
    }
    let rate = exceed as f64 / trials as f64;
    assert!(rate < 0.02, "|stat| > 3 in {rate} of null draws");
}

#[test]
fn mmd_detects_separated_gaussians() {
    // Two unit Gaussians, mean gap 2 in 5 dimensions: essentially always
    // positive at n = 100.
    let trials = 200;
    let mut positive = 0usize;
    for t in 0..trials {
        let s = RngStream::new(777).substream(t as u64);
        let x = gaussian_noise(100, 5, 1.0, s.substream(0)).unwrap();
        let mut y = gaussian_noise(100, 5, 1.0, s.substream(1)).unwrap();
        for i in 0..y.rows() {
            y.set(i, 0, y.get(i, 0) + 2.0);
        }
        if gaussian_mmd(&x, &y, 2.0).0 > 0.0 {
            positive += 1;
        }
    }
    assert!(
        positive >= 198,
        "power too low: {positive}/{trials} positive"
    );
}

#[test]
fn estimator_shrinks_toward_zero_with_sample_size_under_null() {
    // Magnitudes, not values: |MMD^2| under the null decays roughly like 1/n.
    let spread = |n: usize| {
        let mut acc = 0.0;
        for t in 0..60 {
            let (x, y) = null_draw(500 + t + n as u64 * 31, n, 4);
            acc += gaussian_mmd(&x, &y, 2.0).0.abs();
        }
        acc / 60.0
    };
    let small = spread(20);
    let large = spread(120);
    assert!(
        large < small,
        "null magnitude should shrink with n: {small} -> {large}"
    );
}

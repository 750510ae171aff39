//! Property tests over the persistence formats and a couple of algebraic
//! invariants that hold for arbitrary inputs.

use dmia_core::io::{
    matrix_from_csv_str, matrix_from_f32bin, matrix_to_csv_string, matrix_to_f32bin,
};
use dmia_core::kernel::gaussian_gram;
use dmia_core::mmd::{h_matrix, mmd2_u};
use dmia_core::numeric::Matrix;

use proptest::prelude::*;

fn matrix_strategy(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-1e6f64..1e6, r * c)
            .prop_map(move |data| Matrix::from_vec(r, c, data).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(m in matrix_strategy(12, 6)) {
        let back = matrix_from_csv_str(&matrix_to_csv_string(&m)).unwrap();
        prop_assert_eq!(m, back);
    }

    #[test]
    fn f32bin_round_trip_at_f32_precision(m in matrix_strategy(12, 6)) {
        let narrowed = m.map(|v| v as f32 as f64);
        let back = matrix_from_f32bin(&matrix_to_f32bin(&narrowed)).unwrap();
        prop_assert_eq!(narrowed, back);
    }

    /// Entries are mathematically in (0, 1]; at extreme distance/bandwidth
    /// ratios the exponential underflows to +0, so the checked bound is
    /// [0, 1] with an exact unit diagonal and exact symmetry.
    #[test]
    fn gram_entries_stay_in_unit_interval(m in matrix_strategy(8, 4), gamma in 0.05f64..50.0) {
        let g = gaussian_gram(&m, &m, gamma).unwrap();
        for i in 0..g.rows() {
            prop_assert_eq!(g.get(i, i), 1.0);
            for j in 0..g.cols() {
                prop_assert!(g.get(i, j) >= 0.0 && g.get(i, j) <= 1.0);
                prop_assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
    }

    /// The paired U-statistic identity holds for arbitrary Gram-shaped
    /// matrices, not just genuine kernel matrices.
    #[test]
    fn h_matrix_identity_on_arbitrary_grams(
        kxx in matrix_strategy(6, 1).prop_map(|m| square_from(&m)),
        kyy in matrix_strategy(6, 1).prop_map(|m| square_from(&m)),
        kxy in matrix_strategy(6, 1).prop_map(|m| square_from(&m)),
    ) {
        let n = kxx.rows().min(kyy.rows()).min(kxy.rows());
        if n < 2 { return Ok(()); }
        let cut = |m: &Matrix| {
            let mut out = Matrix::zeros(n, n);
            for i in 0..n { for j in 0..n { out.set(i, j, m.get(i % m.rows(), j % m.rows()) % 10.0); } }
            out
        };
        let (kxx, kyy, kxy) = (cut(&kxx), cut(&kyy), cut(&kxy));
        let h = h_matrix(&kxx, &kyy, &kxy).unwrap();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j { acc += h.get(i, j); }
            }
        }
        let from_h = acc / (n * (n - 1)) as f64;
        let direct = mmd2_u(&kxx, &kyy, &kxy).unwrap();
        prop_assert!((from_h - direct).abs() < 1e-9, "{from_h} vs {direct}");
    }
}

fn square_from(m: &Matrix) -> Matrix {
    let n = m.rows().max(2);
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, m.get(i % m.rows(), 0) * (1.0 + j as f64 * 0.37));
        }
    }
    out
}

use nalgebra::DMatrix;
use proptest::prelude::*;

use hetsus::likelihood::{finite_difference_hessian, hessian_eigen, poisson_loglik, Matrix};
use hetsus::sensitivity::compensation_score;
use hetsus::study::stats::quantile;

fn spd(entries: &[f64], shift: f64) -> Matrix {
    // A A^T + shift I is symmetric positive definite.
    let a = DMatrix::from_row_slice(3, 3, entries);
    let m = &a * a.transpose() + DMatrix::identity(3, 3) * shift;
    Matrix::from_rows(&(0..3).map(|i| (0..3).map(|j| m[(i, j)]).collect()).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn saturated_rates_maximize_the_likelihood(
        y in prop::collection::vec(0u64..500, 1..40),
        scale in prop::collection::vec(0.2f64..5.0, 40),
    ) {
        let saturated: Vec<f64> = y.iter().map(|&c| (c as f64).max(1e-300)).collect();
        let other: Vec<f64> = y.iter().zip(&scale).map(|(&c, s)| (c as f64 + 0.5) * s).collect();
        let best = poisson_loglik(&y, &saturated).unwrap();
        prop_assert!(poisson_loglik(&y, &other).unwrap() <= best + 1e-9);
    }

    #[test]
    fn hessian_of_a_quadratic_is_its_matrix(
        entries in prop::collection::vec(-2.0f64..2.0, 9),
        x in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let m = spd(&entries, 0.5);
        let f = |z: &[f64]| {
            let mut q = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    q += 0.5 * z[i] * m.get(i, j) * z[j];
                }
            }
            q
        };
        let h = finite_difference_hessian(f, &x, 1e-4);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((h.get(i, j) - m.get(i, j)).abs() < 1e-5 * m.max_abs().max(1.0));
            }
        }
    }

    #[test]
    fn condition_number_matches_symmetric_eigensolver(entries in prop::collection::vec(-2.0f64..2.0, 9)) {
        let m = spd(&entries, 0.1);
        let e = hessian_eigen(&m).unwrap();
        let dm = DMatrix::from_row_slice(3, 3, &m.rows().concat());
        let ev = dm.symmetric_eigenvalues();
        let (lo, hi) = (ev.min(), ev.max());
        prop_assert!((e.condition_number - hi / lo).abs() <= 1e-8 * hi / lo);
    }

    #[test]
    fn cosine_is_symmetric_bounded_and_scale_free(
        a in prop::collection::vec(-10.0f64..10.0, 5),
        b in prop::collection::vec(-10.0f64..10.0, 5),
        k in 0.01f64..100.0,
    ) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let s = compensation_score(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - compensation_score(&b, &a).unwrap()).abs() < 1e-12);
        let scaled: Vec<f64> = a.iter().map(|v| v * k).collect();
        prop_assert!((s - compensation_score(&scaled, &b).unwrap()).abs() < 1e-9);
        let flipped: Vec<f64> = a.iter().map(|v| -v).collect();
        prop_assert!((s + compensation_score(&flipped, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn quantiles_are_monotone(v in prop::collection::vec(-100.0f64..100.0, 1..60), q1 in 0.0f64..1.0, q2 in 0.0f64..1.0) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        prop_assert!(quantile(&v, lo) <= quantile(&v, hi));
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(quantile(&v, 0.0), min);
        prop_assert_eq!(quantile(&v, 1.0), max);
    }
}

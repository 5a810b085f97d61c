use caltrend_core::decomposition::{decompose_matrix, Thresholding};
use caltrend_core::projection::{closed_form, default_candidates, BasisKind, CandidateSpec, MsmBasis};
use caltrend_core::selection::apply_rule;
use proptest::prelude::*;

const M: usize = 6;

fn matrix() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, M * M)
}

fn curve() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-1.0..1.0f64, M), prop::collection::vec(0.05..2.0f64, M))
}

fn fitted(basis: &MsmBasis, chi: &[f64], h: &[f64]) -> Vec<f64> {
    let beta = closed_form(basis, chi, h).unwrap();
    (1..=M).map(|m| basis.psi(m, &beta)).collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn theta_ignores_trial_labels(s in matrix(), perm in Just((0..M).collect::<Vec<_>>()).prop_shuffle()) {
        let thr = Thresholding::disabled();
        let base = decompose_matrix(&s, M, &thr).unwrap();
        let relabelled: Vec<f64> = (0..M * M).map(|k| s[perm[k / M] * M + perm[k % M]]).collect();
        let out = decompose_matrix(&relabelled, M, &thr).unwrap();
        prop_assert!(close(base.theta, out.theta, 1e-12));
        for m in 0..M {
            prop_assert!(close(base.theta_m[perm[m]], out.theta_m[m], 1e-12));
        }
    }

    #[test]
    fn theta_is_scale_and_shift_free(s in matrix(), a in 0.1..10.0f64, b in -5.0..5.0f64) {
        let thr = Thresholding::disabled();
        let base = decompose_matrix(&s, M, &thr).unwrap();
        let moved: Vec<f64> = s.iter().map(|v| a * v + b).collect();
        prop_assert!(close(base.theta, decompose_matrix(&moved, M, &thr).unwrap().theta, 1e-9));
    }

    #[test]
    fn theta_lies_in_unit_interval(s in matrix()) {
        let out = decompose_matrix(&s, M, &Thresholding::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&out.theta));
    }

    #[test]
    fn projection_is_affine_equivariant((chi, h) in curve(), a in -3.0..3.0f64, b in -2.0..2.0f64) {
        for spec in default_candidates(M) {
            let basis = MsmBasis::new(&spec, M).unwrap();
            let base = fitted(&basis, &chi, &h);
            let moved: Vec<f64> = chi.iter().map(|c| a * c + b).collect();
            for (x, y) in base.iter().zip(fitted(&basis, &moved, &h)) {
                prop_assert!((a * x + b - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn projection_ignores_weight_scale((chi, h) in curve(), k in 0.01..100.0f64) {
        let basis = MsmBasis::new(&CandidateSpec::new("Cubic", BasisKind::Polynomial { degree: 3 }), M).unwrap();
        let scaled: Vec<f64> = h.iter().map(|w| k * w).collect();
        for (x, y) in fitted(&basis, &chi, &h).iter().zip(fitted(&basis, &chi, &scaled)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn nested_bases_never_fit_worse((chi, h) in curve()) {
        let kinds = [
            BasisKind::Constant,
            BasisKind::Linear,
            BasisKind::Polynomial { degree: 3 },
            BasisKind::Saturated,
        ];
        let rss: Vec<f64> = kinds
            .iter()
            .map(|k| {
                let basis = MsmBasis::new(&CandidateSpec::new("b", k.clone()), M).unwrap();
                fitted(&basis, &chi, &h).iter().zip(&chi).zip(&h).map(|((p, c), w)| w * (c - p).powi(2)).sum()
            })
            .collect();
        for pair in rss.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12);
        }
        prop_assert!(rss[3] < 1e-20);
    }

    #[test]
    fn larger_c_never_selects_richer(risks in prop::collection::vec(0.0..1.0f64, 4), eps in 0.001..0.5f64) {
        let dims = [1, 2, 4, 6];
        let mut last = usize::MAX;
        for c in [0.0, 0.25, 0.5, 1.0, 2.0] {
            let (min, sel) = apply_rule(&risks, &dims, eps, c).unwrap();
            prop_assert!(risks[sel] - risks[min] <= c * eps + 1e-15);
            prop_assert!(dims[sel] <= last);
            last = dims[sel];
        }
    }
}

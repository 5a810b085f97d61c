//! Hand-derived values for small inputs, checked against the library.

use caltrend_core::decomposition::{decompose_matrix, test_boundary, Thresholding};
use caltrend_core::estimators::estimate_chi;
use caltrend_core::nuisance::{NuisanceFit, TruncationPolicy};
use caltrend_core::projection::{closed_form, BasisKind, CandidateSpec, MsmBasis};
use caltrend_core::selection::apply_rule;
use caltrend_core::simulation::{synth_pool, OutcomeModel, Scenario, ScenarioSpec, ShiftRule};
use caltrend_core::trial_data::{Covariate, CovariateSchema, EligibleRecord, TrialPanel};

fn additive(t: &[f64], p: &[f64]) -> Vec<f64> {
    // S[j][m] = t_m + p_j, row-major by population j
    p.iter().flat_map(|pj| t.iter().map(move |tm| tm + pj)).collect()
}

#[test]
fn pure_time_variation_gives_one() {
    let s = additive(&[0.0, 0.1, 0.2], &[0.0, 0.0, 0.0]);
    let out = decompose_matrix(&s, 3, &Thresholding::disabled()).unwrap();
    assert!(out.theta_m.iter().all(|t| (t - 1.0).abs() < 1e-15));
    assert!(out.gamma2.iter().all(|g| *g == 0.0));
}

#[test]
fn three_to_one_spread_gives_nine_tenths() {
    // time spread 3x the population spread: sigma^2 / gamma^2 = 9
    let s = additive(&[0.0, 0.3, 0.6], &[0.0, 0.1, 0.2]);
    let out = decompose_matrix(&s, 3, &Thresholding::default()).unwrap();
    for m in 0..3 {
        assert!((out.theta_m[m] - 0.9).abs() < 1e-12, "m = {m}: {}", out.theta_m[m]);
    }
    assert!((out.sigma2[0] - 0.225).abs() < 1e-12);
    assert!((out.gamma2[0] - 0.025).abs() < 1e-12);
    assert!((out.theta - 0.9).abs() < 1e-12);
}

#[test]
fn sub_threshold_variation_counts_as_population() {
    let s = additive(&[0.0, 0.001, 0.002], &[0.0, 0.0, 0.0]);
    let raw = decompose_matrix(&s, 3, &Thresholding::disabled()).unwrap();
    assert!((raw.theta - 1.0).abs() < 1e-12);
    let thr = decompose_matrix(&s, 3, &Thresholding::default()).unwrap();
    assert_eq!(thr.theta, 0.0);
    assert!(thr.correction_applied.iter().all(|c| *c));
}

#[test]
fn flat_matrix_has_no_variation() {
    let out = decompose_matrix(&[0.2; 9], 3, &Thresholding::default()).unwrap();
    assert!(out.theta.is_nan());
    assert!(out.no_variation);
}

#[test]
fn percentile_test_decisions() {
    let inside: Vec<f64> = (0..1000).map(|k| 0.3 + 0.4 * k as f64 / 999.0).collect();
    assert!(test_boundary(&inside, 0.05).unwrap().reject);
    let touching: Vec<f64> = (0..1000).map(|k| 0.01 + 0.5 * k as f64 / 999.0).collect();
    assert!(!test_boundary(&touching, 0.05).unwrap().reject);
    assert!(test_boundary(&inside, 0.5).is_err());
}

#[test]
fn weighted_line_matches_normal_equations() {
    let chi = [0.1, -0.2, 0.05, 0.3, 0.0, -0.1];
    let h = [0.2, 1.0, 0.5, 0.7, 0.9, 0.4];
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for m in 0..6 {
        let x = (m + 1) as f64;
        sw += h[m];
        sx += h[m] * x;
        sy += h[m] * chi[m];
        sxx += h[m] * x * x;
        sxy += h[m] * x * chi[m];
    }
    let slope = (sw * sxy - sx * sy) / (sw * sxx - sx * sx);
    let intercept = (sy - slope * sx) / sw;
    let basis = MsmBasis::new(&CandidateSpec::new("Linear", BasisKind::Linear), 6).unwrap();
    let beta = closed_form(&basis, &chi, &h).unwrap();
    for m in 1..=6 {
        let want = intercept + slope * m as f64;
        assert!((basis.psi(m, &beta) - want).abs() < 1e-12);
    }
}

#[test]
fn simplicity_rule_examples() {
    let dims = [1, 2, 4, 12];
    // minimizer is the saturated fit; the constant sits 0.2 epsilon above it
    let risks = [1.02, 1.01, 1.005, 1.0];
    assert_eq!(apply_rule(&risks, &dims, 0.1, 0.25).unwrap(), (3, 0));
    assert_eq!(apply_rule(&risks, &dims, 0.1, 0.0).unwrap(), (3, 3));
    assert_eq!(apply_rule(&risks, &dims, 0.1, 0.15).unwrap(), (3, 1));
}

#[test]
fn difference_in_means_when_nuisances_are_flat() {
    // mu = 0 and pi = 1/2 reduce AIPW to 2 * (sum treated Y - sum control Y) / n
    let schema = CovariateSchema::new(vec![Covariate::numeric("x")]).unwrap();
    let ys = [1.0, 2.0, 0.5, -1.0, 3.0, 0.0];
    let arms = [1, 0, 1, 0, 1, 0];
    let records = (0..6)
        .map(|i| Some(EligibleRecord { covariates: vec![i as f64], treatment: arms[i], outcome: ys[i] }))
        .collect();
    let ids = (0..6).map(|i| format!("s{i}")).collect();
    let panel = TrialPanel::new(schema, ids, 1, records).unwrap();
    let fit = NuisanceFit::from_functions(&panel, TruncationPolicy::floor_only(0.01), |_, _, _| 0.0, |_, _| 0.5);
    let curve = estimate_chi(&panel, &fit).unwrap();
    let want = 2.0 * ((1.0 + 0.5 + 3.0) - (2.0 - 1.0 + 0.0)) / 6.0;
    assert!((curve.chi[0] - want).abs() < 1e-14);
}

#[test]
fn treated_fraction_matches_expit_integral() {
    let pool = synth_pool(5_000, 3).unwrap();
    let spec = ScenarioSpec::new(ShiftRule::None, OutcomeModel::Constant, 3, 40_000, 4);
    let sc = Scenario::new(spec, &pool).unwrap();
    // linear predictor assembled from the coefficient table by encoded name
    let names = pool.schema.encoded_names();
    let coef = &sc.spec.coefficients.propensity;
    let mut enc = Vec::new();
    let oracle = pool
        .rows
        .iter()
        .map(|row| {
            enc.clear();
            pool.schema.encode_into(row, &mut enc);
            let eta = coef["(Intercept)"] + names.iter().zip(&enc).map(|(n, v)| coef.get(n).unwrap_or(&0.0) * v).sum::<f64>();
            1.0 / (1.0 + (-eta).exp())
        })
        .sum::<f64>()
        / pool.rows.len() as f64;
    let panel = sc.generate(&pool).unwrap();
    let n = panel.n_subjects() as f64;
    let treated = (0..panel.n_subjects()).filter(|&i| panel.record(i, 1).unwrap().treatment == 1).count() as f64 / n;
    let se = (oracle * (1.0 - oracle) / n).sqrt();
    assert!((treated - oracle).abs() < 4.0 * se, "treated {treated}, expit integral {oracle}");
}

#[test]
fn forced_arm_fixes_treatment() {
    let pool = synth_pool(2_000, 5).unwrap();
    let mut spec = ScenarioSpec::new(ShiftRule::Flexible, OutcomeModel::SplineEffectMod, 6, 300, 6);
    spec.forced_arm = Some(1);
    let panel = Scenario::new(spec, &pool).unwrap().generate(&pool).unwrap();
    for i in 0..panel.n_subjects() {
        for m in 1..=6 {
            assert_eq!(panel.record(i, m).unwrap().treatment, 1);
        }
    }
}

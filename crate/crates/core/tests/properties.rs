mod common;

use proptest::prelude::*;

use common::*;
use semfx::effects::{marginal_effect, quantile_effect};
use semfx::fit::{build_spline_model, fitted_score};
use semfx::inference::{sigma_blocks, var_eta, var_xi, wald};
use semfx::sim::{generate, Scenario, PRESETS};
use semfx::{fit_mle, FitConfig, KnotVector, SplineBasis, TiltModel};

fn unit_model(interior: Vec<f64>) -> TiltModel {
    TiltModel::continuous(SplineBasis::new(KnotVector::new(interior, 0.0, 1.0, 4).unwrap()), 201).unwrap()
}

fn sorted_knots(raw: Vec<f64>) -> Vec<f64> {
    let mut k = raw;
    k.sort_by(f64::total_cmp);
    k.dedup_by(|a, b| (*a - *b).abs() < 0.02);
    k
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 50, ..ProptestConfig::default() })]

    #[test]
    fn analytic_derivatives_match_finite_differences(seed in any::<u64>()) {
        let data = tilted_data(60, 3, seed % 1000);
        let model = build_spline_model(&data, &FitConfig::default()).unwrap();
        let mut r = rng(seed);
        let (b, g) = random_state(&mut r, 3, model.free_dim(), 2.0);
        let (ge, he) = derivative_errors(&data, &model, &b, &g);
        prop_assert!(ge < 1e-6, "gradient rel err {ge}");
        prop_assert!(he < 1e-4, "hessian rel err {he}");
    }

    #[test]
    fn density_normalizes_and_quantile_inverts_cdf(
        knots in proptest::collection::vec(0.05f64..0.95, 1..5),
        nu in -6.0f64..6.0,
        gseed in any::<u64>(),
        tau in 0.01f64..0.99,
    ) {
        let model = unit_model(sorted_knots(knots));
        let mut r = rng(gseed);
        let (_, g) = random_state(&mut r, 0, model.free_dim(), 3.0);
        prop_assert!(normalization_error(&model, nu, &g) < 1e-8);
        let ql = model.quantile(nu, &g, tau).unwrap();
        prop_assert!((model.cdf(nu, &g, ql.q).unwrap() - tau).abs() < 1e-8);
    }

    #[test]
    fn quantile_derivatives_match_finite_differences(
        nu in -3.0f64..3.0,
        gseed in any::<u64>(),
        tau in 0.05f64..0.95,
    ) {
        let model = unit_model(vec![0.3, 0.6]);
        let mut r = rng(gseed);
        let (_, g) = random_state(&mut r, 0, model.free_dim(), 2.0);
        let (e1, e2) = quantile_derivative_errors(&model, nu, &g, tau);
        prop_assert!(e1 < 1e-5, "q' err {e1}");
        prop_assert!(e2 < 1e-4, "q'' err {e2}");
    }

    #[test]
    fn partition_of_unity_on_random_knots(
        knots in proptest::collection::vec(0.01f64..0.99, 0..8),
        t in 0.0f64..=1.0,
        order in 1usize..6,
    ) {
        let kv = KnotVector::new(sorted_knots(knots), 0.0, 1.0, order).unwrap();
        let vals = SplineBasis::new(kv).eval_basis(t).unwrap();
        prop_assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(vals.iter().all(|v| *v >= -1e-15));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn fitted_score_vanishes(seed in 0u64..10_000) {
        let data = tilted_data(200, 2, seed);
        let fit = fit_mle(&data, &FitConfig::default()).unwrap();
        let s = fitted_score(&data, &fit).unwrap();
        prop_assert!(s.amax() <= 1e-6 * data.n() as f64);
    }

    #[test]
    fn optimum_is_restart_invariant(seed in 0u64..10_000) {
        let data = tilted_data(200, 2, seed);
        let e = restart_error(&data, &mut rng(seed + 1));
        prop_assert!(e < 1e-6, "restart err {e}");
    }

    #[test]
    fn information_blocks_equal_negative_mean_hessian(seed in 0u64..10_000) {
        let data = tilted_data(150, 3, seed);
        let fit = fit_mle(&data, &FitConfig::default()).unwrap();
        prop_assert!(block_identity_error(&fit, &data) < 1e-10);
        let disc = three_level_data(300, seed);
        let dfit = fit_mle(&disc, &FitConfig::default()).unwrap();
        prop_assert!(block_identity_error(&dfit, &disc) < 1e-10);
    }

    #[test]
    fn discrete_efficiency_identity(seed in 0u64..10_000) {
        let data = three_level_data(300, seed);
        let fit = fit_mle(&data, &FitConfig::default()).unwrap();
        prop_assert!(efficiency_identity_error(&fit, &data) < 1e-8);
    }

    #[test]
    fn effects_are_equivariant_under_covariate_rescaling(
        seed in 0u64..10_000,
        j in 0usize..2,
        logk in -2.0f64..2.0,
    ) {
        let data = tilted_data(200, 2, seed);
        let k = logk.exp();
        let e = rescaling_error(&data, j, k, 0.3);
        prop_assert!(e < 1e-8, "rescaling err {e} (k = {k})");
    }

    #[test]
    fn effect_covariances_are_symmetric_psd(seed in 0u64..10_000) {
        let data = tilted_data(150, 2, seed);
        let fit = fit_mle(&data, &FitConfig::default()).unwrap();
        let blocks = sigma_blocks(&fit, &data).unwrap();
        let (_, sx) = var_xi(&fit, &data, &blocks).unwrap();
        let (_, se) = var_eta(&fit, &data, &blocks, 0.7).unwrap();
        for s in [sx, se] {
            prop_assert!((&s - s.transpose()).amax() <= 1e-12 * s.amax());
            let ev = s.symmetric_eigen().eigenvalues;
            prop_assert!(ev.min() >= -1e-10 * ev.max().abs());
        }
    }

    #[test]
    fn effects_are_collinear_with_beta(seed in 0u64..10_000, tau in 0.05f64..0.95) {
        let data = tilted_data(150, 3, seed);
        let fit = fit_mle(&data, &FitConfig::default()).unwrap();
        let xi = marginal_effect(&fit, &data).unwrap();
        let eta = quantile_effect(&fit, &data, tau).unwrap();
        prop_assert!(xi.mean_variance > 0.0 && eta.mean_qprime > 0.0);
        for k in 0..3 {
            prop_assert!((xi.point[k] - fit.beta[k] * xi.mean_variance).abs() <= 1e-12 * xi.point[k].abs().max(1e-12));
            prop_assert!((eta.point[k] - fit.beta[k] * eta.mean_qprime).abs() <= 1e-12 * eta.point[k].abs().max(1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn wald_intervals_are_centred_and_p_values_valid(
        point in proptest::collection::vec(-5.0f64..5.0, 1..4),
        diag in proptest::collection::vec(1e-3f64..10.0, 4),
        n in 10usize..5000,
    ) {
        let p = point.len();
        let sigma = nalgebra::DMatrix::from_fn(p, p, |i, j| if i == j { diag[i] } else { 0.0 });
        let w = wald(&point, &sigma, n).unwrap();
        for k in 0..p {
            prop_assert!((w.ci_lo[k] + w.ci_hi[k] - 2.0 * point[k]).abs() < 1e-12);
            prop_assert!(w.ci_lo[k] <= point[k] && point[k] <= w.ci_hi[k]);
            prop_assert!((0.0..=1.0).contains(&w.p_value[k]));
            prop_assert!((w.se[k] - (diag[k] / n as f64).sqrt()).abs() < 1e-14);
            // The interval excludes zero exactly when p < 0.05.
            let excludes = w.ci_lo[k] > 0.0 || w.ci_hi[k] < 0.0;
            prop_assert_eq!(excludes, w.p_value[k] < 0.05);
        }
    }

    #[test]
    fn generated_responses_lie_in_the_support(pi in 0usize..7, index in 0usize..1000) {
        let mut s = Scenario::preset(PRESETS[pi]).unwrap();
        s.n = 50;
        let a = generate(&s, index).unwrap();
        let b = generate(&s, index).unwrap();
        prop_assert_eq!(a.y(), b.y());
        prop_assert!(a.y().iter().all(|y| a.support().contains(*y)));
    }
}

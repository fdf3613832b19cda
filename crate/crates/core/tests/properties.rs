//! Cross-module property tests. Each property is checked against an
//! independent closed form or algebraic identity.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use proptest::prelude::*;

use agmon_core::agmon::{agmon_profile, agmon_profile_inverse};
use agmon_core::cli::{parse_config, Verdict};
use agmon_core::fcalc::{almost_analytic_extension, f_lambda, hs_apply, random_symmetric, spectral_f, symmetric_norm};
use agmon_core::halfplane::{apply_halfplane_poisson, fourier_h, verify_lower_chain, BoundaryFunction};
use agmon_core::models::make_model;
use agmon_core::series::Series;
use agmon_core::solver::fd_symbol;
use agmon_core::stats::{isotonic_nondecreasing, linear_fit};
use agmon_core::Complex64;

fn data(coeffs: &[(f64, f64)], n: usize, h: f64) -> BoundaryFunction {
    BoundaryFunction::from_fn(n, 2.0 * PI, h, |x| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, (a, b))| Complex64::new(*a, *b) * Complex64::from_polar(1.0, k as f64 * x))
            .sum()
    })
    .unwrap()
}

fn close(a: &BoundaryFunction, b: &BoundaryFunction, tol: f64) -> bool {
    a.values().iter().zip(b.values()).all(|(x, y)| (x - y).norm() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn poisson_is_a_semigroup(
        coeffs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..8),
        r1 in 0.0f64..0.2,
        r2 in 0.0f64..0.2,
        h in 0.05f64..0.2,
    ) {
        let phi = data(&coeffs, 32, h);
        let two_step = apply_halfplane_poisson(&apply_halfplane_poisson(&phi, r1), r2);
        let one_step = apply_halfplane_poisson(&phi, r1 + r2);
        prop_assert!(close(&two_step, &one_step, 1e-12 * phi.norm().max(1.0)));
    }

    #[test]
    fn poisson_decays_at_least_at_the_zero_section_rate(
        coeffs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..8),
        rho in 0.0f64..0.3,
        h in 0.05f64..0.2,
    ) {
        let phi = data(&coeffs, 32, h);
        prop_assume!(phi.norm() > 1e-6);
        let u = apply_halfplane_poisson(&phi, rho);
        let kmax = (coeffs.len() - 1) as f64;
        let upper = (-rho / h).exp();
        let lower = (-(rho / h) * (1.0 + (h * kmax).powi(2)).sqrt()).exp();
        let ratio = u.norm() / phi.norm();
        prop_assert!(ratio <= upper * (1.0 + 1e-12));
        prop_assert!(ratio >= lower * (1.0 - 1e-12));
    }

    #[test]
    fn plancherel_holds(coeffs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..16), h in 0.01f64..1.0) {
        let phi = data(&coeffs, 64, h);
        let s = fourier_h(&phi);
        prop_assert!((s.norm() - phi.norm() * (2.0 * PI * h).sqrt()).abs() <= 1e-10 * (1.0 + s.norm()));
    }

    #[test]
    fn lower_chain_holds_for_low_frequency_data(
        coeffs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..4),
        rho in 0.01f64..0.2,
    ) {
        // Frequencies |k| ≤ 3 with h = 0.1 keep |ξ'| ≤ 0.3 < δ, so no exterior mass.
        let phi = data(&coeffs, 64, 0.1);
        prop_assume!(phi.norm() > 1e-3);
        let r = verify_lower_chain(&phi, rho, 0.5, 0.1).unwrap();
        prop_assert!(r.passed);
        prop_assert!(r.relative_margin() > 0.0);
        prop_assert!(r.exterior_fraction <= 1e-12);
    }

    #[test]
    fn f_lambda_is_a_cutoff(t in -1.0f64..5.0, lambda in 2.0f64..64.0, h in 0.005f64..0.1) {
        let f = f_lambda(t, lambda, h);
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn fd_symbol_underestimates_and_converges(k in 0i64..32, n in 6u32..10) {
        let nt = 1usize << n;
        let exact = (k as f64).powi(2);
        let fd = fd_symbol(k, nt, 2.0 * PI);
        prop_assert!(fd <= exact * (1.0 + 1e-12));
        let finer = fd_symbol(k, 2 * nt, 2.0 * PI);
        prop_assert!(finer >= fd - 1e-9 * exact.max(1.0));
    }

    #[test]
    fn isotonic_fit_is_monotone_mean_preserving_and_idempotent(y in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
        let fit = isotonic_nondecreasing(&y);
        prop_assert_eq!(fit.len(), y.len());
        prop_assert!(fit.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        let (a, b): (f64, f64) = (y.iter().sum(), fit.iter().sum());
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        let again = isotonic_nondecreasing(&fit);
        prop_assert!(again.iter().zip(&fit).all(|(p, q)| (p - q).abs() <= 1e-12));
    }

    #[test]
    fn linear_fit_recovers_exact_lines(slope in -5.0f64..5.0, icpt in -5.0f64..5.0, n in 3usize..20) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.3 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| slope * v + icpt).collect();
        let f = linear_fit(&x, &y);
        prop_assert!((f.slope - slope).abs() <= 1e-10);
        prop_assert!((f.intercept - icpt).abs() <= 1e-10);
    }

    #[test]
    fn series_reversion_inverts_composition(a1 in 0.5f64..2.0, a2 in -1.0f64..1.0, a3 in -1.0f64..1.0) {
        let s = Series(vec![0.0, a1, a2, a3, 0.0, 0.0]);
        let id = s.compose(&s.revert());
        prop_assert!((id.coeff(1) - 1.0).abs() <= 1e-12);
        for k in [0, 2, 3, 4, 5] {
            prop_assert!(id.coeff(k).abs() <= 1e-10, "coefficient {} = {}", k, id.coeff(k));
        }
    }

    #[test]
    fn derivative_undoes_integration_below_the_truncation_order(c in proptest::collection::vec(-3.0f64..3.0, 2..8)) {
        // Truncated arithmetic: integration pushes the top coefficient out of range.
        let s = Series(c.clone());
        let back = s.integrate().derivative();
        for (k, v) in c.iter().enumerate().take(c.len() - 1) {
            prop_assert!((back.coeff(k) - v).abs() <= 1e-12);
        }
        let again = s.derivative().integrate();
        for (k, v) in c.iter().enumerate().skip(1) {
            prop_assert!((again.coeff(k) - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn torus_profile_inverse_round_trips(rho in 0.0f64..0.5) {
        let m = make_model("separable-torus", &BTreeMap::new()).unwrap();
        prop_assume!(rho < m.collar_agmon_width());
        let s = agmon_profile_inverse(&m, 0.0, rho).unwrap();
        prop_assert!((agmon_profile(&m, 0.0, s) - rho).abs() <= 1e-10);
    }

    #[test]
    fn verdict_passes_exactly_when_the_margin_is_nonnegative(m in -2.0f64..2.0, t in -2.0f64..2.0, tol in 0.0f64..1.0) {
        for v in [Verdict::within("w", m, t, tol), Verdict::at_least("l", m, t), Verdict::at_most("u", m, t)] {
            prop_assert_eq!(v.passed, v.margin >= 0.0);
        }
    }

    #[test]
    fn duplicate_h_values_never_validate(h in 0.001f64..1.0, extra in proptest::collection::vec(0.001f64..1.0, 0..4)) {
        let mut sweep = extra.clone();
        sweep.push(h);
        sweep.push(h);
        let text = format!(
            r#"{{"kind": "decay-sandwich", "model": "halfplane-unit", "h_sweep": {}}}"#,
            serde_json::to_string(&sweep).unwrap()
        );
        let cfg = parse_config(&text).unwrap();
        prop_assert!(cfg[0].resolve().is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn hs_quadrature_matches_the_eigendecomposition(n in 2usize..24, seed in 0u64..1000, li in 0usize..4) {
        let lambda = [4.0, 8.0, 16.0, 32.0][li];
        let h = 0.025;
        let ext = almost_analytic_extension(lambda, h, 2).unwrap();
        let p = random_symmetric(n, 0.0, 4.0 * lambda * h, seed);
        let err = symmetric_norm(&(hs_apply(&p, &ext).unwrap() - spectral_f(&p, lambda, h).unwrap()));
        prop_assert!(err <= 1e-6, "operator-norm error {}", err);
    }
}

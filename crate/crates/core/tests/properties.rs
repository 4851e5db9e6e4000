//! Randomized invariants of the solvers, transforms and statistics.

use std::f64::consts::TAU;

use proptest::prelude::*;

use hjhom::cell::{effective_hamiltonian, CellConfig};
use hjhom::fd_solver::{solve_cauchy, solve_cauchy_monotonized, SchemeConfig};
use hjhom::grid::{sample, TorusGrid};
use hjhom::model::problems::mechanical;
use hjhom::model::{kruzhkov_transform, tol_legendre, InitialData, LagrangianEvaluator, Potential, Problem};
use hjhom::stats::{kendall_increasing, loglog_fit, ols};

fn wave(a: f64, b: f64, c: f64) -> InitialData {
    InitialData::new(2, move |i, x| a * (TAU * x[0] + b).cos() + c * i as f64, TAU * a.abs(), a.abs() + c.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn monotonized_scheme_preserves_order(
        a in -0.3f64..0.3, b in 0.0f64..1.0, c in -0.5f64..0.5, d in 0.0f64..0.3,
    ) {
        let p = Problem::by_name("eikonal-1d").unwrap();
        let cfg = SchemeConfig::new(TorusGrid::new(1, 1.0, 64).unwrap(), 0.2);
        let lambda = 2.0 * p.spec.theta() + 1.0;
        let lo = wave(a, b, c);
        let hi = lo.shifted(d);
        let u = solve_cauchy_monotonized(&p.spec, &lo, Some(0.25), lambda, &cfg).unwrap();
        let v = solve_cauchy_monotonized(&p.spec, &hi, Some(0.25), lambda, &cfg).unwrap();
        for (x, y) in u.values().iter().zip(v.values()) {
            prop_assert!(x <= y, "{x} > {y}");
        }
    }

    #[test]
    fn shift_invariant_system_commutes_with_constants(
        a in -0.3f64..0.3, b in 0.0f64..1.0, shift in -2.0f64..2.0,
    ) {
        let p = Problem::by_name("eikonal-1d").unwrap();
        prop_assume!(p.spec.is_shift_invariant());
        let cfg = SchemeConfig::new(TorusGrid::new(1, 1.0, 64).unwrap(), 0.2);
        let data = wave(a, b, 0.1);
        let u = solve_cauchy(&p.spec, &data, Some(0.25), &cfg).unwrap();
        let v = solve_cauchy(&p.spec, &data.shifted(shift), Some(0.25), &cfg).unwrap();
        for (x, y) in u.values().iter().zip(v.values()) {
            prop_assert!((y - x - shift).abs() < 1e-10);
        }
    }

    #[test]
    fn legendre_biconjugate_recovers_hamiltonian(
        i in 0usize..2, x in 0.0f64..1.0, y in 0.0f64..1.0, q in -2.0f64..2.0,
        u0 in -1.0f64..1.0, u1 in -1.0f64..1.0,
    ) {
        let p = Problem::by_name("eikonal-1d").unwrap();
        let lag = LagrangianEvaluator::new(p.spec.clone(), 6.0, 1.0).unwrap();
        let u = [u0, u1];
        let back = lag.conjugate_back(i, &[x], &[y], &[q], &u).unwrap();
        let h = p.spec.eval(i, &[x], &[y], &[q], &u);
        prop_assert!((back - h).abs() <= 2.0 * tol_legendre(), "{back} vs {h}");
    }

    #[test]
    fn fenchel_young_inequality(y in 0.0f64..1.0, q in -2.0f64..2.0, v in -3.0f64..3.0) {
        let spec = mechanical(Potential::Cosine, 1);
        let lag = LagrangianEvaluator::new(spec.clone(), 6.0, 0.0).unwrap().numeric_only();
        let l = lag.lagrangian(0, &[0.0], &[y], &[v], &[0.0]).unwrap();
        let h = spec.eval(0, &[0.0], &[y], &[q], &[0.0]);
        prop_assert!(l + h >= q * v - tol_legendre());
    }

    #[test]
    fn kruzhkov_transform_round_trips(
        lambda in 1.5f64..4.0, t in 0.0f64..1.0, y in 0.0f64..1.0, q in -2.0f64..2.0,
        u0 in -1.0f64..1.0, u1 in -1.0f64..1.0,
    ) {
        let p = Problem::by_name("eikonal-1d").unwrap();
        let k = kruzhkov_transform(&p.spec, lambda).unwrap();
        let u = [u0, u1];
        for i in 0..2 {
            let direct = p.spec.eval(i, &[0.3], &[y], &[q], &u);
            let back = k.recover(i, &[0.3], t, &[y], &[q], &u);
            prop_assert!((direct - back).abs() <= 1e-10 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn resampling_a_refinement_restores_the_coarse_field(
        a in -1.0f64..1.0, b in 0.0f64..1.0, points in 8usize..40, factor in 2usize..5,
    ) {
        let coarse = TorusGrid::new(1, 1.0, points).unwrap();
        let fine = coarse.refined(factor);
        let data = wave(a, b, 0.5);
        let f = sample(|i, x, _| data.eval(i, x), &fine, 2, &[0.0]).unwrap();
        let back = f.resample_to(&coarse).unwrap();
        let direct = sample(|i, x, _| data.eval(i, x), &coarse, 2, &[0.0]).unwrap();
        for (x, y) in back.values().iter().zip(direct.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn effective_hamiltonian_is_convex(p in -2.0f64..2.0, q in -2.0f64..2.0) {
        let spec = mechanical(Potential::Cosine, 1);
        let cfg = CellConfig::for_dimension(1).with_points(128);
        let hbar = |s: f64| effective_hamiltonian(&spec, 0, &[0.0], &[s], &[0.0], &cfg).unwrap().value;
        let mid = hbar(0.5 * (p + q));
        prop_assert!(mid <= 0.5 * (hbar(p) + hbar(q)) + 1e-4);
    }
}

proptest! {
    #[test]
    fn loglog_fit_recovers_power_laws(c in 0.01f64..100.0, slope in -2.0f64..3.0) {
        let eps = [0.2, 0.1, 0.05, 0.025];
        let err: Vec<f64> = eps.iter().map(|e: &f64| c * e.powf(slope)).collect();
        let fit = loglog_fit(&eps, &err).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-9);
        prop_assert!((fit.intercept - c.ln()).abs() < 1e-9);
        prop_assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn ols_slope_ignores_offsets(ys in prop::collection::vec(-10.0f64..10.0, 3..10), shift in -5.0f64..5.0) {
        let xs: Vec<f64> = (0..ys.len()).map(|k| k as f64).collect();
        let shifted: Vec<f64> = ys.iter().map(|y| y + shift).collect();
        let a = ols(&xs, &ys).unwrap();
        let b = ols(&xs, &shifted).unwrap();
        prop_assert!((a.slope - b.slope).abs() < 1e-9);
        prop_assert!((a.residual_rms - b.residual_rms).abs() < 1e-9);
    }

    #[test]
    fn kendall_p_value_is_a_probability(values in prop::collection::vec(-1.0f64..1.0, 2..9)) {
        let k = kendall_increasing(&values);
        prop_assert!(k.p_value > 0.0 && k.p_value <= 1.0);
        prop_assert!((-1.0..=1.0).contains(&k.tau));
        let reversed: Vec<f64> = values.iter().rev().copied().collect();
        let r = kendall_increasing(&reversed);
        prop_assert!((k.tau + r.tau).abs() < 1e-12);
    }

    #[test]
    fn sorted_sequences_reach_the_smallest_p_value(mut values in prop::collection::vec(-1.0f64..1.0, 2..8)) {
        values.sort_by(f64::total_cmp);
        values.dedup();
        prop_assume!(values.len() >= 2);
        let n = values.len();
        let factorial: f64 = (1..=n).map(|k| k as f64).product();
        let k = kendall_increasing(&values);
        prop_assert!((k.p_value - 1.0 / factorial).abs() < 1e-12);
        prop_assert_eq!(k.tau, 1.0);
    }
}

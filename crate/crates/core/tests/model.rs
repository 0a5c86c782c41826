mod common;

use common::*;
use popmaxent::model::*;
use popmaxent::specfun::{inverse_upper_gamma, upper_gamma};
use popmaxent::{Error, ModelParams, RankedSample};
use proptest::prelude::*;

const OHIO: (f64, f64, f64) = (1.62, -3.7, 10.1);

/// Evaluates `f(x)` where the integrand is representable; beyond that the
/// exponential factor has long since underflowed.
fn finite_or_zero(x: f64, f: impl Fn(f64) -> f64) -> f64 {
    if x.is_finite() && x < 1e300 {
        f(x)
    } else {
        0.0
    }
}

fn ohio(n_c: usize) -> ModelParams {
    ModelParams::new(OHIO.0, OHIO.1.exp(), OHIO.2.exp(), 0.0).unwrap().with_units(n_c).unwrap()
}

#[test]
fn params_validation() {
    assert!(ModelParams::new(0.0, 1.0, 1.0, 0.0).is_err());
    assert!(ModelParams::new(2.5, 1.0, 1.0, 0.0).is_err());
    assert!(ModelParams::new(1.0, 0.0, 1.0, 0.0).is_err());
    assert!(ModelParams::new(1.0, 1.0, 0.5, 0.0).is_err());
    assert!(ModelParams::new(1.0, 1.0, 1.0, -0.1).is_err());
    assert!(ModelParams::q1(1.0, 1.0).unwrap().with_units(1).is_err());
    // N below n_c·x0 is impossible without drift.
    assert!(ModelParams::q1(1.0, 10.0).unwrap().with_units(10).unwrap().with_total(50.0).is_err());
}

#[test]
fn normalization_reduces_to_gamma0_at_q1() {
    let p = ModelParams::q1(1.0, 1.0).unwrap();
    assert!(rel_err(p.normalization().unwrap(), upper_gamma_oracle(0.0, 1.0)) < 1e-12);
}

#[test]
fn density_documented_values() {
    let p = ModelParams::q1(1.0, 1.0).unwrap();
    let want = (-1.0f64).exp() / upper_gamma_oracle(0.0, 1.0);
    assert!(rel_err(density(&p, 1.0).unwrap(), want) < 1e-12);
    assert!((density(&p, 1.0).unwrap() - 1.67680).abs() < 1e-4);
    let p = ModelParams::new(1.4, 0.01, 50.0, 0.0).unwrap();
    assert_eq!(density(&p, 50.0 * (1.0 - 1e-9)).unwrap(), 0.0);
    assert!(density(&p, 0.0).is_err());
}

#[test]
fn density_integrates_to_one_without_drift() {
    for (q, lambda, x0) in [(1.0, 1.0, 1.0), (1.5, 0.1, 100.0), (0.7, 0.02, 10.0), (1.9, 1e-4, 3.0)] {
        let p = ModelParams::new(q, lambda, x0, 0.0).unwrap();
        let total = exp_sinh(|v| finite_or_zero(x0 * v.exp(), |x| density(&p, x).unwrap() * x), 1e-12);
        assert!((total - 1.0).abs() < 1e-6, "q={q} Λ={lambda}: {total}");
    }
}

#[test]
fn density_integrates_to_one_with_drift() {
    let p = ModelParams::new(1.5, 0.1, 100.0, 0.3).unwrap();
    let vmax = (1.0 + 800.0 / 0.1f64).ln() + 4.0;
    let total = tanh_sinh(|v| { let x = 100.0 * v.exp(); density(&p, x).unwrap() * x }, -4.0, vmax, 1e-10);
    assert!((total - 1.0).abs() < 1e-6, "{total}");
}

#[test]
fn drift_extends_below_x0() {
    let p = ModelParams::new(1.2, 0.05, 100.0, 0.3).unwrap();
    assert!(density(&p, 80.0).unwrap() > 0.0);
}

#[test]
fn cumulative_documented_values() {
    let p = ModelParams::q1(1.0, 1.0).unwrap();
    assert_eq!(cumulative(&p, 1.0).unwrap(), 0.0);
    let far = cumulative(&p, 1e3).unwrap();
    let want = 1.0 - upper_gamma_oracle(0.0, 1000.0) / upper_gamma_oracle(0.0, 1.0);
    assert!((far - want).abs() < 1e-12 && (far - 1.0).abs() < 1e-12);
    let o = ohio(500);
    assert_eq!(cumulative(&o, o.x0()).unwrap(), 0.0);
    assert!(cumulative(&p, 0.5).is_err());
    let d = ModelParams::new(1.0, 1.0, 1.0, 0.2).unwrap();
    assert!(cumulative(&d, 2.0).is_err());
}

#[test]
fn cumulative_matches_integrated_density() {
    let p = ModelParams::new(1.3, 0.02, 10.0, 0.0).unwrap();
    for x in [12.0, 50.0, 300.0, 2000.0] {
        let mass = tanh_sinh(|t| density(&p, t).unwrap(), 10.0, x, 1e-12);
        assert!((cumulative(&p, x).unwrap() - mass).abs() < 1e-9, "x={x}");
        assert!((survival(&p, x).unwrap() - (1.0 - mass)).abs() < 1e-9);
    }
}

#[test]
fn rank_curve_documented_values() {
    let p = ModelParams::q1(1.0, 125.0).unwrap().with_units(141).unwrap();
    assert_eq!(rank_curve(&p, 141.0).unwrap(), 125.0);
    let half = rank_curve(&p, 70.5).unwrap();
    let want = 125.0 * inverse_upper_gamma(0.0, upper_gamma_oracle(0.0, 1.0) / 2.0).unwrap();
    assert!(rel_err(half, want) < 1e-9);
    assert!((cumulative(&p, half).unwrap() - 0.5).abs() < 1e-9);
    assert!(rank_curve(&p, 0.0).is_err());
    assert!(rank_curve(&p, 142.0).is_err());
}

#[test]
fn alicante_like_curve() {
    let p = ModelParams::from_totals(1_926_285.0, 141, 125.0, 1.0, 0.0).unwrap();
    let mean = equation_of_state_mean(&p).unwrap();
    assert!(rel_err(mean, 1_926_285.0 / (141.0 * 125.0)) < 1e-8);
    let ranks: Vec<f64> = (0..141).map(|i| i as f64 + 0.5).collect();
    let xs = rank_curve_many(&p, &ranks).unwrap();
    assert!(xs.windows(2).all(|w| w[1] < w[0]));
    assert!(xs[140] > 125.0);
}

#[test]
fn duality_over_grids() {
    let mut sets = vec![ohio(500)];
    for q in [0.6, 1.0, 1.3, 1.9] {
        for ll in [-13.5, -4.3, 0.0, 2.0] {
            sets.push(ModelParams::new(q, f64::exp(ll), 50.0, 0.0).unwrap().with_units(200).unwrap());
        }
    }
    for p in sets {
        let n = p.n_c().unwrap() as f64;
        for k in 1..=40 {
            let r = n * k as f64 / 40.5;
            let x = rank_curve(&p, r).unwrap();
            let c = cumulative(&p, x).unwrap();
            assert!((c - (1.0 - r / n)).abs() < 1e-8, "q={} Λ={} r={r}: {c}", p.q(), p.lambda());
        }
    }
}

#[test]
fn rank_curve_requires_units_and_no_drift() {
    assert!(rank_curve(&ModelParams::q1(1.0, 1.0).unwrap(), 1.0).is_err());
    let d = ModelParams::new(1.0, 1.0, 1.0, 0.1).unwrap().with_units(10).unwrap();
    assert!(rank_curve(&d, 1.0).is_err());
}

#[test]
fn gamma_scale_fixed_point_and_collapse() {
    let p = ModelParams::from_totals(1e6, 200, 50.0, 1.0, 0.0).unwrap();
    let ranks: Vec<f64> = (0..200).map(|i| i as f64 + 0.5).collect();
    let xs = rank_curve_many(&p, &ranks).unwrap();
    let sample = RankedSample::from_sizes(xs, "exact").unwrap();
    let scaled = gamma_scale(&sample, &p).unwrap();
    for (r, x) in scaled.ranks.iter().zip(&scaled.sizes) {
        assert!(rel_err(*x, gamma_master_curve(*r).unwrap()) < 1e-8);
    }
    // Fixed point: r = n_c, x = x0 maps to (Γ(0,Λ), Λ).
    let g0 = upper_gamma(0.0, p.lambda()).unwrap();
    assert!(rel_err(gamma_master_curve(g0).unwrap(), p.lambda()) < 1e-8);
}

#[test]
fn gamma_scale_rejects_other_models() {
    let s = RankedSample::from_sizes(vec![5.0, 3.0, 2.0], "s").unwrap();
    assert!(matches!(gamma_scale(&s, &ModelParams::new(1.2, 0.1, 1.0, 0.0).unwrap()), Err(Error::Domain(_))));
    assert!(gamma_scale(&s, &ModelParams::new(1.0, 0.1, 1.0, 0.2).unwrap()).is_err());
}

#[test]
fn equation_of_state_values() {
    let p = ModelParams::q1(1.0, 1.0).unwrap();
    let m = equation_of_state_mean(&p).unwrap();
    assert!(rel_err(m, (-1.0f64).exp() / upper_gamma_oracle(0.0, 1.0)) < 1e-12);
    assert!((m - 1.67680).abs() < 1e-4);
    let big = equation_of_state_mean(&ModelParams::q1(1e3, 1.0).unwrap()).unwrap();
    assert!((big - 1.0).abs() < 1e-3);
    let ens = ModelParams::new(1.2, (-4.3f64).exp(), 1.0, 0.43).unwrap();
    let v = equation_of_state_mean(&ens).unwrap();
    assert!(v.is_finite() && v > 1.0);
    // Mean against direct quadrature of the density.
    let p = ModelParams::new(1.3, 0.05, 1.0, 0.0).unwrap();
    let direct = exp_sinh(|v| finite_or_zero(v.exp(), |x| density(&p, x).unwrap() * x * x), 1e-12);
    assert!(rel_err(equation_of_state_mean(&p).unwrap(), direct) < 1e-9);
}

#[test]
fn equation_of_state_decreasing_in_lambda() {
    for (q, s) in [(0.8, 0.0), (1.0, 0.0), (1.6, 0.3), (2.0, 0.0)] {
        let vals: Vec<f64> = (-60..=20)
            .map(|i| equation_of_state_mean(&ModelParams::new(q, (0.25 * i as f64).exp(), 1.0, s).unwrap()).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]), "q={q}");
    }
}

#[test]
fn solve_lambda_round_trip() {
    let target = equation_of_state_mean(&ModelParams::q1(1.0, 1.0).unwrap()).unwrap();
    let l = solve_lambda(target * 100.0 * 7.0, 100, 7.0, 1.0, 0.0).unwrap();
    assert!((l - 1.0).abs() < 1e-6);
    let l = solve_lambda(1.67680 * 100.0, 100, 1.0, 1.0, 0.0).unwrap();
    assert!((l - 1.0).abs() < 1e-3);
    let huge = solve_lambda(100.0 * 5.0 * (1.0 + 1e-3), 100, 5.0, 1.0, 0.0).unwrap();
    assert!(huge > 500.0);
    assert!(matches!(solve_lambda(99.0, 100, 1.0, 1.0, 0.0), Err(Error::Infeasible(_))));
    let p = ModelParams::from_totals(1_926_285.0, 141, 125.0, 1.0, 0.0).unwrap();
    assert!(rel_err(equation_of_state_mean(&p).unwrap(), 1_926_285.0 / (141.0 * 125.0)) < 1e-8);
}

#[test]
fn ranked_sample_invariants() {
    let s = RankedSample::from_sizes(vec![3.0, 9.0, 1.0, 9.0], "t").unwrap();
    assert_eq!(s.sizes(), &[9.0, 9.0, 3.0, 1.0]);
    assert_eq!(s.ranks(), &[0.5, 1.5, 2.5, 3.5]);
    assert!(RankedSample::from_sizes(vec![], "t").is_err());
    assert!(RankedSample::from_sizes(vec![1.0, 0.0], "t").is_err());
    assert!(RankedSample::from_sizes(vec![1.0, f64::NAN], "t").is_err());
    let t = s.trimmed(1, 1).unwrap();
    assert_eq!(t.sizes(), &[9.0, 3.0]);
    assert_eq!(t.ranks(), &[0.5, 1.5]);
    assert!(s.trimmed(2, 2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_duality(q in 0.3f64..2.0, ll in -13.5f64..2.0, lx0 in 0.0f64..12.0, n_c in 2usize..2000, f in 0.001f64..1.0) {
        let p = ModelParams::new(q, ll.exp(), lx0.exp(), 0.0).unwrap().with_units(n_c).unwrap();
        let r = f * n_c as f64;
        let x = rank_curve(&p, r).unwrap();
        prop_assert!(x >= p.x0());
        prop_assert!((cumulative(&p, x).unwrap() - (1.0 - f)).abs() < 1e-8);
    }

    #[test]
    fn prop_solve_lambda_round_trip(q in 0.3f64..2.0, ll in -12.0f64..4.0, s in 0.0f64..0.6) {
        let p = ModelParams::new(q, ll.exp(), 10.0, s).unwrap();
        let m = equation_of_state_mean(&p).unwrap();
        let l = solve_lambda(m * 10.0 * 1000.0, 1000, 10.0, q, s).unwrap();
        prop_assert!(rel_err(l, ll.exp()) < 1e-6);
    }

    #[test]
    fn prop_rank_curve_decreasing(q in 0.3f64..2.0, ll in -10.0f64..2.0, f in 0.01f64..0.99) {
        let p = ModelParams::new(q, ll.exp(), 1.0, 0.0).unwrap().with_units(100).unwrap();
        prop_assert!(rank_curve(&p, 100.0 * f).unwrap() > rank_curve(&p, 100.0 * f + 0.5).unwrap());
    }
}

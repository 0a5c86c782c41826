use popmaxent::dynamics::*;
use popmaxent::growthsim::{simulate, InitLaw, SimConfig};
use popmaxent::stats::pearson_r;
use popmaxent::Error;
use proptest::prelude::*;

fn rec(id: &str, year: i32, pop: u64) -> PanelRecord {
    PanelRecord { unit_id: id.into(), year, population: pop }
}

fn point(u: f64, udot: f64) -> DynamicsPoint {
    DynamicsPoint { u, udot, unit_id: "x".into(), period: (2000, 2001) }
}

/// Panel of 300 units growing as `ẋ = k₁x + k_q x^q` over ten years.
fn sim_panel(q: f64, kq: f64, seed: u64) -> SimConfig {
    SimConfig {
        n_units: 300,
        q,
        k1_mean: 0.01,
        k1_std: 0.02,
        kq_mean: kq,
        dt: 0.01,
        steps: 1000,
        init: InitLaw::LogUniform { min: 100.0, max: 1e5 },
        seed,
        ..SimConfig::default()
    }
}

#[test]
fn single_step_point() {
    let pts = panel_to_points(&[rec("a", 2000, 1000), rec("a", 2001, 1100)]).unwrap();
    assert_eq!(pts.len(), 1);
    assert!((pts[0].u - 6.9553).abs() < 2e-4, "{}", pts[0].u);
    assert!((pts[0].u - 0.5 * (1000f64.ln() + 1100f64.ln())).abs() < 1e-15);
    assert!((pts[0].udot - 0.09531).abs() < 1e-5);
    assert!((pts[0].udot - 1.1f64.ln()).abs() < 1e-15);
    assert_eq!(pts[0].period, (2000, 2001));
}

#[test]
fn constant_population_has_zero_rate() {
    let panel: Vec<_> = (1990..2000).map(|y| rec("c", y, 4321)).collect();
    let pts = panel_to_points(&panel).unwrap();
    assert_eq!(pts.len(), 9);
    assert!(pts.iter().all(|p| p.udot == 0.0));
}

#[test]
fn gap_year_divides_by_interval() {
    let pts = panel_to_points(&[rec("g", 1996, 500), rec("g", 1998, 600)]).unwrap();
    assert!((pts[0].udot - 0.09116).abs() < 1e-5);
    assert!((pts[0].udot - 1.2f64.ln() / 2.0).abs() < 1e-15);
    assert_eq!(pts[0].period, (1996, 1998));
}

#[test]
fn units_observed_once_are_skipped() {
    let pts = panel_to_points(&[rec("a", 2000, 10), rec("b", 2000, 10), rec("b", 2002, 20)]).unwrap();
    assert_eq!(pts.len(), 1);
    assert_eq!(pts[0].unit_id, "b");
    assert!(matches!(panel_to_points(&[rec("a", 2000, 10)]), Err(Error::InvalidInput(_))));
    assert!(panel_to_points(&[]).is_err());
}

#[test]
fn invalid_records_are_located() {
    let err = panel_to_points(&[rec("a", 2000, 10), rec("a", 2001, 0), rec("a", 2000, 12)]).unwrap_err().to_string();
    assert!(err.contains("record 1"), "{err}");
    assert!(err.contains("record 2") && err.contains("record 0"), "{err}");
}

fn key(p: &DynamicsPoint) -> (i32, i32, u64, u64) {
    (p.period.0, p.period.1, p.u.to_bits(), p.udot.to_bits())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_relabel_and_permute(pops in prop::collection::vec(prop::collection::vec(1u64..100_000, 2..6), 1..6), rot in 0usize..50) {
        let mut panel = Vec::new();
        for (i, ps) in pops.iter().enumerate() {
            for (k, p) in ps.iter().enumerate() {
                panel.push(rec(&format!("unit{i}"), 2000 + 2 * k as i32, *p));
            }
        }
        let mut base: Vec<_> = panel_to_points(&panel).unwrap().iter().map(key).collect();
        base.sort();
        let n = panel.len();
        let mut shuffled: Vec<_> = panel
            .iter()
            .map(|r| PanelRecord { unit_id: format!("z-{}", r.unit_id.len() * 7 + r.unit_id.as_bytes()[4] as usize), ..r.clone() })
            .collect();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        let mut other: Vec<_> = panel_to_points(&shuffled).unwrap().iter().map(key).collect();
        other.sort();
        prop_assert_eq!(base, other);
    }

    #[test]
    fn prop_scale_shift(pops in prop::collection::vec(1u64..10_000, 2..8), c in 1u64..50) {
        let panel: Vec<_> = pops.iter().enumerate().map(|(k, p)| rec("a", 2000 + k as i32, *p)).collect();
        let scaled: Vec<_> = panel.iter().map(|r| PanelRecord { population: r.population * c, ..r.clone() }).collect();
        let a = panel_to_points(&panel).unwrap();
        let b = panel_to_points(&scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((y.u - x.u - (c as f64).ln()).abs() < 1e-12);
            prop_assert!((y.udot - x.udot).abs() < 1e-12);
        }
    }
}

#[test]
fn equal_bins_are_all_kept() {
    let pts: Vec<_> = (0..400).map(|i| point(5.0 + 0.25 * (i % 8) as f64 + 0.1, 0.01)).collect();
    let b = bin_points(&pts, DEFAULT_DELTA_U, DEFAULT_MIN_FRAC).unwrap();
    assert_eq!(b.bins.len(), 8);
    assert_eq!(b.removed, 0);
    assert!(b.bins.iter().all(|x| x.count == 50));
    assert!((b.anchor - 5.1).abs() < 1e-12);
    assert!((b.bins[0].center - 5.225).abs() < 1e-12);
}

#[test]
fn sparse_bin_is_removed() {
    let mut pts: Vec<_> = (0..100).map(|i| point(1.0 + 0.001 * i as f64, 0.02)).collect();
    pts.extend((0..10).map(|_| point(2.0, 0.5)));
    let b = bin_points(&pts, 0.25, 0.15).unwrap();
    assert_eq!(b.bins.len(), 1);
    assert_eq!(b.removed, 1);
    assert_eq!(b.bins[0].count, 100);
    assert!((b.bins[0].mean_udot - 0.02).abs() < 1e-15);
}

#[test]
fn binning_errors() {
    assert!(bin_points(&[], 0.25, 0.15).is_err());
    assert!(bin_points(&[point(1.0, 0.0)], 0.0, 0.15).is_err());
    // A threshold above the largest count removes every bin.
    assert!(matches!(bin_points(&[point(1.0, 0.0), point(3.0, 0.0)], 0.25, 1.5), Err(Error::Empty(_))));
}

fn exact_bins(k1: f64, kq: f64, q: f64) -> BinnedDynamics {
    let bins = (0..24)
        .map(|i| {
            let u = 4.0 + 0.25 * i as f64;
            DynamicsBin { center: u, mean_udot: k1 + kq * ((q - 1.0) * u).exp(), std_udot: 0.01, count: 20 }
        })
        .collect();
    BinnedDynamics { delta_u: 0.25, anchor: 3.875, min_frac: 0.15, bins, removed: 0 }
}

#[test]
fn exact_bins_recover_parameters() {
    for weighted in [false, true] {
        let opts = DynamicsFitOptions { weighted, ..DynamicsFitOptions::default() };
        let f = fit_dynamics_with(&exact_bins(0.01, 0.002, 1.5), &opts).unwrap();
        assert!(f.well_defined);
        assert!((f.k1 - 0.01).abs() < 1e-6, "{f:?}");
        assert!((f.kq - 0.002).abs() < 1e-6, "{f:?}");
        assert!((f.q - 1.5).abs() < 1e-6, "{f:?}");
        assert!((f.correlation - 1.0).abs() < 1e-9);
    }
}

#[test]
fn too_few_bins_rejected() {
    let mut b = exact_bins(0.01, 0.002, 1.5);
    b.bins.truncate(3);
    assert!(matches!(fit_dynamics(&b), Err(Error::InvalidInput(_))));
}

#[test]
fn noisy_flat_bins_are_degenerate() {
    // Deterministic pseudo-noise of size 0.05 around a constant rate.
    let bins = (0..30)
        .map(|i| {
            let noise = 0.05 * ((i as f64 * 12.9898).sin() * 43758.5453).fract();
            DynamicsBin { center: 3.0 + 0.25 * i as f64, mean_udot: 0.01 + noise, std_udot: 0.05, count: 30 }
        })
        .collect();
    let b = BinnedDynamics { delta_u: 0.25, anchor: 2.875, min_frac: 0.15, bins, removed: 0 };
    let f = fit_dynamics(&b).unwrap();
    assert!(!f.well_defined, "{f:?}");
    assert_eq!(f.q, 1.0);
    assert_eq!(f.kq, 0.0);
}

fn pipeline(cfg: &SimConfig) -> (Vec<DynamicsPoint>, BinnedDynamics, DynamicsFit) {
    let pts = panel_to_points(&simulate(cfg).unwrap()).unwrap();
    let b = bin_points(&pts, DEFAULT_DELTA_U, DEFAULT_MIN_FRAC).unwrap();
    let f = fit_dynamics(&b).unwrap();
    (pts, b, f)
}

#[test]
fn simulated_q13_is_recovered() {
    let kq = 0.015 * (-0.3f64 * 8.0).exp();
    let (_, _, f) = pipeline(&sim_panel(1.3, kq, 11));
    assert!(f.well_defined, "{f:?}");
    assert!((f.q - 1.3).abs() <= 0.1, "q̂ = {}", f.q);
}

#[test]
fn simulated_bin_means_track_the_rate_law() {
    let (q, kq) = (1.3, 0.015 * (-0.3f64 * 8.0).exp());
    let cfg = sim_panel(q, kq, 12);
    let (_, b, _) = pipeline(&cfg);
    // The mean of ln(x₂/x₁) over a year loses k₁_std²/2 to the fluctuations.
    let law = |u: f64| cfg.k1_mean - 0.5 * cfg.k1_std.powi(2) + kq * ((q - 1.0) * u).exp();
    let inside = b
        .bins
        .iter()
        .filter(|x| (x.mean_udot - law(x.center)).abs() <= 2.0 * x.std_udot / (x.count as f64).sqrt())
        .count();
    assert!(inside as f64 >= 0.85 * b.bins.len() as f64, "{inside} of {}", b.bins.len());
}

#[test]
fn proportional_growth_shows_no_size_dependence() {
    let cfg = SimConfig { n_units: 1000, ..sim_panel(1.0, 0.0, 13) };
    let (pts, _, f) = pipeline(&cfg);
    assert!(pts.len() >= 10_000);
    let u: Vec<f64> = pts.iter().map(|p| p.u).collect();
    let v: Vec<f64> = pts.iter().map(|p| p.udot).collect();
    let r = pearson_r(&u, &v).unwrap();
    assert!(r.abs() < 0.1, "R = {r}");
    assert!(!f.well_defined || (f.q - 1.0).abs() <= 0.1, "{f:?}");
}

#[test]
fn linear_diagnostic() {
    let bins = (0..10)
        .map(|i| DynamicsBin { center: i as f64, mean_udot: 0.5 - 0.02 * i as f64, std_udot: 0.0, count: 5 })
        .collect();
    let b = BinnedDynamics { delta_u: 1.0, anchor: -0.5, min_frac: 0.15, bins, removed: 0 };
    let l = fit_linear_dynamics(&b).unwrap();
    assert!((l.slope + 0.02).abs() < 1e-12 && (l.intercept - 0.5).abs() < 1e-12);
    assert!((l.correlation + 1.0).abs() < 1e-12);
}

//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

mod common;
#[path = "../../core/tests/common/mod.rs"]
mod oracle;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use oracle::{rel_err, upper_gamma_oracle};
use popmaxent::estimation::consistency_workflow;
use popmaxent::growthsim::{InitLaw, SimConfig};
use popmaxent::model::{cumulative, equation_of_state_mean, rank_curve, solve_lambda};
use popmaxent::sampling::{confidence_band, sample};
use popmaxent::specfun::{inverse_upper_gamma, upper_gamma};
use popmaxent::stats::{ks_critical_value, ks_statistic, median, pearson_r, slope_through_origin};
use popmaxent::{ModelParams, RankedSample};
use popmaxent_cli::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, title: &str, ok: bool, start: Instant, limit: Duration, detail: String) {
    let elapsed = start.elapsed();
    let pass = ok && elapsed <= limit;
    // Written past the test harness capture so the line shows in every run.
    let mut out = std::io::stdout();
    let _ = writeln!(
        out,
        "criterion {n} ({title}): {} [{:.1} s, limit {} s] {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(ok, "criterion {n}: {detail}");
    assert!(elapsed <= limit, "criterion {n}: took {elapsed:?}");
}

#[test]
fn criterion_1_special_functions() {
    let t = Instant::now();
    let (mut worst, mut worst_rec, mut worst_trip, mut points) = (0f64, 0f64, 0f64, 0);
    for i in 0..15 {
        let a = -1.5 + 0.25 * i as f64;
        for j in 0..16 {
            let z = 1e-3 * (50.0f64 / 1e-3).powf(j as f64 / 15.0);
            let g = upper_gamma(a, z).unwrap();
            worst = worst.max(rel_err(g, upper_gamma_oracle(a, z)));
            worst_trip = worst_trip.max(rel_err(inverse_upper_gamma(a, g).unwrap(), z));
            if a <= 1.0 {
                let next = upper_gamma(a + 1.0, z).unwrap();
                let term = z.powf(a) * (-z).exp();
                worst_rec = worst_rec.max((a * g - (next - term)).abs() / next.max(term));
            }
            points += 1;
        }
    }
    let ok = points >= 200 && worst < 1e-10 && worst_rec < 1e-9 && worst_trip < 1e-7;
    verdict(
        1,
        "special functions",
        ok,
        t,
        Duration::from_secs(10),
        format!("{points} points, oracle {worst:.1e}, recurrence {worst_rec:.1e}, round trip {worst_trip:.1e}"),
    );
}

#[test]
fn criterion_2_equation_of_state() {
    let t = Instant::now();
    let m = equation_of_state_mean(&ModelParams::q1(1.0, 1.0).unwrap()).unwrap();
    let oracle = (-1.0f64).exp() / upper_gamma_oracle(0.0, 1.0);
    let lambda = solve_lambda(m * 100.0, 100, 1.0, 1.0, 0.0).unwrap();
    let ok = (m - 1.67680).abs() <= 1e-4 && rel_err(m, oracle) < 1e-10 && (lambda - 1.0).abs() <= 1e-6;
    verdict(2, "equation of state", ok, t, Duration::from_secs(1), format!("mean {m:.7}, oracle {oracle:.7}, Λ {lambda:.9}"));
}

#[test]
fn criterion_3_rank_cumulative_duality() {
    let t = Instant::now();
    let mut sets = vec![ModelParams::new(1.62, (-3.7f64).exp(), 10.1f64.exp(), 0.0).unwrap().with_units(500).unwrap()];
    for q in [0.6, 1.0, 1.3, 1.62, 1.9] {
        for ll in [-13.5, -5.0, -1.0, 0.0, 2.0] {
            sets.push(ModelParams::new(q, f64::exp(ll), 30.0, 0.0).unwrap().with_units(250).unwrap());
        }
    }
    let mut worst = 0f64;
    for p in &sets {
        let n = p.n_c().unwrap() as f64;
        for k in 1..=50 {
            let r = n * k as f64 / 50.5;
            let c = cumulative(p, rank_curve(p, r).unwrap()).unwrap();
            worst = worst.max((c - (1.0 - r / n)).abs());
        }
    }
    verdict(3, "rank/cumulative duality", worst < 1e-8, t, Duration::from_secs(10), format!("{} sets, worst {worst:.1e}", sets.len()));
}

#[test]
fn criterion_4_sampling_law() {
    let t = Instant::now();
    let mut ds = Vec::new();
    let mut ok = true;
    for (k, (q, ll)) in [(0.8, -13.5), (1.0, -4.3), (1.3, -1.0), (1.65, -8.0), (1.2, 0.0)].into_iter().enumerate() {
        let p = ModelParams::new(q, f64::exp(ll), 20.0, 0.0).unwrap();
        let xs = sample(&p, 100_000, 400 + k as u64).unwrap();
        let d = ks_statistic(&xs, |x| cumulative(&p, x)).unwrap();
        ok &= d < ks_critical_value(xs.len(), 0.01);
        ds.push(format!("{d:.4}"));
    }
    let crit = ks_critical_value(100_000, 0.01);
    verdict(4, "sampling law", ok, t, Duration::from_secs(60), format!("D = [{}], critical {crit:.4}", ds.join(", ")));
}

#[test]
fn criterion_5_band_coverage() {
    let t = Instant::now();
    let p = ModelParams::from_totals(1_926_285.0, 141, 125.0, 1.0, 0.0).unwrap();
    let band = confidence_band(&p, 141, 10_000, 0.9, 5).unwrap();
    let trials = 2000;
    let mut inside = vec![0usize; 141];
    for k in 0..trials {
        let mut xs = sample(&p, 141, 5_000_000 + k).unwrap();
        xs.sort_by(|a, b| b.total_cmp(a));
        for (i, hit) in band.contains(&xs).into_iter().enumerate() {
            inside[i] += hit as usize;
        }
    }
    let cov: Vec<f64> = inside.iter().map(|c| *c as f64 / trials as f64).collect();
    let (lo, hi) = cov.iter().fold((1f64, 0f64), |(l, h), c| (l.min(*c), h.max(*c)));
    let ok = cov.iter().all(|c| (c - 0.9).abs() <= 0.03);
    verdict(5, "confidence bands", ok, t, Duration::from_secs(300), format!("{trials} samples, coverage in [{lo:.3}, {hi:.3}]"));
}

#[test]
fn criterion_6_estimator_recovery() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut dq, mut dl, mut failures) = (Vec::new(), Vec::new(), 0);
    for i in 0..20u64 {
        let q = rng.random_range(0.9..1.7);
        let sigma = rng.random_range(0.0..0.5);
        let n = rng.random_range(100..=500usize);
        let ll = rng.random_range(-5.9..-2.7);
        let lx0 = rng.random_range(4.2..6.8);
        let p = ModelParams::new(q, f64::exp(ll), f64::exp(lx0), sigma).unwrap();
        let s = RankedSample::from_sizes(sample(&p, n, 1000 + i).unwrap(), format!("province {i}")).unwrap();
        let r = consistency_workflow(&s).unwrap();
        failures += r.is_declared_failure() as usize;
        dq.push((r.params.q() - q).abs());
        dl.push((r.params.lambda().ln() - ll).abs());
    }
    let (mq, ml) = (median(&dq), median(&dl));
    let max_l = dl.iter().cloned().fold(0.0, f64::max);
    verdict(
        6,
        "estimator recovery",
        mq <= 0.1 && ml <= 0.5,
        t,
        Duration::from_secs(600),
        format!("median |Δq| {mq:.3}, median |Δln Λ| {ml:.3} (max {max_l:.2}), declared failures {failures}"),
    );
}

#[test]
fn criterion_7_gamma_collapse() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut panel = Vec::new();
    for g in 0..10u64 {
        let n_c = rng.random_range(60..=600usize);
        let x0 = f64::exp(rng.random_range(2.5..6.5));
        let lambda = f64::exp(rng.random_range(-7.0..-1.5));
        let p = ModelParams::q1(lambda, x0).unwrap();
        panel.extend(province(&format!("g{g}"), &p, n_c, 2000, 700 + g));
    }
    let input = write_records(dir.path(), "panel.csv", &panel, Some(&group_map(&panel)));
    let args = ScaleArgs {
        input,
        year: 2000,
        groups: Vec::new(),
        params: None,
        fit_n: false,
        replicas: 10_000,
        level: 0.9,
        seed: 7,
        out_dir: dir.path().join("out"),
    };
    let (index, _) = run_scale(&args).unwrap();
    let mut hit = 0.0;
    let mut total = 0.0;
    for e in &index.groups {
        let n = e.params.as_ref().unwrap().n_c.unwrap() as f64;
        hit += e.inside_band.unwrap() * n;
        total += n;
    }
    let frac = hit / total;
    let worst = index.groups.iter().map(|e| e.inside_band.unwrap()).fold(1.0, f64::min);
    verdict(
        7,
        "Gamma scaling collapse",
        index.groups.iter().all(|e| e.ok) && frac >= 0.9,
        t,
        Duration::from_secs(120),
        format!("{} groups, {} points, {:.1}% inside (worst group {:.1}%)", index.groups.len(), total, 100.0 * frac, 100.0 * worst),
    );
}

/// Fifty provinces with q spread over [0.6, 1.5]; every tenth has no q-term.
fn fifty_provinces() -> SimulationPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let provinces = (0..50u64)
        .map(|i| {
            let degenerate = i % 10 == 9;
            let q: f64 = rng.random_range(0.6..1.5);
            let amplitude: f64 = rng.random_range(0.01..0.02) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let (q, kq) = if degenerate { (1.0, 0.0) } else { (q, amplitude * (-(q - 1.0) * 8.0).exp()) };
            let config = SimConfig {
                n_units: 300,
                q,
                k1_mean: 0.01,
                k1_std: 0.02,
                kq_mean: kq,
                dt: 0.01,
                steps: 1000,
                init: InitLaw::LogUniform { min: 100.0, max: 1e5 },
                seed: i,
                ..SimConfig::default()
            };
            ProvinceSpec { name: format!("p{i:02}"), config }
        })
        .collect();
    SimulationPlan::Provinces { provinces }
}

#[test]
fn criterion_8_dynamics_link() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let plan = write_file(dir.path(), "plan.json", &serde_json::to_string_pretty(&fifty_provinces()).unwrap());
    run_simulate(&SimulateArgs { plan, seed: None, out_dir: dir.path().into() }).unwrap();
    let mut args = CompareArgs::new(dir.path().join("panel.csv"));
    args.maxent = MaxentMode::None;
    args.reference = Some(dir.path().join("reference_q.csv"));
    args.out_dir = dir.path().join("cmp");
    let (doc, _) = run_compare_q(&args).unwrap();
    let s = &doc.summary;
    let fit = s.versus_reference.as_ref().unwrap();
    let degenerate: Vec<String> = (0..50).filter(|i| i % 10 == 9).map(|i| format!("p{i:02}")).collect();
    let flagged = degenerate.iter().all(|g| s.ill_defined.contains(g));
    let ok = (0.9..=1.1).contains(&fit.slope) && fit.r >= 0.95 && flagged && s.failed.is_empty();
    // Unconstrained estimates over every province with a q-term, for context.
    let (x, y): (Vec<f64>, Vec<f64>) = doc
        .rows
        .iter()
        .filter(|r| !degenerate.contains(&r.group))
        .map(|r| (r.q_reference.unwrap(), r.q_dynamics_raw.unwrap()))
        .unzip();
    let raw_slope = slope_through_origin(&x, &y).unwrap();
    let raw_r = pearson_r(&x, &y).unwrap();
    verdict(
        8,
        "dynamics link",
        ok,
        t,
        Duration::from_secs(900),
        format!(
            "slope {:.3}, R {:.3} over {} well-defined provinces; {} ill-defined; degenerate flagged: {flagged}; \
             raw estimates over {} provinces with a q-term: slope {raw_slope:.3}, R {raw_r:.3}",
            fit.slope,
            fit.r,
            fit.n,
            s.ill_defined.len(),
            x.len()
        ),
    );
}

/// Runs the binary; non-convergence and declared failure still write reports.
fn bin(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_popmaxent")).args(args).output().unwrap();
    let code = out.status.code().unwrap();
    assert!([EXIT_OK, EXIT_NON_CONVERGENCE, EXIT_DECLARED_FAILURE].contains(&code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn run_all_commands(data: &Path, out: &Path) {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let panel = s(&data.join("panel.csv"));
    let o = |sub: &str| s(&out.join(sub));
    bin(&["simulate", &s(&data.join("plan.json")), "--out-dir", &o("simulate")]);
    bin(&["ingest-check", &panel, "--out-dir", &o("ingest")]);
    bin(&["fit", &panel, "--group", "p1", "--year", "2010", "--mode", "q", "--replicas", "1000", "--out-dir", &o("fit")]);
    bin(&["fit", &panel, "--group", "p0", "--year", "2010", "--mode", "consistency", "--replicas", "1000", "--seed", "3", "--out-dir", &o("fit")]);
    bin(&["scale", &panel, "--year", "2005", "--replicas", "1000", "--out-dir", &o("scale")]);
    bin(&["band", "--q", "1.3", "--lambda", "0.01", "--x0", "40", "--sigma", "0.2", "--n-c", "60", "--replicas", "2000", "--out-dir", &o("band")]);
    bin(&["dynamics", &panel, "--group", "p2", "--out-dir", &o("dynamics")]);
    bin(&["compare-q", &panel, "--maxent", "q", "--reference", &s(&data.join("reference_q.csv")), "--out-dir", &o("compare")]);
}

fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn criterion_9_determinism() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    let provinces = (0..3u64)
        .map(|i| ProvinceSpec {
            name: format!("p{i}"),
            config: SimConfig {
                n_units: 150,
                q: 1.0 + 0.2 * i as f64,
                k1_mean: 0.01,
                k1_std: 0.02,
                kq_mean: 0.015 * (-(0.2 * i as f64) * 8.0).exp(),
                init: InitLaw::LogUniform { min: 100.0, max: 1e5 },
                seed: 40 + i,
                ..SimConfig::default()
            },
        })
        .collect();
    let plan = serde_json::to_string_pretty(&SimulationPlan::Provinces { provinces }).unwrap();
    let plan_path = write_file(&data, "plan.json", &plan);
    run_simulate(&SimulateArgs { plan: plan_path, seed: None, out_dir: data.clone() }).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_all_commands(&data, &a);
    run_all_commands(&data, &b);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    let differing: Vec<&String> = sa.iter().zip(&sb).filter(|(x, y)| x != y).map(|(x, _)| &x.0).collect();
    let ok = sa.len() == sb.len() && sa.len() >= 14 && differing.is_empty();
    verdict(9, "determinism", ok, t, Duration::from_secs(300), format!("{} files compared, differing {differing:?}", sa.len()));
}

//! The logarithmic-moment system.
//!
//! Writing `ln x = ln x₀ + U + σZ`, the moment equations for `n = 1..K` say
//! that the raw moments of `U + σZ` equal the sample moments of
//! `ln(x/x₀)`. The first equation fixes `ln x₀ = E[ln x] − M₁`; the rest are
//! equivalent to matching cumulants, which do not involve `x₀`: variance and
//! third cumulant without drift, third and fourth cumulants with drift (the
//! normal kernel only adds `σ²` to the variance, which then yields `σ`).

use nalgebra::DMatrix;
use serde::Serialize;

use super::{finite, goodness, FitMethod, FitReport, StdErrors};
use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions};
use crate::model::{ModelParams, RankedSample};
use crate::specfun::{bessel_triangle, log_moments};

use super::rank::{LOG_LAMBDA_GRID, Q_GRID};

const Q_BOUNDS: (f64, f64) = (0.05, 2.0);
const LOG_LAMBDA_BOUNDS: (f64, f64) = (-30.0, 8.0);
/// Scaled sum of squares below which a start counts as having found a root.
const ROOT_COST: f64 = 1e-20;

/// Sample statistics of `ln x` entering the moment system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogMomentSample {
    pub n: usize,
    /// `E[lnⁿ x]` for `n = 0..=4`.
    pub raw: [f64; 5],
    pub mean: f64,
    /// Central moments of order 2, 3, 4 (divisor `n`).
    pub central: [f64; 3],
    #[serde(skip)]
    logs: Vec<f64>,
}

impl LogMomentSample {
    pub fn new(sample: &RankedSample) -> Self {
        let logs: Vec<f64> = sample.sizes().iter().map(|x| x.ln()).collect();
        let n = logs.len();
        let nf = n as f64;
        let mut raw = [0.0; 5];
        for &l in &logs {
            let mut p = 1.0;
            for r in raw.iter_mut() {
                *r += p;
                p *= l;
            }
        }
        raw.iter_mut().for_each(|r| *r /= nf);
        let mean = raw[1];
        let mut central = [0.0; 3];
        for &l in &logs {
            let d = l - mean;
            central[0] += d * d;
            central[1] += d * d * d;
            central[2] += d * d * d * d;
        }
        central.iter_mut().for_each(|c| *c /= nf);
        Self { n, raw, mean, central, logs }
    }

    /// Sample cumulants `k₂, k₃, k₄` of `ln x`.
    pub fn cumulants(&self) -> [f64; 3] {
        let [c2, c3, c4] = self.central;
        [c2, c3, c4 - 3.0 * c2 * c2]
    }
}

/// Cumulants `κ₁..κ₄` of `U` from its raw moments (index 0 unused).
fn cumulants(m: &[f64; 5]) -> [f64; 5] {
    let [_, m1, m2, m3, m4] = *m;
    [
        0.0,
        m1,
        m2 - m1 * m1,
        m3 - 3.0 * m2 * m1 + 2.0 * m1.powi(3),
        m4 - 4.0 * m3 * m1 - 3.0 * m2 * m2 + 12.0 * m2 * m1 * m1 - 6.0 * m1.powi(4),
    ]
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Raw moments of `U + σZ`: `Σ_i T^n_i σ^{2i} M_{n−2i}`.
fn drift_moments(m: &[f64; 5], sigma: f64) -> [f64; 5] {
    let mut w = [0.0; 5];
    for (n, wn) in w.iter_mut().enumerate() {
        let n = n as u32;
        *wn = (0..=n / 2)
            .map(|i| bessel_triangle(n, i).unwrap_or(0) as f64 * sigma.powi(2 * i as i32) * m[(n - 2 * i) as usize])
            .sum();
    }
    w
}

/// Residuals of the moment equations as stated: for each order `n`,
/// `Σ_i T^n_i σ^{2i} M_{n−2i}(q, Λ) − Σ_m (−1)^m C(n, m) E[ln^{n−m} x] ln^m x₀`.
/// Orders `1..=3` without drift and `1..=4` with drift.
pub fn moment_system_residuals(stats: &LogMomentSample, params: &ModelParams, with_drift: bool) -> Result<Vec<f64>> {
    let m = log_moments(params.q(), params.lambda())?;
    let sigma = if with_drift { params.sigma() } else { 0.0 };
    let w = drift_moments(&m, sigma);
    let lx0 = params.x0().ln();
    let order = if with_drift { 4 } else { 3 };
    Ok((1..=order)
        .map(|n: u32| {
            let rhs: f64 = (0..=n)
                .map(|k| {
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    sign * binomial(n, k) * stats.raw[(n - k) as usize] * lx0.powi(k as i32)
                })
                .sum();
            w[n as usize] - rhs
        })
        .collect())
}

struct Solution {
    q: f64,
    ll: f64,
    sigma: f64,
    cost: f64,
    index: usize,
    converged: bool,
}

/// Scaled cumulant mismatches for the reduced `(q, ln Λ)` problem.
fn reduced_residuals(theta: &[f64], k: &[f64; 3], orders: &[usize]) -> Result<Vec<f64>> {
    let m = log_moments(theta[0], theta[1].exp())?;
    let kappa = cumulants(&m);
    let k2 = k[0];
    Ok(orders
        .iter()
        .map(|&n| (kappa[n] - k[n - 2]) / k2.powf(n as f64 / 2.0))
        .collect())
}

fn solve_from_grid(k: &[f64; 3], orders: &[usize]) -> Vec<(f64, usize, Vec<f64>, bool)> {
    let opts = LmOptions {
        lower: Some(vec![Q_BOUNDS.0, LOG_LAMBDA_BOUNDS.0]),
        upper: Some(vec![Q_BOUNDS.1, LOG_LAMBDA_BOUNDS.1]),
        ftol: 1e-15,
        xtol: 1e-13,
        gtol: 1e-30,
        ..LmOptions::default()
    };
    let mut out = Vec::new();
    let mut index = 0;
    for &q in &Q_GRID {
        for &ll in &LOG_LAMBDA_GRID {
            let f = |t: &[f64]| reduced_residuals(t, k, orders);
            if let Ok(sol) = levenberg_marquardt(f, &[q, ll], &opts) {
                out.push((sol.cost, index, sol.params, sol.converged));
            }
            index += 1;
        }
    }
    out
}

fn by_cost(a: &Solution, b: &Solution) -> std::cmp::Ordering {
    a.cost.total_cmp(&b.cost).then(a.index.cmp(&b.index))
}

/// Solves the logarithmic-moment system (orders 1–3 without drift, 1–4 with
/// drift) by multistart root finding over the starting grid.
///
/// With drift, a root whose implied `σ²` is negative is not accepted; if no
/// root with `σ² ≥ 0` exists, `σ` is held at 0 and the remaining equations
/// are solved in the least-squares sense (noted in the report).
pub fn fit_moments(sample: &RankedSample, with_drift: bool) -> Result<FitReport> {
    let n_c = sample.len();
    if n_c < 20 {
        return Err(Error::InvalidInput(format!("moment fit needs ≥ 20 entries, got {n_c}")));
    }
    let stats = LogMomentSample::new(sample);
    let k = stats.cumulants();
    if !(k[0] > 0.0) {
        return Err(Error::InvalidInput("all sizes are equal; the moment system is degenerate".into()));
    }
    let orders: &[usize] = if with_drift { &[3, 4] } else { &[2, 3] };
    let runs = solve_from_grid(&k, orders);
    if runs.is_empty() {
        return Err(Error::NonConvergence("moment system: every start failed".into()));
    }
    let starts = runs.len();
    let implied_sigma2 = |q: f64, ll: f64| -> f64 {
        log_moments(q, ll.exp()).map(|m| k[0] - cumulants(&m)[2]).unwrap_or(f64::NAN)
    };
    let mut sols: Vec<Solution> = runs
        .into_iter()
        .map(|(cost, index, p, converged)| Solution {
            q: p[0],
            ll: p[1],
            sigma: if with_drift { implied_sigma2(p[0], p[1]).max(0.0).sqrt() } else { 0.0 },
            cost,
            index,
            converged,
        })
        .collect();
    sols.sort_by(by_cost);
    let mut notes = Vec::new();
    let roots: Vec<&Solution> = sols
        .iter()
        .filter(|s| s.cost < ROOT_COST)
        .filter(|s| !with_drift || implied_sigma2(s.q, s.ll) >= -1e-12 * k[0])
        .collect();
    let (chosen, converged, sigma_fixed) = if let Some(r) = roots.first() {
        (Solution { ..**r }, r.converged, false)
    } else if with_drift {
        // No admissible root: hold σ = 0 and fit the three cumulant equations.
        let boundary = solve_from_grid(&k, &[2, 3, 4]);
        let best = boundary
            .into_iter()
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .ok_or_else(|| Error::NonConvergence("moment system with σ = 0: every start failed".into()))?;
        let had_root = sols.iter().any(|s| s.cost < ROOT_COST);
        notes.push(if had_root {
            "implied σ² < 0 at every root; σ held at 0 and the equations solved in least squares".to_string()
        } else {
            "no root of the drift moment system; σ held at 0 and the equations solved in least squares".to_string()
        });
        let converged = best.3;
        (Solution { q: best.2[0], ll: best.2[1], sigma: 0.0, cost: best.0, index: best.1, converged }, converged, true)
    } else {
        let best = &sols[0];
        notes.push(format!("no root of the moment system found; best scaled residual {:.3e}", best.cost.sqrt()));
        (Solution { ..*best }, false, false)
    };
    let m = log_moments(chosen.q, chosen.ll.exp())?;
    let mut lx0 = stats.mean - m[1];
    if lx0 < 0.0 {
        notes.push(format!("implied x0 = {:.4} below 1; clamped to 1", lx0.exp()));
        lx0 = 0.0;
    }
    let params = ModelParams::new(chosen.q, chosen.ll.exp(), lx0.exp(), chosen.sigma)?.with_units(n_c)?;
    let stderr = delta_method_stderr(&stats, &params, with_drift && !sigma_fixed);
    let (residuals, cost, correlation) = goodness(sample, &params)?;
    Ok(FitReport {
        params,
        stderr,
        correlation,
        method: if with_drift { FitMethod::MomentsDrift } else { FitMethod::Moments },
        outsiders: Vec::new(),
        converged,
        residuals,
        cost,
        starts,
        notes,
        agreement: None,
    })
}

/// Raw moments of `ln x − c` under the model for orders `1..=order`.
fn model_centered_moments(theta: &[f64], c: f64, order: usize, fit_sigma: bool) -> Result<Vec<f64>> {
    let m = log_moments(theta[0], theta[1].exp())?;
    let sigma = if fit_sigma { theta[3] } else { 0.0 };
    let w = drift_moments(&m, sigma);
    let d = theta[2] - c;
    Ok((1..=order as u32)
        .map(|n| (0..=n).map(|j| binomial(n, j) * d.powi((n - j) as i32) * w[j as usize]).sum())
        .collect())
}

/// Delta-method standard errors: `Cov(θ) = A Σ Aᵀ` with `A = (JᵀJ)⁻¹Jᵀ`, `J`
/// the derivative of the model moments and `Σ` the covariance of the sample
/// moments (`A = J⁻¹` for the square systems used here).
fn delta_method_stderr(stats: &LogMomentSample, params: &ModelParams, fit_sigma: bool) -> StdErrors {
    let order = if fit_sigma { 4 } else { 3 };
    let c = params.x0().ln();
    let mut theta = vec![params.q(), params.lambda().ln(), c];
    if fit_sigma {
        theta.push(params.sigma());
    }
    let p = theta.len();
    let mut jac = DMatrix::zeros(order, p);
    for j in 0..p {
        let h = 1e-5 * theta[j].abs().max(1.0);
        let (mut tp, mut tm) = (theta.clone(), theta.clone());
        tp[j] += h;
        tm[j] -= h;
        if j == 0 {
            // keep q inside its domain
            tp[0] = tp[0].min(2.0);
        }
        if fit_sigma && j == 3 {
            tm[3] = tm[3].max(0.0);
        }
        let (Ok(a), Ok(b)) = (model_centered_moments(&tp, c, order, fit_sigma), model_centered_moments(&tm, c, order, fit_sigma))
        else {
            return StdErrors::default();
        };
        for i in 0..order {
            jac[(i, j)] = (a[i] - b[i]) / (tp[j] - tm[j]);
        }
    }
    let n = stats.logs.len() as f64;
    let powers: Vec<Vec<f64>> = stats
        .logs
        .iter()
        .map(|l| {
            let s = l - c;
            (1..=order as i32).map(|k| s.powi(k)).collect()
        })
        .collect();
    let means: Vec<f64> = (0..order).map(|k| powers.iter().map(|v| v[k]).sum::<f64>() / n).collect();
    let mut sigma = DMatrix::zeros(order, order);
    for v in &powers {
        for a in 0..order {
            for b in 0..order {
                sigma[(a, b)] += (v[a] - means[a]) * (v[b] - means[b]);
            }
        }
    }
    sigma /= n * (n - 1.0);
    let jt = jac.transpose();
    let Some(inv) = (&jt * &jac).try_inverse() else {
        return StdErrors::default();
    };
    let a = inv * jt;
    let cov = &a * sigma * a.transpose();
    let se = |i: usize| finite(cov[(i, i)].max(0.0).sqrt());
    StdErrors {
        q: se(0),
        log_lambda: se(1),
        log_x0: se(2),
        sigma: if fit_sigma { se(3) } else { None },
        log_n_total: None,
    }
}

//! Least squares of observed log sizes against the model rank curve.

use serde::Serialize;

use super::{finite, goodness, FitMethod, FitReport, StdErrors};
use crate::drift::DriftRankCurve;
use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, numeric_jacobian, std_errors, LmOptions};
use crate::model::{rank_curve_many, ModelParams, RankedSample};
use crate::stats::pearson_r;

/// Default starting grid in `q`.
pub const Q_GRID: [f64; 4] = [0.8, 1.0, 1.3, 1.6];
/// Default starting grid in `ln Λ`.
pub const LOG_LAMBDA_GRID: [f64; 4] = [-12.0, -8.0, -4.0, -1.0];

const Q_BOUNDS: (f64, f64) = (0.05, 2.0);
const LOG_LAMBDA_BOUNDS: (f64, f64) = (-30.0, 8.0);
const SIGMA_BOUNDS: (f64, f64) = (1e-3, 2.0);

/// Options for [`fit_rank_q_with`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankFitOptions {
    /// Fit the drift-convolved rank curve, adding `σ` as a parameter.
    pub with_drift: bool,
    /// Hold `q` at this value instead of fitting it.
    pub fixed_q: Option<f64>,
    pub q_grid: Vec<f64>,
    pub log_lambda_grid: Vec<f64>,
    pub sigma_start: f64,
    /// How many of the best-scoring starts are refined by Levenberg–Marquardt.
    pub refine: usize,
    /// Starting points `(q, ln Λ, σ)` tried in addition to the grid.
    pub extra_starts: Vec<(f64, f64, f64)>,
}

impl Default for RankFitOptions {
    fn default() -> Self {
        Self {
            with_drift: false,
            fixed_q: None,
            q_grid: Q_GRID.to_vec(),
            log_lambda_grid: LOG_LAMBDA_GRID.to_vec(),
            sigma_start: 0.25,
            refine: 4,
            extra_starts: Vec::new(),
        }
    }
}

impl RankFitOptions {
    pub fn with_drift(with_drift: bool) -> Self {
        Self { with_drift, ..Self::default() }
    }
}

/// Minimum size suggested by a straight-line fit of log size against rank
/// over the smallest entries, extrapolated to the last rank.
pub fn tail_extrapolated_x0(sample: &RankedSample) -> f64 {
    let n = sample.len();
    let k = (n / 5).max(5).min(n);
    let rs = &sample.ranks()[n - k..];
    let ls: Vec<f64> = sample.sizes()[n - k..].iter().map(|x| x.ln()).collect();
    let mr = rs.iter().sum::<f64>() / k as f64;
    let ml = ls.iter().sum::<f64>() / k as f64;
    let sxy: f64 = rs.iter().zip(&ls).map(|(r, l)| (r - mr) * (l - ml)).sum();
    let sxx: f64 = rs.iter().map(|r| (r - mr) * (r - mr)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (ml + slope * (n as f64 - mr)).exp().max(1.0)
}

/// Rank-curve fit with `q = 1` and no drift. The free parameter is `x₀`
/// (and `N` when `fit_n`), with `Λ` fixed by the equation of state.
pub fn fit_rank_q1(sample: &RankedSample, n_total: f64, fit_n: bool) -> Result<FitReport> {
    let n_c = sample.len();
    if n_c < 10 {
        return Err(Error::InvalidInput(format!("rank fit with q = 1 needs ≥ 10 entries, got {n_c}")));
    }
    if !(n_total > n_c as f64) {
        return Err(Error::Infeasible(format!("N = {n_total} must exceed n_c = {n_c}")));
    }
    let obs: Vec<f64> = sample.sizes().iter().map(|x| x.ln()).collect();
    let ranks = sample.ranks();
    let residuals = |theta: &[f64]| -> Result<Vec<f64>> {
        let x0 = theta[0].exp();
        let n = if fit_n { theta[1].exp() } else { n_total };
        let p = ModelParams::from_totals(n, n_c, x0, 1.0, 0.0)?;
        let model = rank_curve_many(&p, ranks)?;
        Ok(obs.iter().zip(&model).map(|(o, m)| o - m.ln()).collect())
    };
    let ln_n = n_total.ln();
    let x0_max = n_total / n_c as f64;
    let guess = tail_extrapolated_x0(sample).min(0.5 * x0_max).max(1.0).ln();
    let mut lower = vec![0.0];
    let mut upper = vec![(x0_max * (1.0 - 1e-9)).ln()];
    if fit_n {
        lower.push((n_c as f64).ln());
        upper.push(f64::INFINITY);
        // With N free, x0 is bounded by N/n_c only through infeasible evaluations.
        upper[0] = f64::INFINITY;
    }
    let opts = LmOptions { lower: Some(lower), upper: Some(upper), ..LmOptions::default() };
    let offsets = [0.0, -1.0, 1.0];
    let mut best: Option<(usize, crate::lsq::LmOutcome)> = None;
    for (i, d) in offsets.iter().enumerate() {
        let mut start = vec![(guess + d).clamp(0.0, (0.9 * x0_max).ln().max(0.0))];
        if fit_n {
            start.push(ln_n);
        }
        if let Ok(out) = levenberg_marquardt(residuals, &start, &opts) {
            if best.as_ref().is_none_or(|(_, b)| out.cost < b.cost) {
                best = Some((i, out));
            }
        }
    }
    let Some((_, out)) = best else {
        return Err(Error::NonConvergence("rank fit with q = 1 failed from every start".into()));
    };
    let x0 = out.params[0].exp();
    let n_fit = if fit_n { out.params[1].exp() } else { n_total };
    let params = ModelParams::from_totals(n_fit, n_c, x0, 1.0, 0.0)?;
    let se = out.std_errors();
    let model: Vec<f64> = obs.iter().zip(&out.residuals).map(|(o, r)| o - r).collect();
    Ok(FitReport {
        params,
        stderr: StdErrors {
            log_x0: finite(se[0]),
            log_n_total: if fit_n { finite(se[1]) } else { None },
            ..StdErrors::default()
        },
        correlation: pearson_r(&obs, &model).unwrap_or(f64::NAN),
        method: FitMethod::RankLsQ1,
        outsiders: Vec::new(),
        converged: out.converged,
        residuals: out.residuals,
        cost: out.cost,
        starts: offsets.len(),
        notes: Vec::new(),
        agreement: None,
    })
}

/// Rank-curve fit over `(q, Λ, x₀)`, and `σ` when `with_drift`, with the
/// default multistart grid.
pub fn fit_rank_q(sample: &RankedSample, with_drift: bool) -> Result<FitReport> {
    fit_rank_q_with(sample, &RankFitOptions::with_drift(with_drift))
}

struct RankProblem<'a> {
    obs: Vec<f64>,
    ranks: &'a [f64],
    n_c: usize,
    opts: &'a RankFitOptions,
}

impl RankProblem<'_> {
    /// Splits a shape vector into `(q, ln Λ, σ)`.
    fn unpack(&self, theta: &[f64]) -> (f64, f64, f64) {
        let mut it = theta.iter().copied();
        let q = match self.opts.fixed_q {
            Some(q) => q,
            None => it.next().unwrap_or(f64::NAN),
        };
        let ll = it.next().unwrap_or(f64::NAN);
        let sigma = if self.opts.with_drift { it.next().unwrap_or(f64::NAN) } else { 0.0 };
        (q, ll, sigma)
    }

    fn pack(&self, q: f64, ll: f64, sigma: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(3);
        if self.opts.fixed_q.is_none() {
            v.push(q);
        }
        v.push(ll);
        if self.opts.with_drift {
            v.push(sigma);
        }
        v
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = self.pack(Q_BOUNDS.0, LOG_LAMBDA_BOUNDS.0, SIGMA_BOUNDS.0);
        let hi = self.pack(Q_BOUNDS.1, LOG_LAMBDA_BOUNDS.1, SIGMA_BOUNDS.1);
        (lo, hi)
    }

    /// `ln(x_model(r_i)/x₀)`.
    fn shape(&self, q: f64, ll: f64, sigma: f64) -> Result<Vec<f64>> {
        let p = ModelParams::new(q, ll.exp(), 1.0, sigma)?;
        let sizes = if sigma > 0.0 {
            DriftRankCurve::new(&p)?.sizes_at(self.ranks, self.n_c as f64)?
        } else {
            rank_curve_many(&p.with_units(self.n_c)?, self.ranks)?
        };
        Ok(sizes.into_iter().map(f64::ln).collect())
    }

    /// Residuals with `ln x₀` at its least-squares value for the given shape.
    fn profiled(&self, theta: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (q, ll, sigma) = self.unpack(theta);
        let g = self.shape(q, ll, sigma)?;
        let d: Vec<f64> = self.obs.iter().zip(&g).map(|(o, g)| o - g).collect();
        let lx0 = (d.iter().sum::<f64>() / d.len() as f64).max(0.0);
        Ok((d.into_iter().map(|v| v - lx0).collect(), lx0))
    }
}

/// Rank-curve fit with explicit options.
pub fn fit_rank_q_with(sample: &RankedSample, opts: &RankFitOptions) -> Result<FitReport> {
    let n_c = sample.len();
    if n_c < 20 {
        return Err(Error::InvalidInput(format!("rank fit needs ≥ 20 entries, got {n_c}")));
    }
    let prob = RankProblem { obs: sample.sizes().iter().map(|x| x.ln()).collect(), ranks: sample.ranks(), n_c, opts };
    let mut starts: Vec<Vec<f64>> = opts.extra_starts.iter().map(|&(q, ll, s)| prob.pack(q, ll, s)).collect();
    let q_grid: &[f64] = if opts.fixed_q.is_some() { &[f64::NAN] } else { &opts.q_grid };
    for &q in q_grid {
        for &ll in &opts.log_lambda_grid {
            starts.push(prob.pack(q, ll, opts.sigma_start));
        }
    }
    if starts.is_empty() {
        return Err(Error::InvalidInput("no starting points".into()));
    }
    let (lower, upper) = prob.bounds();
    for s in &mut starts {
        for ((v, lo), hi) in s.iter_mut().zip(&lower).zip(&upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
    // Screen every start by its initial cost, then refine the best few.
    let mut scored: Vec<(f64, usize)> = starts
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let (r, _) = prob.profiled(s).ok()?;
            let c: f64 = r.iter().map(|v| v * v).sum();
            c.is_finite().then_some((c, i))
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let lm = LmOptions { lower: Some(lower.clone()), upper: Some(upper.clone()), ..LmOptions::default() };
    let f = |t: &[f64]| prob.profiled(t).map(|(r, _)| r);
    let mut best: Option<(f64, usize, Vec<f64>, bool)> = None;
    for &(_, i) in scored.iter().take(opts.refine.max(1)) {
        let Ok(out) = levenberg_marquardt(f, &starts[i], &lm) else { continue };
        let better = match &best {
            None => true,
            Some((c, j, _, _)) => out.cost < *c || (out.cost == *c && i < *j),
        };
        if better {
            best = Some((out.cost, i, out.params, out.converged));
        }
    }
    let Some((_, _, theta, converged)) = best else {
        return Err(Error::NonConvergence("rank fit failed from every start".into()));
    };
    let (q, ll, sigma) = prob.unpack(&theta);
    let (_, lx0) = prob.profiled(&theta)?;
    let params = ModelParams::new(q, ll.exp(), lx0.exp(), sigma)?.with_units(n_c)?;

    // Curvature in the full parameterisation (q, ln Λ, ln x₀, σ).
    let mut full = theta.clone();
    let ix0 = if opts.fixed_q.is_some() { 1 } else { 2 };
    full.insert(ix0, lx0);
    let mut full_lo = lower;
    full_lo.insert(ix0, 0.0);
    let mut full_hi = upper;
    full_hi.insert(ix0, f64::INFINITY);
    let full_f = |t: &[f64]| -> Result<Vec<f64>> {
        let mut shape = t.to_vec();
        let lx0 = shape.remove(ix0);
        let (q, ll, sigma) = prob.unpack(&shape);
        let g = prob.shape(q, ll, sigma)?;
        Ok(prob.obs.iter().zip(&g).map(|(o, g)| o - lx0 - g).collect())
    };
    let r0 = full_f(&full)?;
    let cost: f64 = r0.iter().map(|v| v * v).sum();
    let jac_opts = LmOptions { lower: Some(full_lo), upper: Some(full_hi), ..LmOptions::default() };
    let se = numeric_jacobian(&full_f, &full, &r0, &jac_opts).map(|j| std_errors(&j, cost)).unwrap_or_else(|_| vec![f64::NAN; full.len()]);
    let mut k = 0;
    let mut next = || {
        let v = se[k];
        k += 1;
        finite(v)
    };
    let se_q = if opts.fixed_q.is_none() { next() } else { None };
    let se_ll = next();
    let se_x0 = next();
    let se_sigma = if opts.with_drift { next() } else { None };

    let (residuals, cost, correlation) = goodness(sample, &params)?;
    Ok(FitReport {
        params,
        stderr: StdErrors { q: se_q, log_lambda: se_ll, log_x0: se_x0, sigma: se_sigma, log_n_total: None },
        correlation,
        method: FitMethod::RankLsQ,
        outsiders: Vec::new(),
        converged,
        residuals,
        cost,
        starts: starts.len(),
        notes: Vec::new(),
        agreement: None,
    })
}

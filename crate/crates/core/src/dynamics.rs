//! Growth dynamics from panel data.
//!
//! Each pair of consecutive observations of a unit gives a point
//! `u = (ln x(t₁) + ln x(t₂))/2`, `u̇ = ln(x(t₂)/x(t₁))/(t₂ − t₁)`. Points are
//! binned in `u`, and the bin means are fitted to
//! `⟨u̇⟩(u) = k₁ + k_q e^{(q−1)u}`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions};
use crate::stats::{mean, pearson_r, std_dev};

/// One observation of a unit's population.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PanelRecord {
    pub unit_id: String,
    pub year: i32,
    pub population: u64,
}

/// Growth point between two consecutive observations of a unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsPoint {
    pub u: f64,
    /// Relative growth rate per year.
    pub udot: f64,
    pub unit_id: String,
    pub period: (i32, i32),
}

/// Growth points from a panel, one per unit and consecutive pair of observed
/// years, ordered by unit and year. Units observed once are skipped.
pub fn panel_to_points(panel: &[PanelRecord]) -> Result<Vec<DynamicsPoint>> {
    if panel.is_empty() {
        return Err(Error::InvalidInput("empty panel".into()));
    }
    let mut units: BTreeMap<&str, BTreeMap<i32, (u64, usize)>> = BTreeMap::new();
    let mut problems = Vec::new();
    for (i, rec) in panel.iter().enumerate() {
        if rec.population < 1 {
            problems.push(format!("record {i} ({}, {}): population must be ≥ 1", rec.unit_id, rec.year));
            continue;
        }
        let years = units.entry(rec.unit_id.as_str()).or_default();
        if let Some((_, j)) = years.insert(rec.year, (rec.population, i)) {
            problems.push(format!("record {i} duplicates ({}, {}) from record {j}", rec.unit_id, rec.year));
        }
    }
    if !problems.is_empty() {
        return Err(Error::InvalidInput(problems.join("; ")));
    }
    let mut points = Vec::new();
    for (id, years) in &units {
        let obs: Vec<(i32, f64)> = years.iter().map(|(y, (p, _))| (*y, *p as f64)).collect();
        for w in obs.windows(2) {
            let ((t1, x1), (t2, x2)) = (w[0], w[1]);
            points.push(DynamicsPoint {
                u: 0.5 * (x1.ln() + x2.ln()),
                udot: (x2 / x1).ln() / (t2 - t1) as f64,
                unit_id: id.to_string(),
                period: (t1, t2),
            });
        }
    }
    if points.is_empty() {
        return Err(Error::InvalidInput("no unit is observed in two or more years".into()));
    }
    Ok(points)
}

/// Statistics of `u̇` in one bin of `u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsBin {
    pub center: f64,
    pub mean_udot: f64,
    /// Sample standard deviation of `u̇` (0 for a single point).
    pub std_udot: f64,
    pub count: usize,
}

/// Binned growth points; only bins that passed the count filter are kept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedDynamics {
    pub delta_u: f64,
    /// Left edge of the first bin (the smallest `u`).
    pub anchor: f64,
    pub min_frac: f64,
    pub bins: Vec<DynamicsBin>,
    /// Number of bins dropped by the filter.
    pub removed: usize,
}

pub const DEFAULT_DELTA_U: f64 = 0.25;
pub const DEFAULT_MIN_FRAC: f64 = 0.15;

/// Bins points on a grid of width `delta_u` anchored at the smallest `u`
/// (intervals closed on the left) and drops bins holding fewer than
/// `min_frac` times the largest bin count.
pub fn bin_points(points: &[DynamicsPoint], delta_u: f64, min_frac: f64) -> Result<BinnedDynamics> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no growth points to bin".into()));
    }
    if !(delta_u > 0.0 && delta_u.is_finite()) {
        return Err(Error::InvalidInput(format!("bin width must be > 0, got {delta_u}")));
    }
    if !(min_frac >= 0.0) {
        return Err(Error::InvalidInput(format!("minimum bin fraction must be ≥ 0, got {min_frac}")));
    }
    if let Some(p) = points.iter().find(|p| !(p.u.is_finite() && p.udot.is_finite())) {
        return Err(Error::InvalidInput(format!("non-finite growth point for unit {}", p.unit_id)));
    }
    let anchor = points.iter().map(|p| p.u).fold(f64::INFINITY, f64::min);
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for p in points {
        let k = ((p.u - anchor) / delta_u).floor() as usize;
        groups.entry(k).or_default().push(p.udot);
    }
    let max_count = groups.values().map(Vec::len).max().unwrap_or(0);
    let threshold = min_frac * max_count as f64;
    let total = groups.len();
    let bins: Vec<DynamicsBin> = groups
        .into_iter()
        .filter(|(_, v)| v.len() as f64 >= threshold)
        .map(|(k, v)| DynamicsBin {
            center: anchor + (k as f64 + 0.5) * delta_u,
            mean_udot: mean(&v),
            std_udot: std_dev(&v),
            count: v.len(),
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::Empty(format!("all {total} bins were removed by the count filter")));
    }
    let removed = total - bins.len();
    Ok(BinnedDynamics { delta_u, anchor, min_frac, bins, removed })
}

/// Options for [`fit_dynamics_with`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsFitOptions {
    /// Weight bins by `count/std²` instead of uniformly.
    pub weighted: bool,
    /// Scan range and step of the exponent `q`.
    pub q_min: f64,
    pub q_max: f64,
    pub q_step: f64,
}

impl Default for DynamicsFitOptions {
    fn default() -> Self {
        Self { weighted: false, q_min: -1.0, q_max: 3.0, q_step: 0.02 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DynamicsStdErrors {
    pub k1: f64,
    pub kq: f64,
    pub q: f64,
    /// Standard error of the q-term amplitude at `u_ref`.
    pub amplitude: f64,
}

/// Fit of `⟨u̇⟩(u) = k₁ + k_q e^{(q−1)u}` to binned dynamics.
///
/// `amplitude = k_q e^{(q−1)u_ref}` is the q-term at the mean bin position.
/// The q-term counts as resolved when `|amplitude|` exceeds twice its standard
/// error; otherwise `well_defined` is false, `q` is reported as 1 with
/// `k₁` the mean rate and `k_q = 0`, and the unconstrained estimates are kept
/// in the `raw_*` fields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsFit {
    pub k1: f64,
    pub kq: f64,
    pub q: f64,
    pub well_defined: bool,
    /// Correlation of bin means with the unconstrained fitted curve.
    pub correlation: f64,
    pub stderr: DynamicsStdErrors,
    pub u_ref: f64,
    pub amplitude: f64,
    pub raw_k1: f64,
    pub raw_kq: f64,
    pub raw_q: f64,
    pub bins_used: usize,
    pub weighted: bool,
    /// Weighted residual sum of squares.
    pub rss: f64,
}

/// [`fit_dynamics_with`] with default options (unweighted).
pub fn fit_dynamics(binned: &BinnedDynamics) -> Result<DynamicsFit> {
    fit_dynamics_with(binned, &DynamicsFitOptions::default())
}

struct BinData {
    u: Vec<f64>,
    y: Vec<f64>,
    sw: Vec<f64>,
    u_ref: f64,
}

impl BinData {
    /// Weighted linear least squares of `y` on `[1, e^{(q−1)(u−u_ref)}]`;
    /// returns `(k₁, amplitude, rss)`.
    fn profile(&self, q: f64) -> (f64, f64, f64) {
        let m = self.u.len();
        let a = DMatrix::from_fn(m, 2, |i, j| self.sw[i] * if j == 0 { 1.0 } else { ((q - 1.0) * (self.u[i] - self.u_ref)).exp() });
        let b = DVector::from_iterator(m, self.y.iter().zip(&self.sw).map(|(y, w)| y * w));
        let sol = a.clone().svd(true, true).solve(&b, 1e-12).unwrap_or_else(|_| DVector::zeros(2));
        let rss = (a * &sol - b).norm_squared();
        (sol[0], sol[1], rss)
    }

    fn residuals(&self, t: &[f64]) -> Vec<f64> {
        let (k1, amp, q) = (t[0], t[1], t[2]);
        (0..self.u.len())
            .map(|i| self.sw[i] * (self.y[i] - k1 - amp * ((q - 1.0) * (self.u[i] - self.u_ref)).exp()))
            .collect()
    }
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Fits the binned mean growth rate by variable projection: `q` is scanned
/// on a grid and refined by golden-section search with `(k₁, k_q)` solved
/// linearly, then all three are polished jointly for the covariance.
pub fn fit_dynamics_with(binned: &BinnedDynamics, opts: &DynamicsFitOptions) -> Result<DynamicsFit> {
    let bins = &binned.bins;
    if bins.len() < 4 {
        return Err(Error::InvalidInput(format!("dynamics fit needs ≥ 4 bins, got {}", bins.len())));
    }
    if !(opts.q_step > 0.0 && opts.q_max > opts.q_min) {
        return Err(Error::InvalidInput("invalid q scan range".into()));
    }
    let u: Vec<f64> = bins.iter().map(|b| b.center).collect();
    let y: Vec<f64> = bins.iter().map(|b| b.mean_udot).collect();
    let sw: Vec<f64> = if opts.weighted {
        let floor = bins.iter().map(|b| b.std_udot).filter(|s| *s > 0.0).fold(f64::INFINITY, f64::min);
        if floor.is_finite() {
            bins.iter().map(|b| (b.count as f64).sqrt() / b.std_udot.max(floor)).collect()
        } else {
            vec![1.0; bins.len()]
        }
    } else {
        vec![1.0; bins.len()]
    };
    let wsum: f64 = sw.iter().map(|w| w * w).sum();
    let u_ref = u.iter().zip(&sw).map(|(u, w)| u * w * w).sum::<f64>() / wsum;
    let data = BinData { u, y, sw, u_ref };

    let n_grid = ((opts.q_max - opts.q_min) / opts.q_step).round() as usize;
    let mut best = (f64::INFINITY, opts.q_min);
    for i in 0..=n_grid {
        let q = opts.q_min + i as f64 * opts.q_step;
        let rss = data.profile(q).2;
        if rss < best.0 {
            best = (rss, q);
        }
    }
    let q_scan = golden_min(
        |q| data.profile(q).2,
        (best.1 - opts.q_step).max(opts.q_min),
        (best.1 + opts.q_step).min(opts.q_max),
        1e-10,
    );
    let (k1, amp, _) = data.profile(q_scan);
    let lm = LmOptions {
        lower: Some(vec![f64::NEG_INFINITY, f64::NEG_INFINITY, opts.q_min]),
        upper: Some(vec![f64::INFINITY, f64::INFINITY, opts.q_max]),
        ftol: 1e-15,
        xtol: 1e-14,
        gtol: 0.0,
        ..LmOptions::default()
    };
    let out = levenberg_marquardt(|t| Ok(data.residuals(t)), &[k1, amp, q_scan], &lm)?;
    let (k1, amp, q) = (out.params[0], out.params[1], out.params[2]);
    let cov = out.covariance();
    let var = |i: usize, j: usize| cov.as_ref().map_or(f64::NAN, |c| c[(i, j)]);
    let se_amp = var(1, 1).max(0.0).sqrt();
    // k_q = amplitude · e^{−(q−1)u_ref}; delta method for its error.
    let scale = (-(q - 1.0) * u_ref).exp();
    let kq = amp * scale;
    let (d_amp, d_q) = (scale, -u_ref * kq);
    let var_kq = d_amp * d_amp * var(1, 1) + d_q * d_q * var(2, 2) + 2.0 * d_amp * d_q * var(1, 2);
    let stderr = DynamicsStdErrors {
        k1: var(0, 0).max(0.0).sqrt(),
        kq: var_kq.max(0.0).sqrt(),
        q: var(2, 2).max(0.0).sqrt(),
        amplitude: se_amp,
    };
    let fitted: Vec<f64> = data.u.iter().map(|ui| k1 + amp * ((q - 1.0) * (ui - u_ref)).exp()).collect();
    let correlation = pearson_r(&data.y, &fitted).unwrap_or(f64::NAN);
    let well_defined = se_amp.is_finite() && amp.abs() > 2.0 * se_amp;
    let (rk1, rkq, rq) = (k1, kq, q);
    let (k1, kq, q) = if well_defined {
        (k1, kq, q)
    } else {
        let w2: Vec<f64> = data.sw.iter().map(|w| w * w).collect();
        let m = data.y.iter().zip(&w2).map(|(y, w)| y * w).sum::<f64>() / wsum;
        (m, 0.0, 1.0)
    };
    Ok(DynamicsFit {
        k1,
        kq,
        q,
        well_defined,
        correlation,
        stderr,
        u_ref,
        amplitude: amp,
        raw_k1: rk1,
        raw_kq: rkq,
        raw_q: rq,
        bins_used: bins.len(),
        weighted: opts.weighted,
        rss: out.cost,
    })
}

/// Straight-line diagnostic `⟨u̇⟩ = a + b·u` over the bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearDynamicsFit {
    pub intercept: f64,
    pub slope: f64,
    pub correlation: f64,
}

pub fn fit_linear_dynamics(binned: &BinnedDynamics) -> Result<LinearDynamicsFit> {
    let u: Vec<f64> = binned.bins.iter().map(|b| b.center).collect();
    let y: Vec<f64> = binned.bins.iter().map(|b| b.mean_udot).collect();
    if u.len() < 2 {
        return Err(Error::InvalidInput("linear fit needs ≥ 2 bins".into()));
    }
    let (mu, my) = (mean(&u), mean(&y));
    let sxy: f64 = u.iter().zip(&y).map(|(a, b)| (a - mu) * (b - my)).sum();
    let sxx: f64 = u.iter().map(|a| (a - mu) * (a - mu)).sum();
    let slope = sxy / sxx;
    Ok(LinearDynamicsFit { intercept: my - slope * mu, slope, correlation: pearson_r(&u, &y).unwrap_or(f64::NAN) })
}

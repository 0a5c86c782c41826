//! Drift-convolved equilibrium: `ln x = ln x₀ + U + σZ` with `U = ln(x'/x₀)`
//! distributed as the no-drift model and `Z` standard normal.
//!
//! `U` has density `f(v) = e^{(1−q)v − Λ(e^v − 1)} / S(1−q, Λ)` on `v ≥ 0`,
//! where `S(a, z) = e^z z^{−a} Γ(a, z)`.

use statrs::function::erf::erfc;

use crate::error::{domain, Result};
use crate::model::ModelParams;
use crate::quadrature::{integrate_panels, QuadOptions};
use crate::specfun::{ln_upper_gamma, log_size_cutoff, upper_gamma_scaled};

/// Half-width of the normal kernel window, in units of `σ`.
const KERNEL_WIDTH: f64 = 10.0;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn norm_sf(t: f64) -> f64 {
    0.5 * erfc(t * std::f64::consts::FRAC_1_SQRT_2)
}

#[derive(Debug, Clone, Copy)]
struct LogSizeLaw {
    q: f64,
    lambda: f64,
    sigma: f64,
    ln_norm: f64,
    ln_gamma_lambda: f64,
    vmax: f64,
    knee: f64,
}

impl LogSizeLaw {
    fn new(params: &ModelParams) -> Result<Self> {
        let (q, lambda) = (params.q(), params.lambda());
        let a = 1.0 - q;
        let vmax = log_size_cutoff(lambda);
        Ok(Self {
            q,
            lambda,
            sigma: params.sigma(),
            ln_norm: upper_gamma_scaled(a, lambda)?.ln(),
            ln_gamma_lambda: ln_upper_gamma(a, lambda)?,
            vmax,
            knee: (1.0 / lambda).ln_1p().min(vmax),
        })
    }

    fn f(&self, v: f64) -> f64 {
        ((1.0 - self.q) * v - self.lambda * v.exp_m1() - self.ln_norm).exp()
    }

    /// `P(U > w)` for `w ≥ 0`.
    fn sf_u(&self, w: f64) -> Result<f64> {
        if w <= 0.0 {
            return Ok(1.0);
        }
        let z = self.lambda * w.exp();
        if !z.is_finite() || w > self.vmax {
            return Ok(0.0);
        }
        Ok((ln_upper_gamma(1.0 - self.q, z)? - self.ln_gamma_lambda).exp().min(1.0))
    }

    fn breaks(&self, lo: f64, hi: f64, centre: f64) -> Vec<f64> {
        let mut b = vec![lo, hi];
        for p in [centre, self.knee] {
            if p > lo && p < hi {
                b.push(p);
            }
        }
        b.sort_by(f64::total_cmp);
        b
    }

    /// `(P(U + σZ > y), density of U + σZ at y)`.
    fn sf_and_pdf(&self, y: f64) -> Result<(f64, f64)> {
        let s = self.sigma;
        let lo = (y - KERNEL_WIDTH * s).max(0.0);
        let top = (y + KERNEL_WIDTH * s).max(0.0);
        let tail = self.sf_u(top)?;
        let hi = top.min(self.vmax);
        if hi <= lo {
            return Ok((tail, 0.0));
        }
        let integrand = |v: f64| {
            let w = self.f(v);
            let t = (y - v) / s;
            [w * norm_sf(t), w * (-0.5 * t * t).exp() * FRAC_1_SQRT_2PI / s]
        };
        let opts = QuadOptions { abs_tol: 1e-300, rel_tol: 1e-11, max_intervals: 400 };
        let [sf, pdf] = integrate_panels(integrand, &self.breaks(lo, hi, y), opts)?;
        Ok(((sf + tail).min(1.0), pdf))
    }
}

fn require_drift(params: &ModelParams) -> Result<()> {
    if !(params.sigma() > 0.0) {
        return domain("the drift-convolved model needs σ > 0");
    }
    Ok(())
}

/// Density of sizes under drift, `(1/x) ∫ f(v) φ((y − v)/σ)/σ dv` with `y = ln(x/x₀)`.
pub fn density(params: &ModelParams, x: f64) -> Result<f64> {
    require_drift(params)?;
    if !(x > 0.0 && x.is_finite()) {
        return domain(format!("x must be finite and > 0, got {x}"));
    }
    let law = LogSizeLaw::new(params)?;
    let (_, pdf) = law.sf_and_pdf((x / params.x0()).ln())?;
    Ok(pdf / x)
}

/// Survival function `P(X > x)` under drift.
pub fn survival(params: &ModelParams, x: f64) -> Result<f64> {
    require_drift(params)?;
    if !(x > 0.0) {
        return domain(format!("x must be > 0, got {x}"));
    }
    let law = LogSizeLaw::new(params)?;
    Ok(law.sf_and_pdf((x / params.x0()).ln())?.0)
}

/// `P(X ≤ x)` under drift.
pub fn cumulative(params: &ModelParams, x: f64) -> Result<f64> {
    Ok(1.0 - survival(params, x)?)
}

const CORE_POINTS: usize = 49;
const TAIL_POINTS: usize = 224;

/// Tabulated drift rank curve: `ln P(X > x)` against `y = ln(x/x₀)` on a fixed
/// grid with cubic Hermite interpolation, inverted per rank.
#[derive(Debug, Clone)]
pub struct DriftRankCurve {
    x0: f64,
    ys: Vec<f64>,
    ln_sf: Vec<f64>,
    slope: Vec<f64>,
}

impl DriftRankCurve {
    pub fn new(params: &ModelParams) -> Result<Self> {
        require_drift(params)?;
        let law = LogSizeLaw::new(params)?;
        let s = params.sigma();
        // Fine core across the smoothed support edge, coarser grid over the body and tail.
        let core_lo = -6.0 * s;
        let core_hi = 6.0 * s;
        let y_hi = (40.0 / params.lambda()).ln_1p() + 6.0 * s;
        let mut ys: Vec<f64> = (0..CORE_POINTS)
            .map(|i| core_lo + (core_hi - core_lo) * i as f64 / (CORE_POINTS - 1) as f64)
            .collect();
        if y_hi > core_hi {
            ys.extend((1..=TAIL_POINTS).map(|i| core_hi + (y_hi - core_hi) * i as f64 / TAIL_POINTS as f64));
        }
        let mut ln_sf = Vec::with_capacity(ys.len());
        let mut slope = Vec::with_capacity(ys.len());
        for &y in &ys {
            let (sf, pdf) = law.sf_and_pdf(y)?;
            if !(sf > 0.0) {
                break;
            }
            ln_sf.push(sf.ln());
            slope.push(-pdf / sf);
        }
        ys.truncate(ln_sf.len());
        Ok(Self { x0: params.x0(), ys, ln_sf, slope })
    }

    /// Size whose survival probability equals `p`.
    pub fn size_at_survival(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return domain(format!("survival probability must lie in (0, 1), got {p}"));
        }
        let t = p.ln();
        let n = self.ys.len();
        // ln_sf is non-increasing; find k with ln_sf[k] ≥ t ≥ ln_sf[k+1].
        if t >= self.ln_sf[0] {
            return Ok(self.x0 * self.ys[0].exp());
        }
        if t <= self.ln_sf[n - 1] {
            return domain(format!("survival probability {p:e} below the tabulated range"));
        }
        let k = self.ln_sf.partition_point(|&v| v >= t) - 1;
        let y = self.invert_segment(k, t);
        Ok(self.x0 * y.exp())
    }

    /// Sizes at middle-point ranks `r` of a system with `n_c` units.
    pub fn sizes_at(&self, ranks: &[f64], n_c: f64) -> Result<Vec<f64>> {
        ranks.iter().map(|r| self.size_at_survival(r / n_c)).collect()
    }

    fn invert_segment(&self, k: usize, t: f64) -> f64 {
        let (y0, y1) = (self.ys[k], self.ys[k + 1]);
        let h = y1 - y0;
        let (f0, f1) = (self.ln_sf[k], self.ln_sf[k + 1]);
        let (d0, d1) = (self.slope[k] * h, self.slope[k + 1] * h);
        let eval = |s: f64| {
            let s2 = s * s;
            let s3 = s2 * s;
            let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
            let h10 = s3 - 2.0 * s2 + s;
            let h01 = -2.0 * s3 + 3.0 * s2;
            let h11 = s3 - s2;
            let v = h00 * f0 + h10 * d0 + h01 * f1 + h11 * d1;
            let dv = (6.0 * s2 - 6.0 * s) * f0 + (3.0 * s2 - 4.0 * s + 1.0) * d0 + (-6.0 * s2 + 6.0 * s) * f1
                + (3.0 * s2 - 2.0 * s) * d1;
            (v - t, dv)
        };
        // Safeguarded Newton on s ∈ [0, 1]; g(0) ≥ 0 ≥ g(1).
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut s = if f0 != f1 { (f0 - t) / (f0 - f1) } else { 0.5 };
        for _ in 0..60 {
            let (g, dg) = eval(s);
            if g > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let mut next = if dg < 0.0 { s - g / dg } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() < 1e-15 {
                s = next;
                break;
            }
            s = next;
        }
        y0 + s * h
    }
}

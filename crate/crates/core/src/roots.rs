//! Bracketed scalar root finding.

use crate::error::{Error, Result};

/// Brent's method on a sign-changing bracket `[a, b]`.
pub fn brent<F>(mut f: F, mut a: f64, mut b: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NonConvergence(format!(
            "root not bracketed: f({a:e}) = {fa:e}, f({b:e}) = {fb:e}"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * m * s, 1.0 - s)
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0)),
                    (qa - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Err(Error::NonConvergence(format!(
        "Brent iteration limit ({max_iter}) reached near {b:e}"
    )))
}

/// Newton's method kept inside a shrinking bracket; falls back to bisection
/// whenever the Newton step leaves the bracket or fails to shrink it.
///
/// `f` returns `(value, derivative)`; the function must change sign on `[lo, hi]`.
/// Iteration stops once a step (or the bracket) is below `xtol * max(1, |x|)`.
pub fn newton_bracketed<F>(mut f: F, lo: f64, hi: f64, x0: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    let (flo, _) = f(lo)?;
    let (fhi, _) = f(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NonConvergence(format!(
            "root not bracketed on [{lo:e}, {hi:e}]"
        )));
    }
    // Orient so that f(lo) < 0 < f(hi).
    let (mut lo, mut hi) = if flo < 0.0 { (lo, hi) } else { (hi, lo) };
    let mut x = if x0 > lo.min(hi) && x0 < lo.max(hi) { x0 } else { 0.5 * (lo + hi) };
    let mut step_old = (hi - lo).abs();
    let mut step = step_old;
    let (mut fx, mut dfx) = f(x)?;
    for _ in 0..max_iter {
        let newton_out = ((x - hi) * dfx - fx) * ((x - lo) * dfx - fx) > 0.0;
        let too_slow = (2.0 * fx).abs() > (step_old * dfx).abs();
        step_old = step;
        if newton_out || too_slow || dfx == 0.0 {
            step = 0.5 * (hi - lo);
            x = lo + step;
        } else {
            step = fx / dfx;
            x -= step;
        }
        let scale = x.abs().max(1.0);
        if step.abs() <= xtol * scale || (hi - lo).abs() <= xtol * scale {
            return Ok(x);
        }
        let (fnew, dfnew) = f(x)?;
        fx = fnew;
        dfx = dfnew;
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
    }
    Err(Error::NonConvergence(format!(
        "bracketed Newton iteration limit ({max_iter}) reached near {x:e}"
    )))
}

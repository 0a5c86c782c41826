//! Reference implementations used as test oracles. They share no code with
//! the library: quadrature is double-exponential rather than adaptive
//! Gauss–Kronrod, and `erfc` comes from `libm`.
#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, PI};

/// `∫_0^∞ f(s) ds` by the exp-sinh rule, halving the step until two
/// successive levels agree to `rel_tol`.
pub fn exp_sinh<F: Fn(f64) -> f64>(f: F, rel_tol: f64) -> f64 {
    let term = |t: f64| {
        let s = (FRAC_PI_2 * t.sinh()).exp();
        let w = FRAC_PI_2 * t.cosh() * s;
        if s.is_finite() && w.is_finite() && s > 0.0 {
            let v = f(s) * w;
            if v.is_finite() {
                v
            } else {
                0.0
            }
        } else {
            0.0
        }
    };
    let t_max = 5.0;
    let mut h = 0.5;
    let mut sum: f64 = (-((t_max / h) as i64)..=(t_max / h) as i64).map(|k| term(k as f64 * h)).sum();
    let mut prev = sum * h;
    for _ in 0..10 {
        h *= 0.5;
        // Only odd multiples of the new step are new nodes.
        let n = (t_max / h) as i64;
        sum += (-n..=n).filter(|k| k % 2 != 0).map(|k| term(k as f64 * h)).sum::<f64>();
        let cur = sum * h;
        if (cur - prev).abs() <= rel_tol * cur.abs() {
            return cur;
        }
        prev = cur;
    }
    prev
}

/// `∫_a^b f(x) dx` by the tanh-sinh rule.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let (c, d) = (0.5 * (a + b), 0.5 * (b - a));
    let term = |t: f64| {
        let u = FRAC_PI_2 * t.sinh();
        let x = u.tanh();
        let w = FRAC_PI_2 * t.cosh() / u.cosh().powi(2);
        // Distance to the nearer end computed without cancellation.
        let gap = 1.0 / (u.abs().exp() * u.cosh());
        if gap == 0.0 {
            return 0.0;
        }
        let xx = if x < 0.0 { a + d * gap } else { b - d * gap };
        let xx = if t == 0.0 { c } else { xx };
        let v = f(xx) * w * d;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let t_max = 3.5;
    let mut h = 0.5;
    let mut sum: f64 = (-((t_max / h) as i64)..=(t_max / h) as i64).map(|k| term(k as f64 * h)).sum();
    let mut prev = sum * h;
    for _ in 0..10 {
        h *= 0.5;
        let n = (t_max / h) as i64;
        sum += (-n..=n).filter(|k| k % 2 != 0).map(|k| term(k as f64 * h)).sum::<f64>();
        let cur = sum * h;
        if (cur - prev).abs() <= rel_tol * cur.abs() {
            return cur;
        }
        prev = cur;
    }
    prev
}

/// `Γ(a, z) = ∫_z^∞ t^{a−1} e^{−t} dt`, written as `e^{−z} ∫_0^∞ (z+s)^{a−1} e^{−s} ds`.
pub fn upper_gamma_oracle(a: f64, z: f64) -> f64 {
    (-z).exp() * exp_sinh(|s| ((a - 1.0) * (z + s).ln() - s).exp(), 1e-14)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// `Γ(1/2, z) = √π erfc(√z)`.
pub fn upper_gamma_half(z: f64) -> f64 {
    PI.sqrt() * erfc(z.sqrt())
}

/// `M_n(q, Λ) = ∫_1^∞ (ln t)^n e^{−Λt} t^{−q} dt / ∫_1^∞ e^{−Λt} t^{−q} dt`.
pub fn log_moment_oracle(n: i32, q: f64, lambda: f64) -> f64 {
    let w = |s: f64| {
        let t = 1.0 + s;
        (-lambda * s - q * t.ln()).exp()
    };
    let num = exp_sinh(|s| (1.0 + s).ln().powi(n) * w(s), 1e-13);
    let den = exp_sinh(w, 1e-13);
    num / den
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

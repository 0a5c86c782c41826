//! Small descriptive-statistics helpers.

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divisor `n − 1`); zero for a single value.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Quantile of ascending-sorted data by linear interpolation between order
/// statistics (Hyndman–Fan type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sample Pearson correlation.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "correlation needs two equal-length series of at least 2 values, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::InvalidInput("correlation undefined: a series has zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Least-squares slope of `y = b·x` (line through the origin).
pub fn slope_through_origin(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::InvalidInput("slope needs two non-empty series of equal length".into()));
    }
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("slope undefined: all abscissae are zero".into()));
    }
    Ok(xs.iter().zip(ys).map(|(x, y)| x * y).sum::<f64>() / sxx)
}

/// Kolmogorov–Smirnov distance between the empirical distribution of `xs`
/// and the continuous distribution function `cdf`.
pub fn ks_statistic<F>(xs: &[f64], mut cdf: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x)?;
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(d)
}

/// Asymptotic critical value of the one-sample KS statistic at level `alpha`,
/// from the Kolmogorov distribution tail `2 Σ (−1)^{k−1} e^{−2k²t²}`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    let tail = |t: f64| {
        let mut s = 0.0;
        for k in 1..100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * t * t).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-18 {
                break;
            }
        }
        2.0 * s
    };
    let (mut lo, mut hi) = (0.2, 5.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) / (n as f64).sqrt()
}

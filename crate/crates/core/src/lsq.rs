//! Levenberg–Marquardt least squares with a central-difference Jacobian,
//! optional box bounds (by projection) and local-curvature covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative cost decrease below which an accepted step counts as converged.
    pub ftol: f64,
    /// Relative parameter change below which the iteration stops.
    pub xtol: f64,
    /// Infinity norm of the gradient below which the iteration stops.
    pub gtol: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            ftol: 1e-12,
            xtol: 1e-10,
            gtol: 1e-14,
            fd_step: 1e-6,
            lower: None,
            upper: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LmOutcome {
    /// Covariance estimate `s² (JᵀJ)⁻¹` with `s² = cost / (m − p)`.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        covariance(&self.jacobian, self.cost)
    }

    /// Square roots of the covariance diagonal; NaN where the curvature is singular.
    pub fn std_errors(&self) -> Vec<f64> {
        std_errors(&self.jacobian, self.cost)
    }
}

/// Local-curvature covariance `s² (JᵀJ)⁻¹` of a least-squares solution with
/// residual Jacobian `jac` and sum of squares `cost`.
pub fn covariance(jac: &DMatrix<f64>, cost: f64) -> Option<DMatrix<f64>> {
    let (m, p) = jac.shape();
    if m <= p {
        return None;
    }
    let s2 = cost / (m - p) as f64;
    let jtj = jac.transpose() * jac;
    jtj.try_inverse().map(|inv| inv * s2)
}

/// Square roots of the diagonal of [`covariance`]; NaN where it is singular.
pub fn std_errors(jac: &DMatrix<f64>, cost: f64) -> Vec<f64> {
    let p = jac.ncols();
    match covariance(jac, cost) {
        Some(cov) => (0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; p],
    }
}

fn project(x: &mut [f64], opts: &LmOptions) {
    if let Some(lo) = &opts.lower {
        for (xi, l) in x.iter_mut().zip(lo) {
            *xi = xi.max(*l);
        }
    }
    if let Some(hi) = &opts.upper {
        for (xi, h) in x.iter_mut().zip(hi) {
            *xi = xi.min(*h);
        }
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Central-difference Jacobian; falls back to a one-sided difference when a
/// bound or a failed evaluation blocks one side.
pub fn numeric_jacobian<F>(f: &F, x: &[f64], r0: &[f64], opts: &LmOptions) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = r0.len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let h = opts.fd_step * x[j].abs().max(1.0);
        let lo_ok = opts.lower.as_ref().is_none_or(|l| x[j] - h >= l[j]);
        let hi_ok = opts.upper.as_ref().is_none_or(|u| x[j] + h <= u[j]);
        let eval = |delta: f64| -> Option<Vec<f64>> {
            let mut xp = x.to_vec();
            xp[j] += delta;
            f(&xp).ok().filter(|r| r.len() == m && r.iter().all(|v| v.is_finite()))
        };
        let plus = if hi_ok { eval(h) } else { None };
        let minus = if lo_ok { eval(-h) } else { None };
        match (plus, minus) {
            (Some(p), Some(mn)) => {
                for i in 0..m {
                    jac[(i, j)] = (p[i] - mn[i]) / (2.0 * h);
                }
            }
            (Some(p), None) => {
                for i in 0..m {
                    jac[(i, j)] = (p[i] - r0[i]) / h;
                }
            }
            (None, Some(mn)) => {
                for i in 0..m {
                    jac[(i, j)] = (r0[i] - mn[i]) / h;
                }
            }
            (None, None) => {
                return Err(Error::NonConvergence(format!(
                    "cannot differentiate residuals in parameter {j}"
                )))
            }
        }
    }
    Ok(jac)
}

/// Minimises `Σ rᵢ(x)²` starting from `x0`.
///
/// A residual evaluation that returns `Err` (or non-finite values) is treated
/// as a rejected step, so callers may signal infeasible parameter regions.
pub fn levenberg_marquardt<F>(f: F, x0: &[f64], opts: &LmOptions) -> Result<LmOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, opts);
    let mut r = f(&x)?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence("non-finite residuals at the starting point".into()));
    }
    let mut cost = sum_sq(&r);
    let mut jac = numeric_jacobian(&f, &x, &r, opts)?;
    let mut mu: Option<f64> = None;
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() <= opts.gtol {
            converged = true;
            break;
        }
        let diag_max = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let damping = *mu.get_or_insert(1e-3 * diag_max);
        let scale: Vec<f64> = (0..n).map(|i| a[(i, i)].max(1e-12 * diag_max)).collect();
        let mut lhs = a.clone();
        for i in 0..n {
            lhs[(i, i)] += damping * scale[i];
        }
        let step = match lhs.clone().cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => match lhs.lu().solve(&(-&g)) {
                Some(s) => s,
                None => {
                    mu = Some(damping * nu);
                    nu *= 2.0;
                    continue;
                }
            },
        };
        let mut x_new: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        project(&mut x_new, opts);
        let delta: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let step_norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        let x_norm = x.iter().map(|d| d * d).sum::<f64>().sqrt();
        if step_norm <= opts.xtol * (x_norm + opts.xtol) {
            converged = true;
            break;
        }
        let trial = f(&x_new).ok().filter(|v| v.iter().all(|y| y.is_finite()));
        let Some(r_new) = trial else {
            mu = Some(damping * nu);
            nu *= 2.0;
            continue;
        };
        let cost_new = sum_sq(&r_new);
        let dvec = DVector::from_column_slice(&delta);
        let jd = &jac * &dvec;
        let predicted = cost - (DVector::from_column_slice(&r) + jd).norm_squared();
        let rho = if predicted > 0.0 { (cost - cost_new) / predicted } else { -1.0 };
        if cost_new < cost && rho > 0.0 {
            let rel_drop = (cost - cost_new) / cost.max(f64::MIN_POSITIVE);
            x = x_new;
            r = r_new;
            cost = cost_new;
            mu = Some(damping * (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3)));
            nu = 2.0;
            jac = numeric_jacobian(&f, &x, &r, opts)?;
            if rel_drop <= opts.ftol || cost == 0.0 {
                converged = true;
                break;
            }
        } else {
            mu = Some(damping * nu);
            nu *= 2.0;
            if damping > 1e20 * diag_max {
                // Damping exhausted: no descent direction left at this precision.
                converged = true;
                break;
            }
        }
    }
    Ok(LmOutcome {
        params: x,
        residuals: r,
        cost,
        jacobian: jac,
        iterations,
        converged,
    })
}

//! Parameter estimation from ranked samples.
//!
//! Three estimators are provided: least squares of log sizes against the rank
//! curve ([`fit_rank_q1`], [`fit_rank_q`]), the logarithmic-moment system
//! ([`fit_moments`]), and a workflow that demands agreement between them,
//! excluding extreme entries when it fails ([`consistency_workflow`]).

mod consistency;
mod moments;
mod rank;

use serde::Serialize;

pub use consistency::{consistency_workflow, consistency_workflow_with, Agreement, ConsistencyConfig, EstimateSummary};
pub use moments::{fit_moments, moment_system_residuals, LogMomentSample};
pub use rank::{fit_rank_q, fit_rank_q1, fit_rank_q_with, tail_extrapolated_x0, RankFitOptions};
pub use crate::stats::pearson_r;

use crate::drift::DriftRankCurve;
use crate::error::Result;
use crate::model::{rank_curve_many, ModelParams, RankedSample};

/// Estimation procedure that produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Rank-curve least squares with `q = 1`, `σ = 0`.
    RankLsQ1,
    /// Rank-curve least squares over `q`, `Λ`, `x₀` (and `σ` with drift).
    RankLsQ,
    /// Logarithmic-moment system without drift.
    Moments,
    /// Logarithmic-moment system with drift.
    MomentsDrift,
}

impl FitMethod {
    pub fn tag(self) -> &'static str {
        match self {
            FitMethod::RankLsQ1 => "rank_ls_q1",
            FitMethod::RankLsQ => "rank_ls_q",
            FitMethod::Moments => "moments",
            FitMethod::MomentsDrift => "moments_drift",
        }
    }
}

/// Which end of the rank list an excluded entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleEnd {
    Head,
    Tail,
}

/// An entry excluded from the fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outsider {
    pub end: SampleEnd,
    pub size: f64,
    /// Middle-point rank in the untrimmed sample.
    pub rank: f64,
}

/// Standard errors from local curvature; absent where a parameter was not
/// estimated or the curvature is singular.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StdErrors {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_x0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_n_total: Option<f64>,
}

pub(crate) fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Result of an estimation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub params: ModelParams,
    pub stderr: StdErrors,
    /// Pearson correlation between observed and model log sizes.
    pub correlation: f64,
    pub method: FitMethod,
    pub outsiders: Vec<Outsider>,
    pub converged: bool,
    /// `ln x_i − ln x_model(r_i)` per rank.
    pub residuals: Vec<f64>,
    /// Sum of squared log residuals.
    pub cost: f64,
    /// Number of starting points tried.
    pub starts: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Outcome of the three-way agreement check, for workflow reports.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agreement: Option<Agreement>,
}

impl FitReport {
    /// True when the consistency workflow could not reconcile the estimators.
    pub fn is_declared_failure(&self) -> bool {
        self.agreement.as_ref().is_some_and(|a| !a.agreed)
    }

    pub fn log_lambda(&self) -> f64 {
        self.params.lambda().ln()
    }
}

/// Model sizes at the sample's ranks, with or without drift.
pub fn model_sizes(params: &ModelParams, ranks: &[f64], n_c: usize) -> Result<Vec<f64>> {
    if params.sigma() > 0.0 {
        DriftRankCurve::new(params)?.sizes_at(ranks, n_c as f64)
    } else {
        let p = ModelParams::new(params.q(), params.lambda(), params.x0(), 0.0)?.with_units(n_c)?;
        rank_curve_many(&p, ranks)
    }
}

/// Log residuals, their sum of squares and the correlation of observed and
/// model log sizes.
pub(crate) fn goodness(sample: &RankedSample, params: &ModelParams) -> Result<(Vec<f64>, f64, f64)> {
    let model = model_sizes(params, sample.ranks(), sample.len())?;
    let obs: Vec<f64> = sample.sizes().iter().map(|x| x.ln()).collect();
    let fit: Vec<f64> = model.iter().map(|x| x.ln()).collect();
    let residuals: Vec<f64> = obs.iter().zip(&fit).map(|(o, f)| o - f).collect();
    let cost = residuals.iter().map(|r| r * r).sum();
    let r = pearson_r(&obs, &fit).unwrap_or(f64::NAN);
    Ok((residuals, cost, r))
}

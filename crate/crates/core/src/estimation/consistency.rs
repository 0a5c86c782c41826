//! Three-way agreement between estimators, with outsider exclusion.

use serde::Serialize;

use super::{fit_moments, fit_rank_q_with, FitMethod, FitReport, Outsider, RankFitOptions, SampleEnd};
use crate::error::{Error, Result};
use crate::model::RankedSample;

/// Settings of [`consistency_workflow_with`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyConfig {
    /// Largest accepted pairwise difference in `q`.
    pub max_q_diff: f64,
    /// Largest accepted pairwise difference in `ln Λ`.
    pub max_log_lambda_diff: f64,
    /// Most entries that may be dropped from the large end.
    pub max_head: usize,
    /// Most entries that may be dropped from the small end.
    pub max_tail: usize,
    /// Fit the rank curve with drift (otherwise the no-drift rank curve).
    pub rank_with_drift: bool,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self { max_q_diff: 0.15, max_log_lambda_diff: 0.5, max_head: 3, max_tail: 5, rank_with_drift: true }
    }
}

/// One estimator's result as compared by the agreement check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateSummary {
    pub method: FitMethod,
    pub q: Option<f64>,
    pub log_lambda: Option<f64>,
    pub sigma: Option<f64>,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EstimateSummary {
    fn from_result(method: FitMethod, r: &Result<FitReport>) -> Self {
        match r {
            Ok(rep) => Self {
                method,
                q: Some(rep.params.q()),
                log_lambda: Some(rep.params.lambda().ln()),
                sigma: Some(rep.params.sigma()),
                converged: rep.converged,
                error: None,
            },
            Err(e) => Self { method, q: None, log_lambda: None, sigma: None, converged: false, error: Some(e.to_string()) },
        }
    }
}

/// Outcome of the agreement check attached to a workflow report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agreement {
    pub agreed: bool,
    pub config: ConsistencyConfig,
    /// Estimates of the accepted round, or of the untrimmed sample on failure.
    pub estimates: Vec<EstimateSummary>,
    pub head_excluded: usize,
    pub tail_excluded: usize,
    /// Number of exclusion patterns fitted.
    pub rounds: usize,
}

fn agree(estimates: &[EstimateSummary], cfg: &ConsistencyConfig) -> bool {
    let vals: Option<Vec<(f64, f64)>> =
        estimates.iter().map(|e| if e.converged { e.q.zip(e.log_lambda) } else { None }).collect();
    let Some(vals) = vals else { return false };
    vals.iter().enumerate().all(|(i, a)| {
        vals[i + 1..]
            .iter()
            .all(|b| (a.0 - b.0).abs() <= cfg.max_q_diff && (a.1 - b.1).abs() <= cfg.max_log_lambda_diff)
    })
}

/// Exclusion patterns `(head, tail)` in the order they are tried: fewer
/// exclusions first and, for the same total, more from the large end.
fn exclusion_order(max_head: usize, max_tail: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for total in 0..=max_head + max_tail {
        for h in (0..=total.min(max_head)).rev() {
            let t = total - h;
            if t <= max_tail {
                out.push((h, t));
            }
        }
    }
    out
}

fn outsiders(sample: &RankedSample, head: usize, tail: usize) -> Vec<Outsider> {
    let n = sample.len();
    let mut v: Vec<Outsider> = (0..head)
        .map(|i| Outsider { end: SampleEnd::Head, size: sample.sizes()[i], rank: sample.ranks()[i] })
        .collect();
    v.extend((n - tail..n).map(|i| Outsider { end: SampleEnd::Tail, size: sample.sizes()[i], rank: sample.ranks()[i] }));
    v
}

/// [`consistency_workflow_with`] under the default configuration.
pub fn consistency_workflow(sample: &RankedSample) -> Result<FitReport> {
    consistency_workflow_with(sample, &ConsistencyConfig::default())
}

/// Runs the rank fit and both moment systems; accepts the drift-moment
/// result when all three agree, otherwise drops extreme entries and refits.
/// If no allowed exclusion pattern yields agreement the untrimmed
/// drift-moment result is returned marked as a declared failure.
pub fn consistency_workflow_with(sample: &RankedSample, cfg: &ConsistencyConfig) -> Result<FitReport> {
    if sample.len() < 20 {
        return Err(Error::InvalidInput(format!("consistency workflow needs ≥ 20 entries, got {}", sample.len())));
    }
    let mut first: Option<(Vec<Result<FitReport>>, Vec<EstimateSummary>)> = None;
    let mut warm: Option<(f64, f64, f64)> = None;
    let mut rounds = 0;
    for (head, tail) in exclusion_order(cfg.max_head, cfg.max_tail) {
        if sample.len() < head + tail + 20 {
            continue;
        }
        rounds += 1;
        let trimmed = sample.trimmed(head, tail)?;
        let mut rank_opts = RankFitOptions::with_drift(cfg.rank_with_drift);
        if let Some(w) = warm {
            rank_opts.extra_starts.push(w);
            rank_opts.refine = 1;
        }
        let rank = fit_rank_q_with(&trimmed, &rank_opts);
        if let (Ok(r), None) = (&rank, warm) {
            warm = Some((r.params.q(), r.params.lambda().ln(), r.params.sigma()));
        }
        let plain = fit_moments(&trimmed, false);
        let drift = fit_moments(&trimmed, true);
        let estimates = vec![
            EstimateSummary::from_result(FitMethod::RankLsQ, &rank),
            EstimateSummary::from_result(FitMethod::Moments, &plain),
            EstimateSummary::from_result(FitMethod::MomentsDrift, &drift),
        ];
        if agree(&estimates, cfg) {
            let mut report = drift?;
            report.outsiders = outsiders(sample, head, tail);
            report.agreement = Some(Agreement {
                agreed: true,
                config: cfg.clone(),
                estimates,
                head_excluded: head,
                tail_excluded: tail,
                rounds,
            });
            return Ok(report);
        }
        if first.is_none() {
            first = Some((vec![drift, rank, plain], estimates));
        }
    }
    let Some((results, estimates)) = first else {
        return Err(Error::InvalidInput("sample too small for any exclusion pattern".into()));
    };
    // Prefer the drift-moment estimate; fall back to whichever estimator succeeded.
    let mut report = results
        .into_iter()
        .find_map(|r| r.ok())
        .ok_or_else(|| Error::NonConvergence("every estimator failed on the untrimmed sample".into()))?;
    report.notes.push("estimators disagree for every allowed exclusion pattern".into());
    report.agreement =
        Some(Agreement { agreed: false, config: cfg.clone(), estimates, head_excluded: 0, tail_excluded: 0, rounds });
    Ok(report)
}

//! Inverse-transform sampling from the equilibrium model and Monte Carlo
//! confidence bands for rank distributions.
//!
//! Randomness comes from ChaCha8 with one stream per chunk or replica, so
//! results are identical whatever the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::model::ModelParams;
use crate::specfun::{inverse_upper_gamma_near, ln_upper_gamma};
use crate::stats::quantile_sorted;

/// Default number of Monte Carlo replicas for bands.
pub const DEFAULT_REPLICAS: usize = 10_000;
/// Default band coverage.
pub const DEFAULT_LEVEL: f64 = 0.90;

const CHUNK: usize = 4096;
const GUESS_STEP: f64 = 0.5;
const GUESS_POINTS: usize = 81;

/// Maps survival probabilities to sizes for the no-drift model, with a
/// coarse table of `ln z` against `ln p` to warm-start each inversion.
#[derive(Debug, Clone)]
pub struct Quantiles {
    a: f64,
    ln_gamma_lambda: f64,
    scale: f64,
    x0: f64,
    guess: Vec<f64>,
}

impl Quantiles {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let a = params.gamma_a();
        let ln_gamma_lambda = ln_upper_gamma(a, params.lambda())?;
        let mut guess = Vec::with_capacity(GUESS_POINTS);
        let mut prev = None;
        for k in 0..GUESS_POINTS {
            let ln_p = -(k as f64) * GUESS_STEP;
            let z = inverse_upper_gamma_near(a, (ln_gamma_lambda + ln_p).exp(), prev)?;
            prev = Some(z);
            guess.push(z.ln());
        }
        Ok(Self { a, ln_gamma_lambda, scale: params.x0() / params.lambda(), x0: params.x0(), guess })
    }

    /// Size `x` with `P(X > x) = p` (no drift).
    pub fn size_at_survival(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p <= 1.0) {
            return domain(format!("survival probability must lie in (0, 1], got {p}"));
        }
        if p == 1.0 {
            return Ok(self.x0);
        }
        let ln_p = p.ln();
        let pos = -ln_p / GUESS_STEP;
        let k = pos.floor() as usize;
        let guess = if k + 1 < GUESS_POINTS {
            let t = pos - k as f64;
            Some(((1.0 - t) * self.guess[k] + t * self.guess[k + 1]).exp())
        } else {
            None
        };
        let z = inverse_upper_gamma_near(self.a, (self.ln_gamma_lambda + ln_p).exp(), guess)?;
        Ok((self.scale * z).max(self.x0))
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_into(q: &Quantiles, sigma: f64, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<()> {
    for slot in out.iter_mut() {
        // 1 − U with U ∈ [0, 1) lies in (0, 1].
        let p = 1.0 - rng.random::<f64>();
        let mut x = q.size_at_survival(p)?;
        if sigma > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            x *= (sigma * z).exp();
        }
        *slot = x;
    }
    Ok(())
}

/// `n` independent draws from the model; with drift each no-drift draw is
/// multiplied by `e^{σZ}`.
pub fn sample(params: &ModelParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return domain("sample size must be ≥ 1");
    }
    let q = Quantiles::new(params)?;
    let mut out = vec![0.0; n];
    out.par_chunks_mut(CHUNK)
        .enumerate()
        .try_for_each(|(i, chunk)| draw_into(&q, params.sigma(), &mut rng_for(seed, i as u64), chunk))?;
    Ok(out)
}

/// Per-rank Monte Carlo envelope of the rank distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceBand {
    pub n_c: usize,
    pub level: f64,
    pub replicas: usize,
    pub seed: u64,
    /// Quantile `(1 − level)/2` of the size at each rank (rank 0.5 first).
    pub lower: Vec<f64>,
    /// Quantile `(1 + level)/2`.
    pub upper: Vec<f64>,
    /// Per-rank median.
    pub median: Vec<f64>,
}

impl ConfidenceBand {
    /// Whether each size of a descending-sorted sample lies within the band at its rank.
    pub fn contains(&self, sorted_desc: &[f64]) -> Vec<bool> {
        sorted_desc
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| x >= lo && x <= hi)
            .collect()
    }
}

/// Smallest replica count accepted for a band at `level`: at least 50
/// expected replicas beyond each quantile (1000 at the default 90%).
pub fn min_replicas(level: f64) -> usize {
    (50.0 / (0.5 * (1.0 - level)) - 1e-9).ceil() as usize
}

/// Monte Carlo rank band: draw `n_c` sizes, sort them descending, repeat for
/// every replica, and take per-rank quantiles at `(1 ± level)/2`.
pub fn confidence_band(params: &ModelParams, n_c: usize, replicas: usize, level: f64, seed: u64) -> Result<ConfidenceBand> {
    if !(level > 0.0 && level < 1.0) {
        return domain(format!("level must lie in (0, 1), got {level}"));
    }
    if n_c < 1 {
        return domain("n_c must be ≥ 1");
    }
    let needed = min_replicas(level);
    if replicas < needed {
        return Err(Error::InvalidInput(format!("{replicas} replicas are too few for level {level}; need ≥ {needed}")));
    }
    let q = Quantiles::new(params)?;
    let mut table = vec![0.0; replicas * n_c];
    table.par_chunks_mut(n_c).enumerate().try_for_each(|(j, row)| -> Result<()> {
        draw_into(&q, params.sigma(), &mut rng_for(seed, j as u64), row)?;
        row.sort_by(|a, b| b.total_cmp(a));
        Ok(())
    })?;
    let (p_lo, p_hi) = (0.5 * (1.0 - level), 0.5 * (1.0 + level));
    let per_rank: Vec<(f64, f64, f64)> = (0..n_c)
        .into_par_iter()
        .map(|i| {
            let mut col: Vec<f64> = (0..replicas).map(|j| table[j * n_c + i]).collect();
            col.sort_by(f64::total_cmp);
            (quantile_sorted(&col, p_lo), quantile_sorted(&col, 0.5), quantile_sorted(&col, p_hi))
        })
        .collect();
    Ok(ConfidenceBand {
        n_c,
        level,
        replicas,
        seed,
        lower: per_rank.iter().map(|t| t.0).collect(),
        median: per_rank.iter().map(|t| t.1).collect(),
        upper: per_rank.iter().map(|t| t.2).collect(),
    })
}

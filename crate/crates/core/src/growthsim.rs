//! Synthetic panels from the growth dynamics
//! `ẋ = k₁x + k_q x^q` with fluctuating rates.
//!
//! Each step of length `dt` applies the forward-Euler update
//! `x ← x + dt (k₁x + k_q x^q) + σ_k √x √dt ξ` (the last term only with
//! finite-size noise). In the default mode the rates are redrawn every step as
//! `k = mean + std·ξ/√dt`, so that `∫k dt` is a Brownian motion with drift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::PanelRecord;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::sampling;

/// Initial size law of the simulated units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitLaw {
    Fixed { size: f64 },
    LogUniform { min: f64, max: f64 },
    /// Draws from an equilibrium model.
    Model(ModelParams),
    Explicit(Vec<f64>),
}

/// How rate fluctuations enter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    /// Fresh rates per unit and step (Wiener increments).
    PerStep,
    /// One draw per unit, constant in time.
    PerUnit,
}

/// Simulation settings; fields missing from a serialized config take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_units: usize,
    pub q: f64,
    pub k1_mean: f64,
    pub k1_std: f64,
    pub kq_mean: f64,
    pub kq_std: f64,
    pub finite_size_noise: bool,
    /// Scale of the `±σ_k√x` term.
    pub sigma_k: f64,
    /// Step in years; `1/dt` must be an integer.
    pub dt: f64,
    pub steps: usize,
    pub init: InitLaw,
    pub seed: u64,
    pub rate_mode: RateMode,
    /// Abort when a size exceeds this value.
    pub ceiling: f64,
    pub start_year: i32,
    /// Years left out of the emitted panel.
    pub omit_years: Vec<i32>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_units: 100,
            q: 1.0,
            k1_mean: 0.0,
            k1_std: 0.0,
            kq_mean: 0.0,
            kq_std: 0.0,
            finite_size_noise: false,
            sigma_k: 0.0,
            dt: 0.01,
            steps: 1000,
            init: InitLaw::Fixed { size: 1000.0 },
            seed: 0,
            rate_mode: RateMode::PerStep,
            ceiling: 1e12,
            start_year: 2000,
            omit_years: Vec::new(),
        }
    }
}

impl SimConfig {
    fn steps_per_year(&self) -> Result<usize> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n_units < 1 {
            return bad("n_units must be ≥ 1".into());
        }
        if self.steps < 1 {
            return bad("steps must be ≥ 1".into());
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return bad(format!("dt must lie in (0, 1], got {}", self.dt));
        }
        let spy = (1.0 / self.dt).round();
        if ((spy * self.dt) - 1.0).abs() > 1e-9 {
            return bad(format!("1/dt must be an integer, got dt = {}", self.dt));
        }
        if !(self.k1_std >= 0.0 && self.kq_std >= 0.0 && self.sigma_k >= 0.0) {
            return bad("rate and noise standard deviations must be ≥ 0".into());
        }
        if !self.q.is_finite() || !self.k1_mean.is_finite() || !self.kq_mean.is_finite() {
            return bad("q and mean rates must be finite".into());
        }
        if !(self.ceiling > 1.0) {
            return bad("ceiling must exceed 1".into());
        }
        match &self.init {
            InitLaw::Fixed { size } if !(*size >= 1.0) => return bad("initial size must be ≥ 1".into()),
            InitLaw::LogUniform { min, max } if !(*min >= 1.0 && max >= min) => {
                return bad("log-uniform bounds must satisfy 1 ≤ min ≤ max".into())
            }
            InitLaw::Explicit(v) if v.len() != self.n_units || v.iter().any(|x| !(*x >= 1.0)) => {
                return bad("explicit initial sizes must be ≥ 1, one per unit".into())
            }
            _ => {}
        }
        Ok(spy as usize)
    }
}

/// Continuous annual snapshots of every unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectories {
    pub years: Vec<i32>,
    /// `sizes[unit][k]` is the size at `years[k]`.
    pub sizes: Vec<Vec<f64>>,
}

fn unit_rng(seed: u64, unit: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(unit as u64 + 1);
    rng
}

/// Runs the simulation and returns unrounded annual sizes.
pub fn simulate_trajectories(cfg: &SimConfig) -> Result<Trajectories> {
    let spy = cfg.steps_per_year()?;
    let init: Vec<f64> = match &cfg.init {
        InitLaw::Fixed { size } => vec![*size; cfg.n_units],
        InitLaw::Explicit(v) => v.clone(),
        InitLaw::Model(p) => sampling::sample(p, cfg.n_units, cfg.seed)?.into_iter().map(|x| x.max(1.0)).collect(),
        InitLaw::LogUniform { min, max } => (0..cfg.n_units)
            .map(|i| {
                let u: f64 = unit_rng(cfg.seed, i).random();
                (min.ln() + u * (max.ln() - min.ln())).exp()
            })
            .collect(),
    };
    let n_years = cfg.steps / spy;
    let years: Vec<i32> = (0..=n_years as i32).map(|k| cfg.start_year + k).collect();
    let sqrt_dt = cfg.dt.sqrt();
    let sizes = init
        .into_par_iter()
        .enumerate()
        .map(|(i, x_init)| -> Result<Vec<f64>> {
            // Stream 0 of the unit generator feeds the log-uniform draw; skip past it.
            let mut rng = unit_rng(cfg.seed, i);
            let _: f64 = rng.random();
            let (mut k1, mut kq) = (cfg.k1_mean, cfg.kq_mean);
            if cfg.rate_mode == RateMode::PerUnit {
                k1 += cfg.k1_std * rng.sample::<f64, _>(StandardNormal);
                kq += cfg.kq_std * rng.sample::<f64, _>(StandardNormal);
            }
            let mut x = x_init;
            let mut snaps = Vec::with_capacity(n_years + 1);
            snaps.push(x);
            for step in 1..=n_years * spy {
                if cfg.rate_mode == RateMode::PerStep {
                    k1 = cfg.k1_mean;
                    kq = cfg.kq_mean;
                    if cfg.k1_std > 0.0 {
                        k1 += cfg.k1_std * rng.sample::<f64, _>(StandardNormal) / sqrt_dt;
                    }
                    if cfg.kq_std > 0.0 {
                        kq += cfg.kq_std * rng.sample::<f64, _>(StandardNormal) / sqrt_dt;
                    }
                }
                let mut dx = cfg.dt * (k1 * x + kq * x.powf(cfg.q));
                if cfg.finite_size_noise && cfg.sigma_k > 0.0 {
                    dx += cfg.sigma_k * x.sqrt() * sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                }
                x = (x + dx).max(1.0);
                if !(x <= cfg.ceiling) {
                    return Err(Error::BlowUp(format!(
                        "unit {i} reached {x:e} (ceiling {:e}) at step {step}, t = {:.3} years; try a smaller dt",
                        cfg.ceiling,
                        step as f64 * cfg.dt
                    )));
                }
                if step % spy == 0 {
                    snaps.push(x);
                }
            }
            Ok(snaps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectories { years, sizes })
}

/// Identifier of simulated unit `i`.
pub fn unit_id(i: usize, n_units: usize) -> String {
    let width = n_units.saturating_sub(1).to_string().len();
    format!("u{i:0width$}")
}

/// Runs the simulation and emits rounded annual populations ordered by
/// `(unit_id, year)`.
pub fn simulate(cfg: &SimConfig) -> Result<Vec<PanelRecord>> {
    let traj = simulate_trajectories(cfg)?;
    let mut out = Vec::with_capacity(traj.sizes.len() * traj.years.len());
    for (i, xs) in traj.sizes.iter().enumerate() {
        let id = unit_id(i, cfg.n_units);
        for (&year, &x) in traj.years.iter().zip(xs) {
            if cfg.omit_years.contains(&year) {
                continue;
            }
            out.push(PanelRecord { unit_id: id.clone(), year, population: x.round().max(1.0) as u64 });
        }
    }
    Ok(out)
}

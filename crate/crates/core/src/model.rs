//! Equilibrium size distributions: densities, cumulative and rank curves,
//! the Gamma scaling law and the equation of state.
//!
//! The equilibrium density over sizes `x ≥ x₀` is
//! `p(x) = Z⁻¹ e^{−Λx/x₀} x^{−q}` with `Z = (Λ/x₀)^{q−1} Γ(1−q, Λ)`.
//! A proportional drift of scale `σ` convolves `ln x` with a normal kernel.

use serde::{Deserialize, Serialize};

use crate::drift;
use crate::error::{domain, Error, Result};
use crate::roots::brent;
use crate::specfun::{inverse_upper_gamma_near, ln_upper_gamma, upper_gamma, upper_gamma_scaled};

/// Parameters of the equilibrium model plus optional system totals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ModelParams {
    q: f64,
    lambda: f64,
    x0: f64,
    sigma: f64,
    n_c: Option<usize>,
    n_total: Option<f64>,
}

#[derive(Deserialize)]
struct RawParams {
    q: f64,
    lambda: f64,
    x0: f64,
    #[serde(default)]
    sigma: f64,
    #[serde(default)]
    n_c: Option<usize>,
    #[serde(default)]
    n_total: Option<f64>,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;
    fn try_from(r: RawParams) -> Result<Self> {
        let mut p = ModelParams::new(r.q, r.lambda, r.x0, r.sigma)?;
        if let Some(n) = r.n_c {
            p = p.with_units(n)?;
        }
        if let Some(n) = r.n_total {
            p = p.with_total(n)?;
        }
        Ok(p)
    }
}

impl ModelParams {
    pub fn new(q: f64, lambda: f64, x0: f64, sigma: f64) -> Result<Self> {
        if !(q > 0.0 && q <= 2.0) {
            return domain(format!("q must lie in (0, 2], got {q}"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return domain(format!("Λ must be finite and > 0, got {lambda}"));
        }
        if !(x0 >= 1.0 && x0.is_finite()) {
            return domain(format!("x0 must be finite and ≥ 1, got {x0}"));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return domain(format!("σ must be finite and ≥ 0, got {sigma}"));
        }
        Ok(Self { q, lambda, x0, sigma, n_c: None, n_total: None })
    }

    /// Proportional-growth model without drift.
    pub fn q1(lambda: f64, x0: f64) -> Result<Self> {
        Self::new(1.0, lambda, x0, 0.0)
    }

    /// Attaches the number of units.
    pub fn with_units(mut self, n_c: usize) -> Result<Self> {
        if n_c < 2 {
            return domain(format!("n_c must be ≥ 2, got {n_c}"));
        }
        self.n_c = Some(n_c);
        self.check_totals()?;
        Ok(self)
    }

    /// Attaches the total population.
    pub fn with_total(mut self, n_total: f64) -> Result<Self> {
        if !(n_total > 0.0 && n_total.is_finite()) {
            return domain(format!("N must be finite and > 0, got {n_total}"));
        }
        self.n_total = Some(n_total);
        self.check_totals()?;
        Ok(self)
    }

    fn check_totals(&self) -> Result<()> {
        if let (Some(n_c), Some(n), true) = (self.n_c, self.n_total, self.sigma == 0.0) {
            if n < n_c as f64 * self.x0 {
                return domain(format!("N = {n} is below n_c·x0 = {}", n_c as f64 * self.x0));
            }
        }
        Ok(())
    }

    /// Builds a model whose `Λ` satisfies the equation of state for the given totals.
    pub fn from_totals(n_total: f64, n_c: usize, x0: f64, q: f64, sigma: f64) -> Result<Self> {
        let lambda = solve_lambda(n_total, n_c, x0, q, sigma)?;
        Self::new(q, lambda, x0, sigma)?.with_units(n_c)?.with_total(n_total)
    }

    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn n_c(&self) -> Option<usize> {
        self.n_c
    }
    pub fn n_total(&self) -> Option<f64> {
        self.n_total
    }

    /// `a = 1 − q`, the first Gamma argument of the normalization.
    pub fn gamma_a(&self) -> f64 {
        1.0 - self.q
    }

    /// Normalization `Z = (Λ/x₀)^{q−1} Γ(1−q, Λ)`.
    pub fn normalization(&self) -> Result<f64> {
        let ln_z = (self.q - 1.0) * (self.lambda / self.x0).ln() + ln_upper_gamma(self.gamma_a(), self.lambda)?;
        Ok(ln_z.exp())
    }

    fn require_no_drift(&self, what: &str) -> Result<()> {
        if self.sigma != 0.0 {
            return domain(format!("{what} is only available for σ = 0, got σ = {}", self.sigma));
        }
        Ok(())
    }

    fn require_units(&self) -> Result<usize> {
        self.n_c.ok_or_else(|| Error::Domain("n_c is not set".into()))
    }
}

/// Probability density of sizes.
///
/// Without drift the density vanishes below `x₀`. With drift it is the
/// log-normal convolution and extends below `x₀`.
pub fn density(params: &ModelParams, x: f64) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return domain(format!("x must be finite and > 0, got {x}"));
    }
    if params.sigma > 0.0 {
        return drift::density(params, x);
    }
    if x < params.x0 {
        return Ok(0.0);
    }
    // Written relative to x₀ to avoid overflow of x^{−q} and e^{−Λx/x₀} separately.
    let t = x / params.x0;
    let a = params.gamma_a();
    let s = upper_gamma_scaled(a, params.lambda)?;
    // Z = x₀^{1−q} Λ^{q−1} Γ(a, Λ) = x₀^{1−q} e^{−Λ} S(a, Λ)
    let ln_p = -params.lambda * (t - 1.0) - params.q * t.ln() - params.x0.ln() - s.ln();
    Ok(ln_p.exp())
}

/// Cumulative distribution `1 − Γ(1−q, Λx/x₀)/Γ(1−q, Λ)` (no drift).
pub fn cumulative(params: &ModelParams, x: f64) -> Result<f64> {
    Ok(1.0 - survival(params, x)?)
}

/// Survival function `Γ(1−q, Λx/x₀)/Γ(1−q, Λ)` (no drift); more accurate
/// than `1 − cumulative` in the upper tail.
pub fn survival(params: &ModelParams, x: f64) -> Result<f64> {
    params.require_no_drift("the analytic cumulative")?;
    if !(x >= params.x0) {
        return domain(format!("x = {x} is below x0 = {}", params.x0));
    }
    if x == params.x0 {
        return Ok(1.0);
    }
    let a = params.gamma_a();
    let z = params.lambda * x / params.x0;
    if !z.is_finite() {
        return Ok(0.0);
    }
    let ratio = (ln_upper_gamma(a, z)? - ln_upper_gamma(a, params.lambda)?).exp();
    Ok(ratio.min(1.0))
}

/// Size at continuous rank `r`, `x = (x₀/Λ) Γ⁻¹[1−q, Γ(1−q, Λ) r/n_c]` (no drift).
pub fn rank_curve(params: &ModelParams, r: f64) -> Result<f64> {
    rank_curve_near(params, r, None)
}

fn rank_curve_near(params: &ModelParams, r: f64, guess: Option<f64>) -> Result<f64> {
    params.require_no_drift("the analytic rank curve")?;
    let n_c = params.require_units()? as f64;
    if !(r > 0.0 && r <= n_c) {
        return domain(format!("rank must lie in (0, {n_c}], got {r}"));
    }
    if r == n_c {
        return Ok(params.x0);
    }
    let a = params.gamma_a();
    let target = (ln_upper_gamma(a, params.lambda)? + (r / n_c).ln()).exp();
    let z = inverse_upper_gamma_near(a, target, guess.map(|x| x * params.lambda / params.x0))?;
    Ok(params.x0 * z / params.lambda)
}

/// Rank curve at many ranks, warm-starting each inversion from the previous
/// result. Most efficient when the ranks are sorted.
pub fn rank_curve_many(params: &ModelParams, ranks: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ranks.len());
    let mut prev = None;
    for &r in ranks {
        let x = rank_curve_near(params, r, prev)?;
        prev = Some(x);
        out.push(x);
    }
    Ok(out)
}

/// A rank distribution after the Gamma scaling `r' = r Γ(0,Λ)/n_c`, `x' = xΛ/x₀`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaledRanks {
    pub ranks: Vec<f64>,
    pub sizes: Vec<f64>,
    pub label: String,
}

/// Applies the Gamma scaling law to a sample using fitted proportional-growth
/// parameters; model-exact samples collapse onto [`gamma_master_curve`].
pub fn gamma_scale(sample: &RankedSample, params: &ModelParams) -> Result<ScaledRanks> {
    if params.q != 1.0 {
        return domain(format!("the Gamma scaling law needs q = 1, got {}", params.q));
    }
    params.require_no_drift("the Gamma scaling law")?;
    let n_c = sample.len() as f64;
    let g0 = upper_gamma(0.0, params.lambda)?;
    Ok(ScaledRanks {
        ranks: sample.ranks().iter().map(|r| r * g0 / n_c).collect(),
        sizes: sample.sizes().iter().map(|x| x * params.lambda / params.x0).collect(),
        label: sample.label().to_string(),
    })
}

/// Master curve `x' = Γ⁻¹(0, r')` of the Gamma scaling law.
pub fn gamma_master_curve(r_scaled: f64) -> Result<f64> {
    inverse_upper_gamma_near(0.0, r_scaled, None)
}

/// Mean size in units of `x₀`, `Γ(2−q,Λ)/(Λ Γ(1−q,Λ)) e^{σ²/2}`; the model's
/// prediction for `N/(n_c x₀)`.
pub fn equation_of_state_mean(params: &ModelParams) -> Result<f64> {
    mean_ratio(params.q, params.lambda, params.sigma)
}

fn mean_ratio(q: f64, lambda: f64, sigma: f64) -> Result<f64> {
    // Γ(2−q,Λ)/(Λ Γ(1−q,Λ)) equals the ratio of the scaled functions.
    let s2 = upper_gamma_scaled(2.0 - q, lambda)?;
    let s1 = upper_gamma_scaled(1.0 - q, lambda)?;
    Ok(s2 / s1 * (0.5 * sigma * sigma).exp())
}

const LN_LAMBDA_LO: f64 = -200.0;
const LN_LAMBDA_HI: f64 = 60.0;

/// Solves the equation of state for `Λ` given the totals `N`, `n_c` and `x₀`.
pub fn solve_lambda(n_total: f64, n_c: usize, x0: f64, q: f64, sigma: f64) -> Result<f64> {
    ModelParams::new(q, 1.0, x0, sigma)?;
    if n_c < 1 {
        return domain("n_c must be ≥ 1");
    }
    if !(n_total > 0.0 && n_total.is_finite()) {
        return domain(format!("N must be finite and > 0, got {n_total}"));
    }
    let target = n_total / (n_c as f64 * x0);
    let floor = (0.5 * sigma * sigma).exp();
    let ln_target = target.ln();
    let g = |l: f64| -> Result<f64> { Ok(mean_ratio(q, l.exp(), sigma)?.ln() - ln_target) };
    let g_hi = g(LN_LAMBDA_HI)?;
    if g_hi >= 0.0 {
        return Err(Error::Infeasible(format!(
            "N/(n_c·x0) = {target} is not above the attainable minimum {floor} (x0 too large)"
        )));
    }
    let g_lo = g(LN_LAMBDA_LO)?;
    if g_lo <= 0.0 {
        return Err(Error::Infeasible(format!(
            "N/(n_c·x0) = {target} exceeds the largest mean reachable at q = {q} (x0 too small)"
        )));
    }
    let l = brent(g, LN_LAMBDA_LO, LN_LAMBDA_HI, 1e-14, 500)?;
    Ok(l.exp())
}

/// Sizes sorted in descending order with middle-point ranks `i − 1/2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedSample {
    sizes: Vec<f64>,
    ranks: Vec<f64>,
    label: String,
}

impl RankedSample {
    pub fn from_sizes(mut sizes: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidInput("empty sample".into()));
        }
        if let Some((i, x)) = sizes.iter().enumerate().find(|(_, x)| !(**x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidInput(format!("size at position {i} is not a finite positive number: {x}")));
        }
        sizes.sort_by(|a, b| b.total_cmp(a));
        let ranks = (0..sizes.len()).map(|i| i as f64 + 0.5).collect();
        Ok(Self { sizes, ranks, label: label.into() })
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }
    pub fn ranks(&self) -> &[f64] {
        &self.ranks
    }
    pub fn label(&self) -> &str {
        &self.label
    }
    pub fn len(&self) -> usize {
        self.sizes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
    pub fn total(&self) -> f64 {
        self.sizes.iter().sum()
    }

    /// Drops the `head` largest and `tail` smallest entries and re-ranks.
    pub fn trimmed(&self, head: usize, tail: usize) -> Result<Self> {
        if head + tail >= self.len() {
            return Err(Error::InvalidInput(format!(
                "cannot drop {head} + {tail} entries from a sample of {}",
                self.len()
            )));
        }
        let sizes = self.sizes[head..self.len() - tail].to_vec();
        Self::from_sizes(sizes, self.label.clone())
    }

    /// Same sample with every size multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_sizes(self.sizes.iter().map(|x| x * c).collect(), self.label.clone())
    }
}

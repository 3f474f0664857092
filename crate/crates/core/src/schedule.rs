//! Variance-preserving noise schedules.
//!
//! Indices are 1-based to match the forward process `X_1, …, X_T`:
//! `ᾱ_t² + σ_t² = 1`, `α_t = ᾱ_{t+1} / ᾱ_t` and
//! `η_t = σ_{t+1}² / α_t² - σ_t²` for `1 <= t < T`.
//!
//! [`build_vp_schedule`] grows the odds ratio `ρ_t = σ_t² / (1 - σ_t²)`
//! geometrically, `ρ_{t+1} = ρ_t (1 + 1/G)`, which is exactly the largest
//! step allowed by `η_t <= σ_t² / G`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest schedule [`build_vp_schedule`] will allocate.
pub const MAX_STEPS: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    bar_alpha_sq: Vec<f64>,
    sigma_sq: Vec<f64>,
    alpha: Vec<f64>,
    eta: Vec<f64>,
    budget: f64,
}

impl Schedule {
    /// Variance-preserving schedule through the given strictly increasing
    /// noise levels `σ_1², …, σ_T²` in `(0, 1)`.
    ///
    /// The step budget `G` is recorded as `min_t σ_t² / η_t`.
    pub fn from_sigma_sq(sigma_sq: Vec<f64>) -> Result<Self> {
        if sigma_sq.is_empty() {
            return Err(Error::invalid("schedule needs at least one noise level"));
        }
        if sigma_sq.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
            return Err(Error::invalid("noise levels must lie in (0, 1)"));
        }
        if sigma_sq.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("noise levels must be strictly increasing"));
        }
        let bar_alpha_sq: Vec<f64> = sigma_sq.iter().map(|s| 1.0 - s).collect();
        Ok(Self::assemble(bar_alpha_sq, sigma_sq, None))
    }

    fn assemble(bar_alpha_sq: Vec<f64>, sigma_sq: Vec<f64>, budget: Option<f64>) -> Self {
        let steps = sigma_sq.len() - 1;
        let mut alpha = Vec::with_capacity(steps);
        let mut eta = Vec::with_capacity(steps);
        for t in 0..steps {
            let a_sq = bar_alpha_sq[t + 1] / bar_alpha_sq[t];
            alpha.push(a_sq.sqrt());
            let mut e = sigma_sq[t + 1] / a_sq - sigma_sq[t];
            if let Some(g) = budget {
                // Equality holds in exact arithmetic; drop the rounding excess.
                e = e.min(sigma_sq[t] / g);
            }
            eta.push(e);
        }
        let budget = budget.unwrap_or_else(|| {
            sigma_sq
                .iter()
                .zip(&eta)
                .map(|(s, e)| s / e)
                .fold(f64::INFINITY, f64::min)
        });
        Self {
            bar_alpha_sq,
            sigma_sq,
            alpha,
            eta,
            budget,
        }
    }

    /// Number of noise levels `T`.
    pub fn len(&self) -> usize {
        self.sigma_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_sq.is_empty()
    }

    /// Step budget `G` with `η_t <= σ_t² / G`.
    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn bar_alpha_sq(&self, t: usize) -> f64 {
        self.bar_alpha_sq[t - 1]
    }

    pub fn bar_alpha(&self, t: usize) -> f64 {
        self.bar_alpha_sq[t - 1].sqrt()
    }

    pub fn sigma_sq(&self, t: usize) -> f64 {
        self.sigma_sq[t - 1]
    }

    /// `α_t` for `1 <= t < T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `η_t` for `1 <= t < T`.
    pub fn eta(&self, t: usize) -> f64 {
        self.eta[t - 1]
    }

    pub fn sigma_sq_all(&self) -> &[f64] {
        &self.sigma_sq
    }

    pub fn eta_all(&self) -> &[f64] {
        &self.eta
    }
}

/// Default smallest/terminal noise scale `δ² / (d + M₂²)`.
pub fn noise_floor(dim: usize, delta: f64, second_moment: f64) -> f64 {
    delta * delta / (dim as f64 + second_moment)
}

/// Number of levels [`build_vp_schedule`] produces, without allocating.
pub fn vp_schedule_len(sigma1_sq: f64, bar_delta: f64, budget: f64) -> Result<u64> {
    validate_vp_args(sigma1_sq, bar_delta, budget)?;
    let rho1 = sigma1_sq / (1.0 - sigma1_sq);
    let target = (1.0 - bar_delta) / bar_delta;
    if rho1 >= target {
        return Ok(1);
    }
    let growth = (1.0 / budget).ln_1p();
    let steps = ((target / rho1).ln() / growth).ceil();
    if !(steps + 1.0 <= MAX_STEPS as f64) {
        return Err(Error::ScheduleBudget {
            steps: steps + 1.0,
            limit: MAX_STEPS,
        });
    }
    let mut t = steps as u64 + 1;
    // Guard the ceiling against rounding in either direction.
    while t > 1 && odds(rho1, budget, t - 1) >= target {
        t -= 1;
    }
    while odds(rho1, budget, t) < target {
        t += 1;
    }
    Ok(t)
}

fn odds(rho1: f64, budget: f64, t: u64) -> f64 {
    rho1 * ((t - 1) as f64 * (1.0 / budget).ln_1p()).exp()
}

fn validate_vp_args(sigma1_sq: f64, bar_delta: f64, budget: f64) -> Result<()> {
    if !(sigma1_sq > 0.0 && sigma1_sq < 1.0) {
        return Err(Error::invalid(format!("σ₁² must lie in (0, 1), got {sigma1_sq}")));
    }
    if !(bar_delta > 0.0 && bar_delta < 1.0) {
        return Err(Error::invalid(format!(
            "terminal gap must lie in (0, 1), got {bar_delta}"
        )));
    }
    if !(budget >= 1.0 && budget.is_finite()) {
        return Err(Error::invalid(format!("step budget G must be >= 1, got {budget}")));
    }
    Ok(())
}

/// Shortest variance-preserving schedule with `η_t <= σ_t²/G` that starts at
/// `σ_1²` and ends once `1 - σ_T² <= bar_delta`.
pub fn build_vp_schedule(sigma1_sq: f64, bar_delta: f64, budget: f64) -> Result<Schedule> {
    let len = vp_schedule_len(sigma1_sq, bar_delta, budget)?;
    let rho1 = sigma1_sq / (1.0 - sigma1_sq);
    let mut bar_alpha_sq = Vec::with_capacity(len as usize);
    let mut sigma_sq = Vec::with_capacity(len as usize);
    for t in 1..=len {
        let rho = odds(rho1, budget, t);
        bar_alpha_sq.push(1.0 / (1.0 + rho));
        sigma_sq.push(rho / (1.0 + rho));
    }
    // Exact first level, independent of the odds round trip.
    sigma_sq[0] = sigma1_sq;
    bar_alpha_sq[0] = 1.0 - sigma1_sq;
    Ok(Schedule::assemble(bar_alpha_sq, sigma_sq, Some(budget)))
}

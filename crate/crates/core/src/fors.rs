//! First-order rejection sampling.
//!
//! Rejection sampling from `p(x) ∝ q(x) exp(w(x))` where `w(x)` is never
//! evaluated. Instead the caller supplies, for every proposal point `x`, a
//! family of bounded estimators `W` with `E[W | x] = w(x)` and `|W| <= B`.
//! The acceptance coin is built from a Poisson number `J ~ Poisson(2B)` of
//! estimator draws: accepting with probability `∏ (B + W_j) / (2B)` gives an
//! overall acceptance probability of exactly `exp(w(x) - B)`.

use rand::Rng;

use crate::error::{Error, PartialStats, Result};

/// Largest rate handled by a single multiplication run in [`poisson_draw`].
/// Larger rates are split into independent chunks no bigger than this.
const KNUTH_MAX_RATE: f64 = 30.0;

/// Tuning for one rejection loop.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ForsParams {
    /// Clip bound `B`; estimators must take values in `[-B, B]`.
    pub clip_bound: f64,
    /// Safety cap on proposals; the loop terminates a.s. without it.
    pub max_outer_iters: u64,
    pub rng_seed: u64,
}

impl Default for ForsParams {
    fn default() -> Self {
        Self {
            clip_bound: 1.0,
            max_outer_iters: 1_000_000,
            rng_seed: 0,
        }
    }
}

impl ForsParams {
    pub fn new(clip_bound: f64, max_outer_iters: u64, rng_seed: u64) -> Result<Self> {
        let params = Self {
            clip_bound,
            max_outer_iters,
            rng_seed,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_bound > 0.0 && self.clip_bound.is_finite()) {
            return Err(Error::invalid(format!(
                "clip bound must be positive and finite, got {}",
                self.clip_bound
            )));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::invalid("max_outer_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Per-point law of bounded unbiased estimators of a log-tilt.
///
/// Repeated calls with the same `x` must give i.i.d. draws given the rng
/// stream. Implementations may keep counters, hence `&mut self`.
pub trait EstimatorFamily<P: ?Sized, R: Rng + ?Sized> {
    fn draw(&mut self, x: &P, rng: &mut R) -> Result<f64>;
}

impl<P, R, F> EstimatorFamily<P, R> for F
where
    P: ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&P, &mut R) -> Result<f64>,
{
    fn draw(&mut self, x: &P, rng: &mut R) -> Result<f64> {
        self(x, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForsOutcome<P> {
    pub point: P,
    pub outer_iterations: u64,
    /// Total number of estimator draws across all outer iterations.
    pub estimator_draws: u64,
    pub proposal_draws: u64,
}

impl<P> ForsOutcome<P> {
    pub fn map_point<Q>(self, f: impl FnOnce(P) -> Q) -> ForsOutcome<Q> {
        ForsOutcome {
            point: f(self.point),
            outer_iterations: self.outer_iterations,
            estimator_draws: self.estimator_draws,
            proposal_draws: self.proposal_draws,
        }
    }
}

/// Result of one Bernoulli-factory coin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FactoryDecision {
    pub accepted: bool,
    pub estimator_draws: u64,
}

/// Exact `Poisson(rate)` variate.
///
/// Uses Knuth's product-of-uniforms method, splitting rates above 30 into a
/// sum of independent Poisson chunks so `exp(-rate)` never underflows.
pub fn poisson_draw<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<u64> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::invalid(format!(
            "Poisson rate must be finite and non-negative, got {rate}"
        )));
    }
    let mut remaining = rate;
    let mut total = 0u64;
    while remaining > 0.0 {
        let chunk = remaining.min(KNUTH_MAX_RATE);
        remaining -= chunk;
        total += knuth_poisson(chunk, rng);
    }
    Ok(total)
}

fn knuth_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    let threshold = (-rate).exp();
    let mut k = 0u64;
    let mut prod: f64 = rng.random();
    while prod > threshold {
        k += 1;
        prod *= rng.random::<f64>();
    }
    k
}

/// Flips a coin with success probability `exp(E[W | x] - B)`.
///
/// Draws `J ~ Poisson(2B)` and then accepts each of the `J` factors
/// `(B + W_j) / (2B)` in turn, stopping at the first failed factor. Stopping
/// early leaves the law of the coin unchanged.
pub fn factory_accept<P, R, F>(x: &P, family: &mut F, clip_bound: f64, rng: &mut R) -> Result<FactoryDecision>
where
    P: ?Sized,
    R: Rng + ?Sized,
    F: EstimatorFamily<P, R> + ?Sized,
{
    let factors = poisson_draw(2.0 * clip_bound, rng)?;
    let mut draws = 0u64;
    for _ in 0..factors {
        let w = family.draw(x, rng)?;
        draws += 1;
        // NaN fails this check too.
        if !(w.abs() <= clip_bound) {
            return Err(Error::ContractViolation {
                value: w,
                bound: clip_bound,
            });
        }
        let keep = (clip_bound + w) / (2.0 * clip_bound);
        if rng.random::<f64>() >= keep {
            return Ok(FactoryDecision {
                accepted: false,
                estimator_draws: draws,
            });
        }
    }
    Ok(FactoryDecision {
        accepted: true,
        estimator_draws: draws,
    })
}

/// Runs the rejection loop until a proposal is accepted.
///
/// The returned point has density proportional to `q(x) exp(E[W | x])` where
/// `q` is the law of `proposal`.
pub fn fors_sample<P, R, Q, F>(
    mut proposal: Q,
    family: &mut F,
    params: &ForsParams,
    rng: &mut R,
) -> Result<ForsOutcome<P>>
where
    R: Rng + ?Sized,
    Q: FnMut(&mut R) -> Result<P>,
    F: EstimatorFamily<P, R> + ?Sized,
{
    params.validate()?;
    let mut stats = PartialStats::default();
    while stats.outer_iterations < params.max_outer_iters {
        let x = proposal(rng)?;
        stats.outer_iterations += 1;
        let decision = factory_accept(&x, family, params.clip_bound, rng)?;
        stats.estimator_draws += decision.estimator_draws;
        if decision.accepted {
            return Ok(ForsOutcome {
                point: x,
                outer_iterations: stats.outer_iterations,
                estimator_draws: stats.estimator_draws,
                proposal_draws: stats.outer_iterations,
            });
        }
    }
    Err(Error::IterationBudget {
        limit: params.max_outer_iters,
        stats,
    })
}

/// `Clip_B(w)`: the value of `w` clamped to `[-B, B]`.
#[inline]
pub fn clip(w: f64, bound: f64) -> f64 {
    w.clamp(-bound, bound)
}

/// The single-call high-probability bound on estimator draws,
/// `3 B e^{2B} log(2 / δ)`.
pub fn draw_count_bound(clip_bound: f64, delta: f64) -> f64 {
    3.0 * clip_bound * (2.0 * clip_bound).exp() * (2.0 / delta).ln()
}

//! Backward samplers for variance-preserving diffusion models.
//!
//! Every backward step draws `X_t` from the kernel
//! `ρ_t(x | x') ∝ p_t(x) exp(-‖x - x̄_t‖² / 2η_t)` with `x̄_t = x'/α_t` by
//! first-order rejection sampling, using only score queries `s_t ≈ ∇log p_t`.
//! The three [`MethodKind`]s differ in proposal and estimator:
//!
//! | method   | proposal                         | estimator field along the path          |
//! |----------|----------------------------------|-----------------------------------------|
//! | Simple   | `N(x̄, η)`                         | `s(r x + (1-r) x̄)` on the segment       |
//! | DdpmLike | `N(x̄ + η s(x̄), η)`                 | `s(γ) - s(x̄)` on the trigonometric path |
//! | Adaptive | `N(x̄ + η̄ s(x̄), η̄)`, `1/η̄ = 1/η + λ` | `s(γ) - s(x̄) + λ(γ - x̄)`, `λ = 1/σ_t²`  |

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fors::{clip, fors_sample, EstimatorFamily, ForsOutcome, ForsParams};
use crate::rng::{gaussian_vec, substream};
use crate::schedule::{build_vp_schedule, noise_floor, Schedule};
use crate::scores::{perturbed_oracle, GaussianMixture, MarginalMeta, PerturbationMode, ScoreOracle};
use crate::tilt::path_point;
use crate::vecops::{add, all_finite, axpy, dot, scale, sub};

/// Hidden constant used by [`g_for_method`] when none is configured.
pub const DEFAULT_G_CONSTANT: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Simple,
    DdpmLike,
    Adaptive,
}

impl MethodKind {
    pub const ALL: [MethodKind; 3] = [MethodKind::Simple, MethodKind::DdpmLike, MethodKind::Adaptive];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Simple => "simple",
            MethodKind::DdpmLike => "ddpm-like",
            MethodKind::Adaptive => "adaptive",
        }
    }
}

/// Step budget `G` (so that `σ_t²/η_t >= G`) required by each method.
///
/// `l_delta` is only read for [`MethodKind::DdpmLike`] and `d_star` only for
/// [`MethodKind::Adaptive`].
pub fn g_for_method(
    method: MethodKind,
    dim: usize,
    delta: f64,
    l_delta: f64,
    d_star: f64,
    constant: f64,
) -> Result<f64> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(constant > 0.0 && constant.is_finite()) {
        return Err(Error::invalid(format!("constant must be positive, got {constant}")));
    }
    let d = dim as f64;
    let value = match method {
        MethodKind::Simple => {
            let l = (1.0 / delta).ln();
            d * l + l * l
        }
        MethodKind::DdpmLike => {
            if !(l_delta >= 1.0 && l_delta.is_finite()) {
                return Err(Error::invalid(format!("L_δ must be >= 1, got {l_delta}")));
            }
            let l = (d / delta).ln();
            (d * l_delta * l).sqrt() + l_delta * l
        }
        MethodKind::Adaptive => {
            if !(d_star >= 1.0 && d_star.is_finite()) {
                return Err(Error::invalid(format!(
                    "intrinsic dimension must be >= 1, got {d_star}"
                )));
            }
            let l = (d / delta).ln();
            d_star * l + l * l
        }
    };
    Ok(constant * value)
}

/// Hidden constants of the per-method step-size conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepBudget {
    #[serde(default = "default_g_constant")]
    pub constant: f64,
    /// `L_δ` for [`MethodKind::DdpmLike`].
    #[serde(default = "one")]
    pub l_delta: f64,
    /// Intrinsic dimension for [`MethodKind::Adaptive`]; `None` means `d`.
    #[serde(default)]
    pub d_star: Option<f64>,
}

fn default_g_constant() -> f64 {
    DEFAULT_G_CONSTANT
}

fn one() -> f64 {
    1.0
}

impl Default for StepBudget {
    fn default() -> Self {
        Self {
            constant: DEFAULT_G_CONSTANT,
            l_delta: 1.0,
            d_star: None,
        }
    }
}

/// Schedule for sampling `data` at accuracy `delta` with `method`.
///
/// Both `σ_1²` and the terminal gap `1 - σ_T²` are set to `δ²/(d + M₂²)`;
/// `G` comes from [`g_for_method`].
pub fn default_schedule(
    data: &GaussianMixture,
    method: MethodKind,
    delta: f64,
    budget: &StepBudget,
) -> Result<Schedule> {
    let dim = data.dim();
    let g = g_for_method(
        method,
        dim,
        delta,
        budget.l_delta,
        budget.d_star.unwrap_or(dim as f64),
        budget.constant,
    )?
    .max(1.0);
    let floor = noise_floor(dim, delta, data.second_moment());
    build_vp_schedule(floor, floor, g)
}

/// Score oracles `s_1, …, s_T`, one per noise level.
#[derive(Debug, Clone)]
pub struct ScoreBank {
    oracles: Vec<ScoreOracle>,
}

impl ScoreBank {
    pub fn from_oracles(oracles: Vec<ScoreOracle>) -> Self {
        Self { oracles }
    }

    /// Exact scores of every forward marginal of `data`.
    pub fn exact(data: &GaussianMixture, sched: &Schedule) -> Result<Self> {
        (1..=sched.len())
            .map(|t| {
                ScoreOracle::for_marginal(
                    data,
                    MarginalMeta {
                        bar_alpha: sched.bar_alpha(t),
                        sigma_sq: sched.sigma_sq(t),
                    },
                )
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_oracles)
    }

    /// Exact scores plus a deterministic error field of size `eps` at every level.
    pub fn perturbed(data: &GaussianMixture, sched: &Schedule, eps: f64, mode: PerturbationMode) -> Result<Self> {
        let exact = Self::exact(data, sched)?;
        exact
            .oracles
            .iter()
            .map(|o| perturbed_oracle(o, eps, mode))
            .collect::<Result<Vec<_>>>()
            .map(Self::from_oracles)
    }

    /// Same score field at every level (e.g. `s ≡ 0`).
    pub fn constant<F>(len: usize, field: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + Clone + 'static,
    {
        let meta = MarginalMeta {
            bar_alpha: f64::NAN,
            sigma_sq: f64::NAN,
        };
        Self::from_oracles((0..len).map(|_| ScoreOracle::from_fn(field.clone(), meta)).collect())
    }

    pub fn len(&self) -> usize {
        self.oracles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oracles.is_empty()
    }

    /// Oracle for level `t` (1-based).
    pub fn get(&self, t: usize) -> &ScoreOracle {
        &self.oracles[t - 1]
    }

    pub fn total_queries(&self) -> u64 {
        self.oracles.iter().map(ScoreOracle::queries).sum()
    }
}

/// `⟨x - x̄, s(r x + (1 - r) x̄)⟩`, unclipped.
pub fn simple_estimate(score: &ScoreOracle, x: &[f64], xbar: &[f64], r: f64) -> f64 {
    let point: Vec<f64> = x.iter().zip(xbar).map(|(a, b)| r * a + (1.0 - r) * b).collect();
    let s = score.eval(&point);
    dot(&sub(x, xbar), &s)
}

/// `⟨γ̇, s(γ) - s(x̄) + λ(γ - x̄)⟩` on the trigonometric path anchored at `x̄`,
/// unclipped. `λ = 0` gives the DDPM-like estimator.
pub fn path_estimate(
    score: &ScoreOracle,
    x: &[f64],
    xbar: &[f64],
    score_at_xbar: &[f64],
    z: &[f64],
    r: f64,
    lambda: f64,
) -> f64 {
    let (gamma, velocity) = path_point(x, xbar, z, r);
    let s = score.eval(&gamma);
    velocity
        .iter()
        .zip(&s)
        .zip(score_at_xbar)
        .zip(gamma.iter().zip(xbar))
        .map(|(((v, si), sb), (g, xb))| v * (si - sb + lambda * (g - xb)))
        .sum()
}

struct StepEstimator<'a> {
    method: MethodKind,
    score: &'a ScoreOracle,
    xbar: Vec<f64>,
    score_at_xbar: Vec<f64>,
    path_noise_var: f64,
    lambda: f64,
    bound: f64,
    draws: u64,
    clipped: u64,
}

impl<R: Rng + ?Sized> EstimatorFamily<Vec<f64>, R> for StepEstimator<'_> {
    fn draw(&mut self, x: &Vec<f64>, rng: &mut R) -> Result<f64> {
        let r: f64 = rng.random();
        let w = match self.method {
            MethodKind::Simple => simple_estimate(self.score, x, &self.xbar, r),
            MethodKind::DdpmLike | MethodKind::Adaptive => {
                let z = gaussian_vec(x.len(), self.path_noise_var, rng);
                path_estimate(self.score, x, &self.xbar, &self.score_at_xbar, &z, r, self.lambda)
            }
        };
        self.draws += 1;
        if !w.is_finite() {
            return Err(Error::NumericalFailure(format!("non-finite estimator at {x:?}")));
        }
        if w.abs() > self.bound {
            self.clipped += 1;
        }
        Ok(clip(w, self.bound))
    }
}

/// One accepted backward step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub fors: ForsOutcome<Vec<f64>>,
    /// Estimator draws plus proposal-score evaluations.
    pub score_queries: u64,
    pub clipped_draws: u64,
}

/// Draws `X_t` given `X_{t+1} = x_next` for `1 <= t < T`.
pub fn backward_step<R: Rng + ?Sized>(
    x_next: &[f64],
    t: usize,
    method: MethodKind,
    score: &ScoreOracle,
    sched: &Schedule,
    params: &ForsParams,
    rng: &mut R,
) -> Result<StepOutcome> {
    if t == 0 || t >= sched.len() {
        return Err(Error::invalid(format!(
            "backward step index {t} outside 1..{}",
            sched.len()
        )));
    }
    if x_next.is_empty() || !all_finite(x_next) {
        return Err(Error::invalid(format!("backward step {t} got a non-finite state")));
    }
    backward_step_inner(x_next, t, method, score, sched, params, rng)
        .map_err(|e| Error::Step { t, source: Box::new(e) })
}

fn backward_step_inner<R: Rng + ?Sized>(
    x_next: &[f64],
    t: usize,
    method: MethodKind,
    score: &ScoreOracle,
    sched: &Schedule,
    params: &ForsParams,
    rng: &mut R,
) -> Result<StepOutcome> {
    let eta = sched.eta(t);
    let xbar = scale(x_next, 1.0 / sched.alpha(t));
    let (mean, var, score_at_xbar, lambda, extra_queries) = match method {
        MethodKind::Simple => (xbar.clone(), eta, Vec::new(), 0.0, 0),
        MethodKind::DdpmLike => {
            let sb = score.eval(&xbar);
            (axpy(&xbar, eta, &sb), eta, sb, 0.0, 1)
        }
        MethodKind::Adaptive => {
            let lambda = 1.0 / sched.sigma_sq(t);
            let eta_bar = 1.0 / (1.0 / eta + lambda);
            let sb = score.eval(&xbar);
            (axpy(&xbar, eta_bar, &sb), eta_bar, sb, lambda, 1)
        }
    };
    if !all_finite(&mean) {
        return Err(Error::NumericalFailure("non-finite proposal mean".into()));
    }
    let mut estimator = StepEstimator {
        method,
        score,
        xbar,
        score_at_xbar,
        path_noise_var: eta,
        lambda,
        bound: params.clip_bound,
        draws: 0,
        clipped: 0,
    };
    let proposal = |rng: &mut R| Ok(add(&mean, &gaussian_vec(mean.len(), var, rng)));
    let fors = fors_sample(proposal, &mut estimator, params, rng)?;
    Ok(StepOutcome {
        score_queries: fors.estimator_draws + extra_queries,
        clipped_draws: estimator.clipped,
        fors,
    })
}

/// Ancestral DDPM step `N(x̄ + η s(x̄), η I)`; one score query.
pub fn ddpm_step<R: Rng + ?Sized>(
    x_next: &[f64],
    t: usize,
    score: &ScoreOracle,
    sched: &Schedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if t == 0 || t >= sched.len() {
        return Err(Error::invalid(format!("step index {t} outside 1..{}", sched.len())));
    }
    let eta = sched.eta(t);
    let xbar = scale(x_next, 1.0 / sched.alpha(t));
    let s = score.eval(&xbar);
    let mean = axpy(&xbar, eta, &s);
    Ok(add(&mean, &gaussian_vec(mean.len(), eta, rng)))
}

/// One forward transition `X_{t+1} ~ N(α_t X_t, α_t² η_t I)`.
pub fn forward_step<R: Rng + ?Sized>(x: &[f64], t: usize, sched: &Schedule, rng: &mut R) -> Vec<f64> {
    let a = sched.alpha(t);
    let noise = gaussian_vec(x.len(), a * a * sched.eta(t), rng);
    axpy(&noise, a, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSummary {
    pub t: usize,
    pub outer_iterations: u64,
    pub estimator_draws: u64,
    pub score_queries: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChainOptions {
    pub store_trajectory: bool,
    pub record_steps: bool,
}

/// Output of one backward chain; counts are sums over its steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub x1: Vec<f64>,
    /// `X_T, X_{T-1}, …, X_1` when requested.
    pub trajectory: Option<Vec<Vec<f64>>>,
    pub score_queries: u64,
    pub estimator_draws: u64,
    pub outer_iterations: u64,
    pub clipped_draws: u64,
    pub per_step: Option<Vec<StepSummary>>,
}

/// Which backward kernel a chain uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    Fors(MethodKind),
    /// Plain ancestral sampling, for comparison only.
    DdpmBaseline,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Sampler::Fors(m) => m.name(),
            Sampler::DdpmBaseline => "ddpm-baseline",
        }
    }
}

/// Runs one chain from `X_T ~ N(0, σ_T² I)` down to `X_1`.
pub fn sample_chain<R: Rng + ?Sized>(
    sampler: Sampler,
    bank: &ScoreBank,
    sched: &Schedule,
    dim: usize,
    params: &ForsParams,
    options: ChainOptions,
    rng: &mut R,
) -> Result<ChainRun> {
    if bank.len() < sched.len() {
        return Err(Error::invalid(format!(
            "score bank covers {} levels, schedule has {}",
            bank.len(),
            sched.len()
        )));
    }
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let big_t = sched.len();
    let mut x = gaussian_vec(dim, sched.sigma_sq(big_t), rng);
    let mut run = ChainRun {
        x1: Vec::new(),
        trajectory: options.store_trajectory.then(|| vec![x.clone()]),
        score_queries: 0,
        estimator_draws: 0,
        outer_iterations: 0,
        clipped_draws: 0,
        per_step: options.record_steps.then(Vec::new),
    };
    for t in (1..big_t).rev() {
        let summary = match sampler {
            Sampler::Fors(method) => {
                let step = backward_step(&x, t, method, bank.get(t), sched, params, rng)?;
                x = step.fors.point;
                run.clipped_draws += step.clipped_draws;
                StepSummary {
                    t,
                    outer_iterations: step.fors.outer_iterations,
                    estimator_draws: step.fors.estimator_draws,
                    score_queries: step.score_queries,
                }
            }
            Sampler::DdpmBaseline => {
                x = ddpm_step(&x, t, bank.get(t), sched, rng)?;
                StepSummary {
                    t,
                    outer_iterations: 1,
                    estimator_draws: 0,
                    score_queries: 1,
                }
            }
        };
        run.score_queries += summary.score_queries;
        run.estimator_draws += summary.estimator_draws;
        run.outer_iterations += summary.outer_iterations;
        if let Some(traj) = run.trajectory.as_mut() {
            traj.push(x.clone());
        }
        if let Some(steps) = run.per_step.as_mut() {
            steps.push(summary);
        }
    }
    run.x1 = x;
    Ok(run)
}

/// Runs `n_chains` independent chains in parallel; chain `i` uses substream
/// `i` of `seed`, so results do not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn sample_chains(
    sampler: Sampler,
    bank: &ScoreBank,
    sched: &Schedule,
    dim: usize,
    params: &ForsParams,
    options: ChainOptions,
    n_chains: usize,
    seed: u64,
) -> Result<Vec<ChainRun>> {
    (0..n_chains)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            sample_chain(sampler, bank, sched, dim, params, options, &mut rng)
        })
        .collect()
}

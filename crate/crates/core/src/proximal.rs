//! The proximal sampler for `μ ∝ exp(-f)`, with the restricted Gaussian
//! oracle implemented by gradient-only Gaussian-tilt sampling.
//!
//! Each iteration is a Gibbs sweep on `exp(-f(x) - ‖y - x‖²/2η)`:
//! `Y ~ N(X, ηI)` followed by `X ~ RGO(y) ∝ exp(-f(x) - ‖y - x‖²/2η)`.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fors::ForsParams;
use crate::rng::{gaussian_vec, substream};
use crate::tilt::{eta_max, sample_tilt, AnchorPolicy, HolderSpec, TiltProblem, TiltSample, DEFAULT_ETA_CONSTANT};
use crate::vecops::{add, all_finite, axpy, norm, scale, sub};

pub type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ProxFn = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;

/// Built-in potentials, selectable by name from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Potential {
    /// `f ≡ 0`
    Constant,
    /// `f(x) = λ‖x‖²/2`
    Quadratic { lambda: f64 },
    /// `f(x) = a Σ log cosh(x_i) + λ‖x‖²/2`
    LogcoshQuadratic { a: f64, lambda: f64 },
}

impl Potential {
    pub fn value(&self, x: &[f64]) -> f64 {
        let sq: f64 = x.iter().map(|v| v * v).sum();
        match *self {
            Potential::Constant => 0.0,
            Potential::Quadratic { lambda } => 0.5 * lambda * sq,
            Potential::LogcoshQuadratic { a, lambda } => {
                a * x.iter().map(|v| log_cosh(*v)).sum::<f64>() + 0.5 * lambda * sq
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match *self {
            Potential::Constant => vec![0.0; x.len()],
            Potential::Quadratic { lambda } => scale(x, lambda),
            Potential::LogcoshQuadratic { a, lambda } => x.iter().map(|v| a * v.tanh() + lambda * v).collect(),
        }
    }

    /// Gradient-Lipschitz constant (all built-ins are smooth).
    pub fn holder(&self) -> Result<HolderSpec> {
        match *self {
            Potential::Constant => HolderSpec::smooth(0.0),
            Potential::Quadratic { lambda } => HolderSpec::smooth(lambda.abs()),
            Potential::LogcoshQuadratic { a, lambda } => HolderSpec::smooth(a.abs() + lambda.abs()),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Potential::Constant => true,
            Potential::Quadratic { lambda } => lambda >= 0.0 && lambda.is_finite(),
            Potential::LogcoshQuadratic { a, lambda } => {
                a >= 0.0 && lambda >= 0.0 && a.is_finite() && lambda.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("potential {self:?} is not convex")))
        }
    }
}

fn log_cosh(x: f64) -> f64 {
    let ax = x.abs();
    ax + (-2.0 * ax).exp().ln_1p() - std::f64::consts::LN_2
}

/// A potential `f` known through its gradient.
#[derive(Clone)]
pub struct LogConcaveTarget {
    grad: GradFn,
    dim: usize,
    holder: HolderSpec,
    exact_prox: Option<ProxFn>,
}

impl std::fmt::Debug for LogConcaveTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogConcaveTarget")
            .field("dim", &self.dim)
            .field("holder", &self.holder)
            .field("exact_prox", &self.exact_prox.is_some())
            .finish_non_exhaustive()
    }
}

impl LogConcaveTarget {
    pub fn new<G>(dim: usize, holder: HolderSpec, grad: G) -> Result<Self>
    where
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let holder = HolderSpec::new(holder.exponent, holder.constant)?;
        Ok(Self {
            grad: Arc::new(grad),
            dim,
            holder,
            exact_prox: None,
        })
    }

    /// Closed-form `prox_{ηf}(x₀)`; bypasses [`prox_solve`] when present.
    pub fn with_exact_prox<P>(mut self, prox: P) -> Self
    where
        P: Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    {
        self.exact_prox = Some(Arc::new(prox));
        self
    }

    pub fn from_potential(potential: Potential, dim: usize) -> Result<Self> {
        potential.validate()?;
        let target = Self::new(dim, potential.holder()?, move |x: &[f64]| potential.gradient(x))?;
        Ok(match potential {
            Potential::Constant => target.with_exact_prox(|x0: &[f64], _| x0.to_vec()),
            Potential::Quadratic { lambda } => {
                target.with_exact_prox(move |x0: &[f64], eta| scale(x0, 1.0 / (1.0 + eta * lambda)))
            }
            Potential::LogcoshQuadratic { .. } => target,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn holder(&self) -> HolderSpec {
        self.holder
    }

    pub fn has_exact_prox(&self) -> bool {
        self.exact_prox.is_some()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.grad)(x)
    }

    /// `prox_{ηf}(x₀)`, in closed form when available and otherwise by
    /// [`prox_solve`] (whose result is returned alongside).
    pub fn prox_point(&self, x0: &[f64], eta: f64, config: &ProxConfig) -> Result<(Vec<f64>, Option<ProxResult>)> {
        match &self.exact_prox {
            Some(p) => Ok((p(x0, eta), None)),
            None => {
                let tol = config.prox_tol.unwrap_or_else(|| default_prox_tol(self.dim, eta));
                let res = prox_solve(self, x0, eta, tol, config.prox_max_iters)?;
                Ok((res.x_plus.clone(), Some(res)))
            }
        }
    }

    /// Spot-checks the declared Hölder bound on `pairs` random pairs drawn
    /// from `N(0, scale² I)`, allowing 1% slack.
    pub fn check_holder<R: Rng + ?Sized>(&self, pairs: usize, spread: f64, rng: &mut R) -> bool {
        let HolderSpec { exponent, constant } = self.holder;
        (0..pairs).all(|_| {
            let x = gaussian_vec(self.dim, spread * spread, rng);
            let y = gaussian_vec(self.dim, spread * spread, rng);
            let lhs = norm(&sub(&self.gradient(&x), &self.gradient(&y)));
            lhs <= 1.01 * constant * norm(&sub(&x, &y)).powf(exponent) + 1e-12
        })
    }
}

/// An approximate proximal point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult {
    pub x_plus: Vec<f64>,
    /// `‖x₀ - η∇f(x₊) - x₊‖`, evaluated at the returned `x_plus`.
    pub residual: f64,
    /// Gradient evaluations spent.
    pub iterations: usize,
    pub converged: bool,
}

const DIVERGENCE_WINDOW: usize = 50;
const DIVERGENCE_FACTOR: f64 = 10.0;

/// Default prox tolerance `½√(dη)`.
pub fn default_prox_tol(dim: usize, eta: f64) -> f64 {
    0.5 * (dim as f64 * eta).sqrt()
}

/// Fixed-point iteration `x ← x₀ - η∇f(x)` toward `prox_{ηf}(x₀)`.
///
/// Converges geometrically when `η β < 1` for a `β`-smooth `f`. If
/// `max_iters` runs out, the best iterate is returned with
/// `converged = false`.
pub fn prox_solve(target: &LogConcaveTarget, x0: &[f64], eta: f64, tol: f64, max_iters: usize) -> Result<ProxResult> {
    if x0.len() != target.dim {
        return Err(Error::invalid(format!(
            "prox start has dimension {}, target has {}",
            x0.len(),
            target.dim
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) || !(tol > 0.0) || max_iters == 0 {
        return Err(Error::invalid("prox needs η > 0, tol > 0 and max_iters >= 1"));
    }
    let mut x = x0.to_vec();
    let mut history: Vec<f64> = Vec::with_capacity(max_iters.min(1024));
    let mut best: Option<(Vec<f64>, f64)> = None;
    for k in 1..=max_iters {
        let g = target.gradient(&x);
        if !all_finite(&g) {
            return Err(Error::NumericalFailure(format!("non-finite gradient at {x:?}")));
        }
        let next = axpy(x0, -eta, &g);
        let residual = norm(&sub(&next, &x));
        if best.as_ref().is_none_or(|(_, r)| residual < *r) {
            best = Some((x.clone(), residual));
        }
        if residual <= tol {
            return Ok(ProxResult {
                x_plus: x,
                residual,
                iterations: k,
                converged: true,
            });
        }
        history.push(residual);
        if history.len() > DIVERGENCE_WINDOW {
            let earlier = history[history.len() - 1 - DIVERGENCE_WINDOW];
            if residual > DIVERGENCE_FACTOR * earlier {
                return Err(Error::OptimizationFailure(format!(
                    "prox iteration diverging: residual {residual:.3e} after {k} steps, \
                     {earlier:.3e} fifty steps earlier"
                )));
            }
        }
        x = next;
    }
    let (x_plus, residual) = best.expect("at least one iteration");
    log::warn!("prox solve stopped after {max_iters} iterations with residual {residual:.3e}");
    Ok(ProxResult {
        x_plus,
        residual,
        iterations: max_iters,
        converged: false,
    })
}

/// Knobs shared by [`rgo_sample`] and [`proximal_sampler`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxConfig {
    /// Accuracy target used for the step-size check.
    pub delta: f64,
    /// Hidden constant of the step-size rule.
    pub eta_constant: f64,
    /// Prox tolerance; `None` means `½√(dη)`.
    pub prox_tol: Option<f64>,
    pub prox_max_iters: usize,
    pub anchor_policy: AnchorPolicy,
}

impl Default for ProxConfig {
    fn default() -> Self {
        Self {
            delta: 0.01,
            eta_constant: DEFAULT_ETA_CONSTANT,
            prox_tol: None,
            prox_max_iters: 10_000,
            anchor_policy: AnchorPolicy::Warn,
        }
    }
}

/// Warns when `eta` exceeds the step-size rule; returns whether it is within.
pub fn check_step_size(target: &LogConcaveTarget, eta: f64, config: &ProxConfig) -> Result<bool> {
    let limit = eta_max(&target.holder, target.dim, config.delta, config.eta_constant)?;
    if eta > limit {
        log::warn!("η = {eta} exceeds the step-size rule's {limit:.4e}; clipping may bias the RGO");
        return Ok(false);
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgoSample {
    pub tilt: TiltSample,
    pub prox: Option<ProxResult>,
    /// Prox iterations plus tilt-sampling queries.
    pub gradient_queries: u64,
}

/// One draw from `RGO(y) ∝ exp(-f(x) - ‖y - x‖²/2η)`.
pub fn rgo_sample<R: Rng + ?Sized>(
    target: &LogConcaveTarget,
    y: &[f64],
    eta: f64,
    params: &ForsParams,
    config: &ProxConfig,
    rng: &mut R,
) -> Result<RgoSample> {
    check_step_size(target, eta, config)?;
    rgo_inner(target, y, eta, params, config, rng)
}

fn rgo_inner<R: Rng + ?Sized>(
    target: &LogConcaveTarget,
    y: &[f64],
    eta: f64,
    params: &ForsParams,
    config: &ProxConfig,
    rng: &mut R,
) -> Result<RgoSample> {
    let (x_plus, prox) = target.prox_point(y, eta, config)?;
    let grad = &*target.grad;
    let problem = TiltProblem::new(grad, y.to_vec(), eta, x_plus)?.with_anchor_policy(config.anchor_policy);
    let tilt = sample_tilt(&problem, params, rng)?;
    let prox_queries = prox.as_ref().map_or(0, |p| p.iterations as u64);
    Ok(RgoSample {
        gradient_queries: tilt.gradient_queries + prox_queries,
        tilt,
        prox,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProxReport {
    pub iterations: usize,
    pub gradient_queries: u64,
    pub estimator_draws: u64,
    pub outer_iterations: u64,
    pub clipped_draws: u64,
    pub prox_iterations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxChain {
    /// Kept states `X_{n+1}` after burn-in and thinning.
    pub samples: Vec<Vec<f64>>,
    pub report: ProxReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLayout {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

/// Runs `layout.iterations` proximal-sampler sweeps from `x_init`.
pub fn proximal_sampler<R: Rng + ?Sized>(
    target: &LogConcaveTarget,
    eta: f64,
    layout: ChainLayout,
    x_init: &[f64],
    params: &ForsParams,
    config: &ProxConfig,
    rng: &mut R,
) -> Result<ProxChain> {
    if layout.iterations == 0 || layout.thin == 0 {
        return Err(Error::invalid("proximal sampler needs iterations >= 1 and thin >= 1"));
    }
    if x_init.len() != target.dim || !all_finite(x_init) {
        return Err(Error::invalid(
            "initial state must be a finite vector of the target's dimension",
        ));
    }
    check_step_size(target, eta, config)?;
    sweep(target, eta, layout, x_init, params, config, rng)
}

fn sweep<R: Rng + ?Sized>(
    target: &LogConcaveTarget,
    eta: f64,
    layout: ChainLayout,
    x_init: &[f64],
    params: &ForsParams,
    config: &ProxConfig,
    rng: &mut R,
) -> Result<ProxChain> {
    let mut x = x_init.to_vec();
    let mut report = ProxReport::default();
    let mut samples = Vec::with_capacity(layout.iterations.saturating_sub(layout.burn_in) / layout.thin + 1);
    for n in 0..layout.iterations {
        let y = add(&x, &gaussian_vec(target.dim, eta, rng));
        let draw = rgo_inner(target, &y, eta, params, config, rng)
            .map_err(|e| Error::ProxIteration { n, source: Box::new(e) })?;
        report.gradient_queries += draw.gradient_queries;
        report.estimator_draws += draw.tilt.outcome.estimator_draws;
        report.outer_iterations += draw.tilt.outcome.outer_iterations;
        report.clipped_draws += draw.tilt.clipped_draws;
        report.prox_iterations += draw.prox.as_ref().map_or(0, |p| p.iterations as u64);
        x = draw.tilt.outcome.point;
        if n >= layout.burn_in && (n - layout.burn_in).is_multiple_of(layout.thin) {
            samples.push(x.clone());
        }
    }
    report.iterations = layout.iterations;
    Ok(ProxChain { samples, report })
}

/// Independent chains in parallel, chain `i` on substream `i` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn proximal_chains(
    target: &LogConcaveTarget,
    eta: f64,
    layout: ChainLayout,
    x_init: &[f64],
    params: &ForsParams,
    config: &ProxConfig,
    n_chains: usize,
    seed: u64,
) -> Result<Vec<ProxChain>> {
    if n_chains == 0 {
        return Ok(Vec::new());
    }
    // One validation and step-size warning for the whole batch.
    let mut rng = substream(seed, 0);
    let first = proximal_sampler(target, eta, layout, x_init, params, config, &mut rng)?;
    let rest: Vec<ProxChain> = (1..n_chains)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            sweep(target, eta, layout, x_init, params, config, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(std::iter::once(first).chain(rest).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prox_of_quadratic_reaches_closed_form() {
        let lambda = 2.5;
        let eta = 0.2; // ηλ = 0.5
        let target = LogConcaveTarget::new(2, HolderSpec::smooth(lambda).unwrap(), move |x: &[f64]| {
            scale(x, lambda)
        })
        .unwrap();
        let x0 = [3.0, -1.5];
        let res = prox_solve(&target, &x0, eta, 1e-12, 200).unwrap();
        assert!(res.converged);
        for i in 0..2 {
            assert!((res.x_plus[i] - x0[i] / (1.0 + eta * lambda)).abs() < 1e-10);
        }
        let g = target.gradient(&res.x_plus);
        let recomputed = norm(&sub(&axpy(&x0, -eta, &g), &res.x_plus));
        assert_eq!(recomputed, res.residual);
    }

    #[test]
    fn prox_of_zero_gradient_is_immediate() {
        let target = LogConcaveTarget::from_potential(Potential::Constant, 3).unwrap();
        let res = prox_solve(&target, &[1.0, 2.0, 3.0], 0.7, 1e-9, 10).unwrap();
        assert_eq!(res.iterations, 1);
        assert_eq!(res.x_plus, vec![1.0, 2.0, 3.0]);
        assert_eq!(res.residual, 0.0);
    }

    #[test]
    fn prox_of_logcosh_quadratic() {
        let target = LogConcaveTarget::from_potential(Potential::LogcoshQuadratic { a: 1.0, lambda: 1.0 }, 4).unwrap();
        let res = prox_solve(&target, &[2.0, -1.0, 0.3, 5.0], 0.1, 1e-8, 500).unwrap();
        assert!(res.converged);
        assert!(res.residual <= 1e-8);
    }

    #[test]
    fn prox_detects_divergence() {
        // ηβ = 3: the fixed-point map expands.
        let target = LogConcaveTarget::new(1, HolderSpec::smooth(3.0).unwrap(), |x: &[f64]| scale(x, 3.0)).unwrap();
        let err = prox_solve(&target, &[1.0], 1.0, 1e-12, 500).unwrap_err();
        assert!(matches!(err, Error::OptimizationFailure(_)));
    }

    #[test]
    fn prox_budget_exhaustion_returns_best() {
        let target = LogConcaveTarget::from_potential(Potential::Quadratic { lambda: 1.0 }, 1).unwrap();
        let res = prox_solve(&target, &[10.0], 0.9, 1e-14, 3).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 3);
    }

    #[test]
    fn holder_spot_check() {
        let mut rng = substream(41, 0);
        let good = LogConcaveTarget::from_potential(Potential::LogcoshQuadratic { a: 1.0, lambda: 1.0 }, 3).unwrap();
        assert!(good.check_holder(100, 2.0, &mut rng));
        let lying = LogConcaveTarget::new(3, HolderSpec::smooth(0.5).unwrap(), |x: &[f64]| scale(x, 2.0)).unwrap();
        assert!(!lying.check_holder(100, 2.0, &mut rng));
    }

    #[test]
    fn log_cosh_is_stable() {
        assert!((log_cosh(0.3) - 0.3f64.cosh().ln()).abs() < 1e-15);
        assert!((log_cosh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn gradient_queries_add_up() {
        let target = LogConcaveTarget::from_potential(Potential::LogcoshQuadratic { a: 1.0, lambda: 1.0 }, 2).unwrap();
        let mut rng = substream(42, 0);
        let layout = ChainLayout {
            iterations: 50,
            burn_in: 10,
            thin: 4,
        };
        let chain = proximal_sampler(
            &target,
            0.1,
            layout,
            &[1.0, 1.0],
            &ForsParams::default(),
            &ProxConfig::default(),
            &mut rng,
        )
        .unwrap();
        let r = chain.report;
        assert_eq!(chain.samples.len(), 10);
        assert_eq!(r.gradient_queries, r.estimator_draws + 50 + r.prox_iterations);
    }

    #[test]
    fn bad_layout_rejected() {
        let target = LogConcaveTarget::from_potential(Potential::Constant, 1).unwrap();
        let mut rng = substream(43, 0);
        let layout = ChainLayout {
            iterations: 0,
            burn_in: 0,
            thin: 1,
        };
        assert!(proximal_sampler(
            &target,
            0.1,
            layout,
            &[0.0],
            &ForsParams::default(),
            &ProxConfig::default(),
            &mut rng
        )
        .is_err());
    }
}

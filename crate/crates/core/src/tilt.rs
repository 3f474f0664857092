//! Gaussian tilts `ν(x) ∝ exp(-f(x) - ‖x - x₀‖² / 2η)` sampled with
//! gradient queries of `f` only.
//!
//! The proposal is `N(x̂, ηI)` with `x̂ = x₀ - η∇f(x₊)` for a prox anchor
//! `x₊ ≈ prox_{ηf}(x₀)`. The log-ratio between target and proposal is
//! written as a path integral along the trigonometric path
//!
//! ```text
//! γ_r = sin(πr/2)·x + (1 - sin(πr/2))·x̂ + cos(πr/2)·z,   z ~ N(0, ηI)
//! ```
//!
//! which starts at `x̂ + z` (independent of `x`) and ends at `x`. A single
//! draw of `(r, z)` then yields the unbiased estimator
//! `⟨γ̇_r, ∇f(x₊) - ∇f(γ_r)⟩`, clipped to `[-B, B]` before it is fed to
//! [`fors_sample`](crate::fors::fors_sample).

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fors::{clip, fors_sample, EstimatorFamily, ForsOutcome, ForsParams};
use crate::rng::gaussian_vec;
use crate::vecops::{all_finite, axpy, norm, sub};

/// Hidden constant used by [`eta_max`] when none is configured.
pub const DEFAULT_ETA_CONSTANT: f64 = 64.0;

/// Hölder continuity of the gradient:
/// `‖∇f(x) - ∇f(y)‖ <= constant · ‖x - y‖^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderSpec {
    pub exponent: f64,
    pub constant: f64,
}

impl HolderSpec {
    pub fn new(exponent: f64, constant: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&exponent) {
            return Err(Error::invalid(format!(
                "Hölder exponent must lie in [0, 1], got {exponent}"
            )));
        }
        if !(constant >= 0.0 && constant.is_finite()) {
            return Err(Error::invalid(format!(
                "Hölder constant must be finite and non-negative, got {constant}"
            )));
        }
        Ok(Self { exponent, constant })
    }

    /// Gradient-Lipschitz (smooth) potentials.
    pub fn smooth(constant: f64) -> Result<Self> {
        Self::new(1.0, constant)
    }
}

/// Largest tilt width `η` allowed by the step-size rule
///
/// `1/η = C · (β²·d^s·log(1/δ) + s·β²·d^(s-1)·log²(1/δ))^(1/(1+s))`.
///
/// Returns `+∞` when `β = 0`; callers must cap it themselves.
pub fn eta_max(spec: &HolderSpec, dim: usize, delta: f64, constant: f64) -> Result<f64> {
    let spec = HolderSpec::new(spec.exponent, spec.constant)?;
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(constant > 0.0 && constant.is_finite()) {
        return Err(Error::invalid(format!(
            "step-size constant must be positive, got {constant}"
        )));
    }
    if spec.constant == 0.0 {
        return Ok(f64::INFINITY);
    }
    let s = spec.exponent;
    let beta_sq = spec.constant * spec.constant;
    let d = dim as f64;
    let log_inv = (1.0 / delta).ln();
    let inner = beta_sq * d.powf(s) * log_inv + s * beta_sq * d.powf(s - 1.0) * log_inv * log_inv;
    Ok(1.0 / (constant * inner.powf(1.0 / (1.0 + s))))
}

/// Position and velocity of the trigonometric path at time `r ∈ [0, 1]`.
///
/// `γ_1 = x` and `γ_0 = anchor + z`.
pub fn path_eval(x: &[f64], anchor: &[f64], z: &[f64], r: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::invalid(format!("path time must lie in [0, 1], got {r}")));
    }
    if x.len() != anchor.len() || x.len() != z.len() {
        return Err(Error::invalid("path vectors must share one dimension"));
    }
    Ok(path_point(x, anchor, z, r))
}

pub(crate) fn path_point(x: &[f64], anchor: &[f64], z: &[f64], r: f64) -> (Vec<f64>, Vec<f64>) {
    let (sin, cos) = (FRAC_PI_2 * r).sin_cos();
    let (a, b) = (sin, cos);
    let (da, db) = (FRAC_PI_2 * cos, -FRAC_PI_2 * sin);
    let mut gamma = Vec::with_capacity(x.len());
    let mut velocity = Vec::with_capacity(x.len());
    for ((&xi, &hi), &zi) in x.iter().zip(anchor).zip(z) {
        gamma.push(a * xi + (1.0 - a) * hi + b * zi);
        velocity.push(da * (xi - hi) + db * zi);
    }
    (gamma, velocity)
}

/// What to do when the prox anchor is too far from a fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorPolicy {
    #[default]
    Warn,
    Strict,
}

/// A Gaussian-tilt target together with its prox anchor.
#[derive(Clone)]
pub struct TiltProblem<G> {
    grad_f: G,
    x0: Vec<f64>,
    eta: f64,
    x_plus: Vec<f64>,
    pub anchor_policy: AnchorPolicy,
}

impl<G> std::fmt::Debug for TiltProblem<G> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TiltProblem")
            .field("x0", &self.x0)
            .field("eta", &self.eta)
            .field("x_plus", &self.x_plus)
            .field("anchor_policy", &self.anchor_policy)
            .finish_non_exhaustive()
    }
}

impl<G> TiltProblem<G>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    pub fn new(grad_f: G, x0: Vec<f64>, eta: f64, x_plus: Vec<f64>) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("tilt width must be positive, got {eta}")));
        }
        if x0.is_empty() || x0.len() != x_plus.len() {
            return Err(Error::invalid("tilt center and anchor must share a positive dimension"));
        }
        if !all_finite(&x0) || !all_finite(&x_plus) {
            return Err(Error::invalid("tilt center and anchor must be finite"));
        }
        Ok(Self {
            grad_f,
            x0,
            eta,
            x_plus,
            anchor_policy: AnchorPolicy::Warn,
        })
    }

    pub fn with_anchor_policy(mut self, policy: AnchorPolicy) -> Self {
        self.anchor_policy = policy;
        self
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn x_plus(&self) -> &[f64] {
        &self.x_plus
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = (self.grad_f)(x);
        if g.len() != x.len() {
            return Err(Error::invalid(format!(
                "gradient oracle returned {} components for a {}-vector",
                g.len(),
                x.len()
            )));
        }
        if !all_finite(&g) {
            return Err(Error::NumericalFailure(format!("non-finite gradient at {x:?}")));
        }
        Ok(g)
    }

    /// `√(dη)`, the allowed anchor residual.
    pub fn anchor_budget(&self) -> f64 {
        (self.dim() as f64 * self.eta).sqrt()
    }
}

/// Clipped path estimator for one [`TiltProblem`]; `∇f(x₊)` is computed once.
pub struct TiltEstimator<'a, G> {
    problem: &'a TiltProblem<G>,
    grad_plus: Vec<f64>,
    proposal_mean: Vec<f64>,
    clip_bound: f64,
    pub draws: u64,
    pub clipped: u64,
}

impl<'a, G> TiltEstimator<'a, G>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    /// Costs one gradient query, at `x₊`.
    pub fn new(problem: &'a TiltProblem<G>, clip_bound: f64) -> Result<Self> {
        if !(clip_bound > 0.0 && clip_bound.is_finite()) {
            return Err(Error::invalid(format!("clip bound must be positive, got {clip_bound}")));
        }
        let grad_plus = problem.gradient(&problem.x_plus)?;
        let proposal_mean = axpy(&problem.x0, -problem.eta, &grad_plus);
        Ok(Self {
            problem,
            grad_plus,
            proposal_mean,
            clip_bound,
            draws: 0,
            clipped: 0,
        })
    }

    /// `x̂ = x₀ - η∇f(x₊)`, the proposal mean and path anchor.
    pub fn proposal_mean(&self) -> &[f64] {
        &self.proposal_mean
    }

    pub fn grad_plus(&self) -> &[f64] {
        &self.grad_plus
    }

    /// `‖x₀ - η∇f(x₊) - x₊‖`
    pub fn anchor_residual(&self) -> f64 {
        norm(&sub(&self.proposal_mean, &self.problem.x_plus))
    }

    /// Unclipped estimator for a fixed `(r, z)`.
    pub fn raw_estimate(&self, x: &[f64], z: &[f64], r: f64) -> Result<f64> {
        let (gamma, velocity) = path_point(x, &self.proposal_mean, z, r);
        let g = self.problem.gradient(&gamma)?;
        Ok(velocity
            .iter()
            .zip(self.grad_plus.iter().zip(&g))
            .map(|(v, (gp, gg))| v * (gp - gg))
            .sum())
    }
}

impl<G, R> EstimatorFamily<Vec<f64>, R> for TiltEstimator<'_, G>
where
    G: Fn(&[f64]) -> Vec<f64>,
    R: Rng + ?Sized,
{
    fn draw(&mut self, x: &Vec<f64>, rng: &mut R) -> Result<f64> {
        let r: f64 = rng.random();
        let z = gaussian_vec(x.len(), self.problem.eta, rng);
        let w = self.raw_estimate(x, &z, r)?;
        self.draws += 1;
        if w.abs() > self.clip_bound {
            self.clipped += 1;
        }
        Ok(clip(w, self.clip_bound))
    }
}

/// One accepted draw from a Gaussian tilt.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltSample {
    pub outcome: ForsOutcome<Vec<f64>>,
    /// Estimator draws plus the cached query at the anchor.
    pub gradient_queries: u64,
    pub clipped_draws: u64,
    pub anchor_residual: f64,
}

/// Draws one point from the tilt by first-order rejection sampling with
/// proposal `N(x̂, ηI)`.
pub fn sample_tilt<G, R>(problem: &TiltProblem<G>, params: &ForsParams, rng: &mut R) -> Result<TiltSample>
where
    G: Fn(&[f64]) -> Vec<f64>,
    R: Rng + ?Sized,
{
    params.validate()?;
    let mut estimator = TiltEstimator::new(problem, params.clip_bound)?;
    let residual = estimator.anchor_residual();
    let budget = problem.anchor_budget();
    if residual > budget {
        match problem.anchor_policy {
            AnchorPolicy::Strict => return Err(Error::AnchorViolation { residual, budget }),
            AnchorPolicy::Warn => log::warn!("prox anchor residual {residual:.3e} exceeds sqrt(d*eta) = {budget:.3e}"),
        }
    }
    let mean = estimator.proposal_mean.clone();
    let eta = problem.eta;
    let proposal = |rng: &mut R| Ok(axpy(&mean, 1.0, &gaussian_vec(mean.len(), eta, rng)));
    let outcome = fors_sample(proposal, &mut estimator, params, rng)?;
    debug_assert_eq!(outcome.estimator_draws, estimator.draws);
    Ok(TiltSample {
        gradient_queries: outcome.estimator_draws + 1,
        clipped_draws: estimator.clipped,
        anchor_residual: residual,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn path_endpoints() {
        let x = [1.0, -2.0, 0.5];
        let h = [0.3, 0.1, -0.7];
        let z = [0.2, 0.4, -1.1];
        let (g1, v1) = path_eval(&x, &h, &z, 1.0).unwrap();
        for i in 0..3 {
            assert!((g1[i] - x[i]).abs() < 1e-15);
            assert!((v1[i] + FRAC_PI_2 * z[i]).abs() < 1e-15);
        }
        let (g0, v0) = path_eval(&x, &h, &z, 0.0).unwrap();
        for i in 0..3 {
            assert_eq!(g0[i], h[i] + z[i]);
            assert!((v0[i] - FRAC_PI_2 * (x[i] - h[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn path_rejects_bad_time() {
        assert!(path_eval(&[0.0], &[0.0], &[0.0], 1.5).is_err());
        assert!(path_eval(&[0.0], &[0.0], &[0.0], -0.1).is_err());
        assert!(path_eval(&[0.0], &[0.0, 1.0], &[0.0], 0.5).is_err());
    }

    #[test]
    fn eta_max_lipschitz_case() {
        // s = 0: 1/η = C β² log(1/δ)
        let spec = HolderSpec::new(0.0, 2.0).unwrap();
        let eta = eta_max(&spec, 50, 0.01, 3.0).unwrap();
        let expect = 1.0 / (3.0 * 4.0 * 100f64.ln());
        assert!((eta - expect).abs() < 1e-15 * expect.abs().max(1.0));
    }

    #[test]
    fn eta_max_hand_value() {
        // s = 1, β = 1, d = 4, δ = 0.1, C = 1: 1/√(4 ln10 + ln²10)
        let spec = HolderSpec::smooth(1.0).unwrap();
        let eta = eta_max(&spec, 4, 0.1, 1.0).unwrap();
        let l = 10f64.ln();
        let expect = 1.0 / (4.0 * l + l * l).sqrt();
        assert!((eta - expect).abs() < 1e-14);
        assert!((eta - 0.26250).abs() < 1e-4);
    }

    #[test]
    fn eta_max_zero_constant_is_unbounded() {
        let spec = HolderSpec::smooth(0.0).unwrap();
        assert_eq!(eta_max(&spec, 3, 0.1, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn eta_max_validation() {
        let spec = HolderSpec::smooth(1.0).unwrap();
        assert!(eta_max(&spec, 3, 0.0, 1.0).is_err());
        assert!(eta_max(&spec, 3, 1.0, 1.0).is_err());
        assert!(eta_max(&spec, 0, 0.5, 1.0).is_err());
        assert!(eta_max(&spec, 3, 0.5, 0.0).is_err());
        assert!(HolderSpec::new(1.5, 1.0).is_err());
        assert!(HolderSpec::new(0.5, -1.0).is_err());
    }

    #[test]
    fn linear_potential_gives_zero_estimator() {
        let grad = |x: &[f64]| vec![3.0; x.len()];
        let problem = TiltProblem::new(grad, vec![0.5, -0.5], 0.1, vec![0.0, 0.0]).unwrap();
        let mut est = TiltEstimator::new(&problem, 1.0).unwrap();
        let mut rng = substream(11, 0);
        for _ in 0..100 {
            let x = gaussian_vec(2, 4.0, &mut rng);
            assert_eq!(est.draw(&x, &mut rng).unwrap(), 0.0);
        }
    }

    #[test]
    fn quadratic_estimator_by_hand() {
        // f(x) = x²/2 in 1D, ∇f(x) = x. W = γ̇·(x₊ - γ).
        let (x0, eta, x_plus) = (0.8, 0.2, 0.65);
        let problem = TiltProblem::new(|x: &[f64]| x.to_vec(), vec![x0], eta, vec![x_plus]).unwrap();
        let est = TiltEstimator::new(&problem, 1.0).unwrap();
        let xhat = x0 - eta * x_plus;
        let (x, z, r) = (1.1, -0.37, 0.41);
        let a = (std::f64::consts::PI * r / 2.0).sin();
        let b = (std::f64::consts::PI * r / 2.0).cos();
        let gamma = a * x + (1.0 - a) * xhat + b * z;
        let gamma_dot = std::f64::consts::PI / 2.0 * (b * (x - xhat) - a * z);
        let expect = gamma_dot * (x_plus - gamma);
        let got = est.raw_estimate(&[x], &[z], r).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn estimator_is_clipped() {
        let problem = TiltProblem::new(
            |x: &[f64]| x.iter().map(|v| 50.0 * v).collect(),
            vec![3.0],
            1.0,
            vec![0.0],
        )
        .unwrap();
        let mut est = TiltEstimator::new(&problem, 0.5).unwrap();
        let mut rng = substream(12, 0);
        for _ in 0..1000 {
            let x = gaussian_vec(1, 9.0, &mut rng);
            let w = est.draw(&x, &mut rng).unwrap();
            assert!(w.abs() <= 0.5);
        }
        assert!(est.clipped > 0);
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let problem = TiltProblem::new(
            |x: &[f64]| x.iter().map(|v| if *v > 0.0 { f64::NAN } else { 0.0 }).collect(),
            vec![0.0],
            0.1,
            vec![-1.0],
        )
        .unwrap();
        let est = TiltEstimator::new(&problem, 1.0).unwrap();
        let err = est.raw_estimate(&[2.0], &[0.0], 1.0).unwrap_err();
        assert!(matches!(err, Error::NumericalFailure(_)));
    }

    #[test]
    fn strict_anchor_policy_rejects_bad_anchor() {
        let problem = TiltProblem::new(|x: &[f64]| x.to_vec(), vec![0.0], 0.01, vec![5.0])
            .unwrap()
            .with_anchor_policy(AnchorPolicy::Strict);
        let mut rng = substream(13, 0);
        let err = sample_tilt(&problem, &ForsParams::default(), &mut rng).unwrap_err();
        assert!(matches!(err, Error::AnchorViolation { .. }));
    }

    #[test]
    fn query_accounting() {
        let problem = TiltProblem::new(
            |x: &[f64]| x.to_vec(),
            vec![0.3, 0.1],
            0.05,
            vec![0.3 / 1.05, 0.1 / 1.05],
        )
        .unwrap();
        let mut rng = substream(14, 0);
        for _ in 0..200 {
            let s = sample_tilt(&problem, &ForsParams::default(), &mut rng).unwrap();
            assert_eq!(s.gradient_queries, s.outcome.estimator_draws + 1);
        }
    }
}

//! Analytic score oracles for isotropic Gaussian mixtures under the forward
//! noising process `X_t | X_0 ~ N(ᾱ X_0, σ² I)`.
//!
//! Convolving a mixture with Gaussian noise keeps it a mixture, so every
//! marginal `p_t` has a closed-form density and score. Scores are computed
//! from log-sum-exp responsibilities:
//! `∇log p(x) = Σ_h r_h(x) · (m_h - x) / v_h`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::quadrature::gauss_hermite;
use crate::vecops::{dot, scale};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// `Σ_h w_h N(μ_h, τ_h² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::invalid(
                "mixture needs matching, non-empty weights, means and variances",
            ));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid("mixture means must share a positive dimension"));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        if variances.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("mixture variances must be finite and non-negative"));
        }
        if means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mixture means must be finite"));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::new(vec![1.0], vec![vec![0.0; dim]], vec![1.0])
    }

    /// Equal-weight 1D mixture with a shared component variance.
    pub fn symmetric_1d(centers: &[f64], variance: f64) -> Result<Self> {
        let w = 1.0 / centers.len() as f64;
        Self::new(
            vec![w; centers.len()],
            centers.iter().map(|c| vec![*c]).collect(),
            vec![variance; centers.len()],
        )
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// `E‖X‖²`
    pub fn second_moment(&self) -> f64 {
        let d = self.dim() as f64;
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w * (dot(m, m) + d * v))
            .sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, mi) in out.iter_mut().zip(m) {
                *o += w * mi;
            }
        }
        out
    }

    /// Law of `ᾱ X + σ ξ` for `X` from this mixture and `ξ ~ N(0, I)`.
    pub fn marginal_of(&self, bar_alpha: f64, sigma_sq: f64) -> Result<Self> {
        if !(bar_alpha > 0.0 && bar_alpha <= 1.0) {
            return Err(Error::invalid(format!("ᾱ must lie in (0, 1], got {bar_alpha}")));
        }
        if !(sigma_sq >= 0.0 && sigma_sq.is_finite()) {
            return Err(Error::invalid(format!("σ² must be non-negative, got {sigma_sq}")));
        }
        let variances: Vec<f64> = self
            .variances
            .iter()
            .map(|v| bar_alpha * bar_alpha * v + sigma_sq)
            .collect();
        if variances.iter().all(|v| *v == 0.0) {
            return Err(Error::DegenerateDensity("every component has zero variance".into()));
        }
        Ok(Self {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| scale(m, bar_alpha)).collect(),
            variances,
        })
    }

    fn require_density(&self) -> Result<()> {
        if self.variances.iter().any(|v| *v <= 0.0) {
            return Err(Error::DegenerateDensity("mixture has a zero-variance component".into()));
        }
        Ok(())
    }

    /// Per-component `log w_h + log N(x; m_h, v_h I)`.
    fn component_log_terms(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim() as f64;
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| {
                let sq: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * sq / v
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.require_density()?;
        self.check_dim(x)?;
        Ok(log_sum_exp(&self.component_log_terms(x)))
    }

    /// `∇log p(x)` via responsibilities.
    pub fn exact_score(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.require_density()?;
        self.check_dim(x)?;
        Ok(self.score_unchecked(x))
    }

    fn score_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let terms = self.component_log_terms(x);
        let lse = log_sum_exp(&terms);
        let mut out = vec![0.0; x.len()];
        for ((t, m), v) in terms.iter().zip(&self.means).zip(&self.variances) {
            let resp = (t - lse).exp();
            if resp == 0.0 {
                continue;
            }
            for ((o, xi), mi) in out.iter_mut().zip(x).zip(m) {
                *o += resp * (mi - xi) / v;
            }
        }
        out
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {}, mixture has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut h = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                h = i;
                break;
            }
        }
        let sd = self.variances[h].sqrt();
        self.means[h]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + sd * z
            })
            .collect()
    }

    /// CDF of a one-dimensional mixture.
    pub fn cdf_1d(&self, x: f64) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::UnsupportedDimension {
                dim: self.dim(),
                what: "mixture CDF is one-dimensional",
            });
        }
        self.require_density()?;
        Ok(self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w * normal_cdf((x - m[0]) / v.sqrt()))
            .sum())
    }

    /// Law of coordinate `i`; exact because components are isotropic.
    pub fn coordinate(&self, i: usize) -> Result<Self> {
        if i >= self.dim() {
            return Err(Error::invalid(format!(
                "coordinate {i} out of range for dimension {}",
                self.dim()
            )));
        }
        Ok(Self {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| vec![m[i]]).collect(),
            variances: self.variances.clone(),
        })
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `(ᾱ, σ²)` of the marginal a score oracle stands for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalMeta {
    pub bar_alpha: f64,
    pub sigma_sq: f64,
}

type Field = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A deterministic score function `s_t` with a shared query counter.
///
/// Clones share the counter, so concurrent chains see one running total.
#[derive(Clone)]
pub struct ScoreOracle {
    field: Arc<Field>,
    queries: Arc<AtomicU64>,
    meta: MarginalMeta,
    marginal: Option<Arc<GaussianMixture>>,
    score_error: Option<f64>,
    smoothed_score_error: Option<f64>,
}

impl std::fmt::Debug for ScoreOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScoreOracle")
            .field("meta", &self.meta)
            .field("queries", &self.queries())
            .field("score_error", &self.score_error)
            .finish_non_exhaustive()
    }
}

impl ScoreOracle {
    /// Exact score of `mix_t`, which must have strictly positive variances.
    pub fn exact(mix_t: GaussianMixture, meta: MarginalMeta) -> Result<Self> {
        mix_t.require_density()?;
        let mix = Arc::new(mix_t);
        let inner = Arc::clone(&mix);
        Ok(Self {
            field: Arc::new(move |x: &[f64]| inner.score_unchecked(x)),
            queries: Arc::new(AtomicU64::new(0)),
            meta,
            marginal: Some(mix),
            score_error: Some(0.0),
            smoothed_score_error: Some(0.0),
        })
    }

    /// Exact score of the forward marginal of `data` at `(ᾱ, σ²)`.
    pub fn for_marginal(data: &GaussianMixture, meta: MarginalMeta) -> Result<Self> {
        Self::exact(data.marginal_of(meta.bar_alpha, meta.sigma_sq)?, meta)
    }

    /// Arbitrary score field with unknown error.
    pub fn from_fn<F>(field: F, meta: MarginalMeta) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            field: Arc::new(field),
            queries: Arc::new(AtomicU64::new(0)),
            meta,
            marginal: None,
            score_error: None,
            smoothed_score_error: None,
        }
    }

    /// Evaluates `s_t(x)`, counting one query.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        (self.field)(x)
    }

    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn meta(&self) -> MarginalMeta {
        self.meta
    }

    /// The exact marginal `p_t`, when this oracle was built from a mixture.
    pub fn marginal(&self) -> Option<&GaussianMixture> {
        self.marginal.as_deref()
    }

    /// `ε_t = (E_{p_t}‖s_t - s*_t‖²)^{1/2}` when known analytically.
    pub fn score_error(&self) -> Option<f64> {
        self.score_error
    }

    /// Sup of the score error over slightly smoothed marginals, when known.
    pub fn smoothed_score_error(&self) -> Option<f64> {
        self.smoothed_score_error
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationMode {
    /// `s = s* + eps · u` for a fixed unit vector `u`.
    ConstantBias,
    /// `s = s* + eps · φ(x) u` with `E_{p_t} φ² = 1`.
    SmoothField,
}

const SMOOTH_FREQUENCY: f64 = 1.0;
const SMOOTH_PHASE: f64 = 0.5;
const HERMITE_NODES: usize = 64;

/// Adds a deterministic error field of `L²(p_t)` size `eps` to `base`.
///
/// Evaluating the result does not count against `base`'s counter.
pub fn perturbed_oracle(base: &ScoreOracle, eps: f64, mode: PerturbationMode) -> Result<ScoreOracle> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!(
            "perturbation size must be non-negative, got {eps}"
        )));
    }
    if eps == 0.0 {
        return Ok(ScoreOracle {
            queries: Arc::new(AtomicU64::new(0)),
            ..base.clone()
        });
    }
    let dim = base
        .marginal
        .as_ref()
        .map(|m| m.dim())
        .ok_or_else(|| Error::invalid("perturbation needs an oracle built from a mixture"))?;
    let direction = vec![1.0 / (dim as f64).sqrt(); dim];
    let inner = Arc::clone(&base.field);
    let (field, smoothed): (Arc<Field>, Option<f64>) = match mode {
        PerturbationMode::ConstantBias => {
            let shift = scale(&direction, eps);
            (
                Arc::new(move |x: &[f64]| {
                    let mut s = inner(x);
                    for (si, di) in s.iter_mut().zip(&shift) {
                        *si += di;
                    }
                    s
                }),
                Some(eps),
            )
        }
        PerturbationMode::SmoothField => {
            if dim > 2 {
                return Err(Error::UnsupportedDimension {
                    dim,
                    what: "smooth perturbation is normalized by quadrature in 1D/2D only",
                });
            }
            let mix = base.marginal.as_ref().expect("checked above");
            let norm_sq = smooth_profile_norm_sq(mix, &direction)?;
            if !(norm_sq > 1e-12) {
                return Err(Error::NumericalFailure(format!(
                    "smooth perturbation profile has L² norm² {norm_sq}"
                )));
            }
            let amp = eps / norm_sq.sqrt();
            (
                Arc::new(move |x: &[f64]| {
                    let mut s = inner(x);
                    let phi = smooth_profile(x, &direction);
                    for (si, di) in s.iter_mut().zip(&direction) {
                        *si += amp * phi * di;
                    }
                    s
                }),
                None,
            )
        }
    };
    Ok(ScoreOracle {
        field,
        queries: Arc::new(AtomicU64::new(0)),
        meta: base.meta,
        marginal: base.marginal.clone(),
        score_error: base.score_error.map(|_| eps),
        smoothed_score_error: base.smoothed_score_error.and(smoothed),
    })
}

fn smooth_profile(x: &[f64], direction: &[f64]) -> f64 {
    (SMOOTH_FREQUENCY * dot(x, direction) + SMOOTH_PHASE).sin()
}

/// `E_{p} φ(X)²` by tensor Gauss–Hermite quadrature over each component.
fn smooth_profile_norm_sq(mix: &GaussianMixture, direction: &[f64]) -> Result<f64> {
    let (nodes, weights) = gauss_hermite(HERMITE_NODES)?;
    let norm = std::f64::consts::PI.powf(mix.dim() as f64 / 2.0);
    let mut total = 0.0;
    for ((w, m), v) in mix.weights.iter().zip(&mix.means).zip(&mix.variances) {
        let s = (2.0 * v).sqrt();
        let mut acc = 0.0;
        match mix.dim() {
            1 => {
                for (xi, wi) in nodes.iter().zip(&weights) {
                    acc += wi * smooth_profile(&[m[0] + s * xi], direction).powi(2);
                }
            }
            2 => {
                for (xi, wi) in nodes.iter().zip(&weights) {
                    for (yj, wj) in nodes.iter().zip(&weights) {
                        let p = [m[0] + s * xi, m[1] + s * yj];
                        acc += wi * wj * smooth_profile(&p, direction).powi(2);
                    }
                }
            }
            d => {
                return Err(Error::UnsupportedDimension {
                    dim: d,
                    what: "quadrature normalization",
                })
            }
        }
        total += w * acc / norm;
    }
    Ok(total)
}

/// Self-normalized Monte Carlo estimate of the score via Tweedie's identity.
#[derive(Debug, Clone, PartialEq)]
pub struct TweedieEstimate {
    pub score: Vec<f64>,
    pub std_error: Vec<f64>,
    pub effective_sample_size: f64,
}

const MIN_TWEEDIE_DRAWS: usize = 10_000;
const MIN_TWEEDIE_ESS: f64 = 100.0;

/// Estimates `(1/σ²) E[ᾱX₀ - X_t | X_t = x]` by importance-weighting prior
/// draws `X₀ ~ mix` with the likelihood `N(x; ᾱX₀, σ²I)`.
///
/// Independent of [`GaussianMixture::exact_score`]; used to cross-check it.
pub fn tweedie_mc_check<R: Rng + ?Sized>(
    mix: &GaussianMixture,
    bar_alpha: f64,
    sigma_sq: f64,
    x: &[f64],
    n_mc: usize,
    rng: &mut R,
) -> Result<TweedieEstimate> {
    if n_mc < MIN_TWEEDIE_DRAWS {
        return Err(Error::invalid(format!(
            "Tweedie check needs at least {MIN_TWEEDIE_DRAWS} draws, got {n_mc}"
        )));
    }
    if !(sigma_sq > 0.0) {
        return Err(Error::invalid("Tweedie check needs σ² > 0"));
    }
    mix.check_dim(x)?;
    let d = x.len();
    let mut log_w = Vec::with_capacity(n_mc);
    let mut values = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let x0 = mix.sample(rng);
        let diff: Vec<f64> = x0.iter().zip(x).map(|(a, b)| bar_alpha * a - b).collect();
        log_w.push(-0.5 * dot(&diff, &diff) / sigma_sq);
        values.push(scale(&diff, 1.0 / sigma_sq));
    }
    let lse = log_sum_exp(&log_w);
    let w: Vec<f64> = log_w.iter().map(|l| (l - lse).exp()).collect();
    let ess = 1.0 / w.iter().map(|wi| wi * wi).sum::<f64>();
    if ess < MIN_TWEEDIE_ESS {
        return Err(Error::UnreliableEstimate {
            ess,
            min: MIN_TWEEDIE_ESS,
        });
    }
    let mut score = vec![0.0; d];
    for (wi, v) in w.iter().zip(&values) {
        for (s, vi) in score.iter_mut().zip(v) {
            *s += wi * vi;
        }
    }
    // Delta-method variance of a self-normalized estimator.
    let mut var = vec![0.0; d];
    for (wi, v) in w.iter().zip(&values) {
        for ((acc, vi), s) in var.iter_mut().zip(v).zip(&score) {
            *acc += wi * wi * (vi - s) * (vi - s);
        }
    }
    Ok(TweedieEstimate {
        score,
        std_error: var.iter().map(|v| v.sqrt()).collect(),
        effective_sample_size: ess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn bimodal() -> GaussianMixture {
        GaussianMixture::symmetric_1d(&[-2.0, 2.0], 0.25).unwrap()
    }

    #[test]
    fn validation() {
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![-1.0]).is_err());
        assert!(GaussianMixture::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0, 2.0]], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixture::new(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn marginal_identity_and_vp_fixed_point() {
        let m = bimodal();
        assert_eq!(m.marginal_of(1.0, 0.0).unwrap(), m);
        let std = GaussianMixture::standard_normal(3).unwrap();
        for &a in &[0.1, 0.5, 0.99] {
            let t = std.marginal_of(a, 1.0 - a * a).unwrap();
            assert!((t.variances()[0] - 1.0).abs() < 1e-15);
            assert!(t.means()[0].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn marginal_bimodal_by_hand() {
        let t = bimodal().marginal_of(0.8, 0.36).unwrap();
        assert_eq!(t.weights(), &[0.5, 0.5]);
        assert!((t.means()[0][0] + 1.6).abs() < 1e-15);
        assert!((t.means()[1][0] - 1.6).abs() < 1e-15);
        for v in t.variances() {
            assert!((v - 0.52).abs() < 1e-15);
        }
    }

    #[test]
    fn marginal_degenerate() {
        let point = GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![0.0]).unwrap();
        assert!(matches!(point.marginal_of(0.5, 0.0), Err(Error::DegenerateDensity(_))));
        assert!(point.marginal_of(0.5, 0.1).is_ok());
        assert!(point.exact_score(&[0.0]).is_err());
    }

    #[test]
    fn single_gaussian_score() {
        let m = GaussianMixture::new(vec![1.0], vec![vec![1.0, -2.0]], vec![0.5]).unwrap();
        let s = m.exact_score(&[0.0, 0.0]).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-15);
        assert!((s[1] + 4.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_mixture_score_vanishes_at_origin() {
        assert_eq!(bimodal().exact_score(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn score_is_finite_far_out() {
        let s = bimodal().exact_score(&[1e6]).unwrap();
        assert!(s[0].is_finite());
        assert!((s[0] - (2.0 - 1e6) / 0.25).abs() < 1e-6 * 4e6);
    }

    #[test]
    fn mixture_cdf_and_sampling_agree() {
        let m = bimodal();
        assert!((m.cdf_1d(0.0).unwrap() - 0.5).abs() < 1e-15);
        let mut rng = substream(21, 0);
        let n = 50_000;
        let below = (0..n).filter(|_| m.sample(&mut rng)[0] < 2.3).count() as f64 / n as f64;
        let p = m.cdf_1d(2.3).unwrap();
        assert!((below - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    #[test]
    fn query_counter_counts_every_eval() {
        let oracle = ScoreOracle::for_marginal(
            &bimodal(),
            MarginalMeta {
                bar_alpha: 0.9,
                sigma_sq: 0.19,
            },
        )
        .unwrap();
        let clone = oracle.clone();
        for i in 0..37 {
            let _ = oracle.eval(&[i as f64 * 0.1]);
        }
        for _ in 0..5 {
            let _ = clone.eval(&[0.0]);
        }
        assert_eq!(oracle.queries(), 42);
    }

    #[test]
    fn constant_bias_has_exact_error() {
        let meta = MarginalMeta {
            bar_alpha: 1.0,
            sigma_sq: 0.0,
        };
        let base = ScoreOracle::exact(bimodal(), meta).unwrap();
        let p = perturbed_oracle(&base, 0.1, PerturbationMode::ConstantBias).unwrap();
        assert_eq!(p.score_error(), Some(0.1));
        assert_eq!(p.smoothed_score_error(), Some(0.1));
        for x in [-3.0, 0.1, 2.5] {
            let d = p.eval(&[x])[0] - base.eval(&[x])[0];
            assert!((d - 0.1).abs() < 1e-15);
        }
        let zero = perturbed_oracle(&base, 0.0, PerturbationMode::SmoothField).unwrap();
        assert_eq!(zero.eval(&[0.7]), base.eval(&[0.7]));
    }

    #[test]
    fn smooth_field_rejects_high_dimension() {
        let meta = MarginalMeta {
            bar_alpha: 1.0,
            sigma_sq: 0.0,
        };
        let base = ScoreOracle::exact(GaussianMixture::standard_normal(3).unwrap(), meta).unwrap();
        assert!(matches!(
            perturbed_oracle(&base, 0.1, PerturbationMode::SmoothField),
            Err(Error::UnsupportedDimension { dim: 3, .. })
        ));
        assert!(perturbed_oracle(&base, 0.1, PerturbationMode::ConstantBias).is_ok());
    }

    #[test]
    fn tweedie_guards() {
        let m = bimodal();
        let mut rng = substream(22, 0);
        assert!(tweedie_mc_check(&m, 0.9, 0.19, &[0.0], 100, &mut rng).is_err());
        // Tiny noise far from the data: almost no prior draw explains x.
        let err = tweedie_mc_check(&m, 1.0, 1e-4, &[0.0], 10_000, &mut rng).unwrap_err();
        assert!(matches!(err, Error::UnreliableEstimate { .. }));
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}

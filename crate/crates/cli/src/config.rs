//! Experiment configuration files.
//!
//! A config is one TOML document with a top-level `kind` and exactly one
//! matching section (`[fors_oracle]`, `[tilt]`, `[diffuse]`, `[prox]` or
//! `[bench]`). Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use fors_core::diffusion::{MethodKind, Sampler, StepBudget};
use fors_core::proximal::Potential;
use fors_core::scores::{GaussianMixture, PerturbationMode};
use fors_core::tilt::DEFAULT_ETA_CONSTANT;
use fors_core::ForsParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ForsOracle,
    Tilt,
    Diffuse,
    Prox,
    BenchDdpmVsFors,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ForsOracle => "fors-oracle",
            ExperimentKind::Tilt => "tilt",
            ExperimentKind::Diffuse => "diffuse",
            ExperimentKind::Prox => "prox",
            ExperimentKind::BenchDdpmVsFors => "bench-ddpm-vs-fors",
        }
    }

    pub fn section(self) -> &'static str {
        match self {
            ExperimentKind::ForsOracle => "fors_oracle",
            ExperimentKind::Tilt => "tilt",
            ExperimentKind::Diffuse => "diffuse",
            ExperimentKind::Prox => "prox",
            ExperimentKind::BenchDdpmVsFors => "bench",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strict: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub fors: ForsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fors_oracle: Option<ForsOracleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilt: Option<TiltSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffuse: Option<DiffuseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prox: Option<ProxSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForsSection {
    #[serde(default = "defaults::clip_bound")]
    pub clip_bound: f64,
    #[serde(default = "defaults::max_outer_iters")]
    pub max_outer_iters: u64,
}

impl Default for ForsSection {
    fn default() -> Self {
        Self {
            clip_bound: defaults::clip_bound(),
            max_outer_iters: defaults::max_outer_iters(),
        }
    }
}

/// Uniform proposal on `tilts.len()` points with deterministic log-tilts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForsOracleSpec {
    pub runs: usize,
    pub tilts: Vec<f64>,
    #[serde(default = "defaults::tail_deltas")]
    pub tail_deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiltSpec {
    pub dim: usize,
    pub potential: Potential,
    pub x0: Vec<f64>,
    /// `None` uses the step-size rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default = "defaults::tilt_delta")]
    pub delta: f64,
    #[serde(default = "defaults::eta_constant")]
    pub eta_constant: f64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prox_tol: Option<f64>,
    #[serde(default = "defaults::prox_max_iters")]
    pub prox_max_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl MixtureSpec {
    pub fn build(&self) -> Result<GaussianMixture, fors_core::Error> {
        GaussianMixture::new(self.weights.clone(), self.means.clone(), self.variances.clone())
    }
}

/// Backward kernel named in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Simple,
    DdpmLike,
    Adaptive,
    DdpmBaseline,
}

impl MethodName {
    pub fn sampler(self) -> Sampler {
        match self {
            MethodName::Simple => Sampler::Fors(MethodKind::Simple),
            MethodName::DdpmLike => Sampler::Fors(MethodKind::DdpmLike),
            MethodName::Adaptive => Sampler::Fors(MethodKind::Adaptive),
            MethodName::DdpmBaseline => Sampler::DdpmBaseline,
        }
    }

    /// Method whose step-size condition sets the schedule; the baseline
    /// shares the simple method's schedule.
    pub fn schedule_method(self) -> MethodKind {
        match self {
            MethodName::Simple | MethodName::DdpmBaseline => MethodKind::Simple,
            MethodName::DdpmLike => MethodKind::DdpmLike,
            MethodName::Adaptive => MethodKind::Adaptive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub eps: f64,
    #[serde(default = "defaults::perturbation_mode")]
    pub mode: PerturbationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffuseSpec {
    pub data: MixtureSpec,
    pub method: MethodName,
    #[serde(default = "defaults::diffusion_delta")]
    pub delta: f64,
    #[serde(default)]
    pub budget: StepBudget,
    pub n_chains: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxSpec {
    pub dim: usize,
    pub potential: Potential,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default = "defaults::tilt_delta")]
    pub delta: f64,
    #[serde(default = "defaults::eta_constant")]
    pub eta_constant: f64,
    pub iterations: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "defaults::one")]
    pub thin: usize,
    #[serde(default = "defaults::one")]
    pub n_chains: usize,
    pub x_init: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prox_tol: Option<f64>,
    #[serde(default = "defaults::prox_max_iters")]
    pub prox_max_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub data: MixtureSpec,
    #[serde(default = "defaults::bench_methods")]
    pub methods: Vec<MethodName>,
    #[serde(default = "defaults::bench_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "defaults::perturbation_mode")]
    pub mode: PerturbationMode,
    #[serde(default = "defaults::diffusion_delta")]
    pub delta: f64,
    #[serde(default)]
    pub budget: StepBudget,
    pub n_chains: usize,
}

mod defaults {
    use super::*;

    pub fn clip_bound() -> f64 {
        1.0
    }
    pub fn max_outer_iters() -> u64 {
        1_000_000
    }
    pub fn tail_deltas() -> Vec<f64> {
        vec![0.05, 0.01]
    }
    pub fn tilt_delta() -> f64 {
        0.01
    }
    pub fn diffusion_delta() -> f64 {
        0.1
    }
    pub fn eta_constant() -> f64 {
        DEFAULT_ETA_CONSTANT
    }
    pub fn prox_max_iters() -> usize {
        10_000
    }
    pub fn one() -> usize {
        1
    }
    pub fn perturbation_mode() -> PerturbationMode {
        PerturbationMode::ConstantBias
    }
    pub fn bench_methods() -> Vec<MethodName> {
        vec![MethodName::Simple, MethodName::DdpmBaseline]
    }
    pub fn bench_eps() -> Vec<f64> {
        vec![0.0]
    }
}

fn bad(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be positive and finite, got {v}")))
    }
}

fn unit_interval(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(bad(field, format!("must lie in (0, 1), got {v}")))
    }
}

fn at_least_one(field: &str, n: usize) -> Result<(), CliError> {
    if n >= 1 {
        Ok(())
    } else {
        Err(bad(field, "must be at least 1"))
    }
}

fn vector(field: &str, v: &[f64], dim: usize) -> Result<(), CliError> {
    if v.len() != dim {
        return Err(bad(field, format!("has {} entries, dim is {dim}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(bad(field, "entries must be finite"));
    }
    Ok(())
}

fn budget(section: &str, b: &StepBudget) -> Result<(), CliError> {
    positive(&format!("{section}.budget.constant"), b.constant)?;
    if !(b.l_delta >= 1.0 && b.l_delta.is_finite()) {
        return Err(bad(&format!("{section}.budget.l_delta"), "must be at least 1"));
    }
    if let Some(d) = b.d_star {
        if !(d >= 1.0 && d.is_finite()) {
            return Err(bad(&format!("{section}.budget.d_star"), "must be at least 1"));
        }
    }
    Ok(())
}

fn mixture(field: &str, m: &MixtureSpec) -> Result<GaussianMixture, CliError> {
    m.build().map_err(|e| bad(field, e))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn fors_params(&self) -> ForsParams {
        ForsParams {
            clip_bound: self.fors.clip_bound,
            max_outer_iters: self.fors.max_outer_iters,
            rng_seed: self.seed,
        }
    }

    /// Semantic checks beyond the schema; messages start with the field path.
    pub fn validate(&self) -> Result<(), CliError> {
        positive("fors.clip_bound", self.fors.clip_bound)?;
        if self.fors.max_outer_iters == 0 {
            return Err(bad("fors.max_outer_iters", "must be at least 1"));
        }
        let present = [
            (ExperimentKind::ForsOracle, self.fors_oracle.is_some()),
            (ExperimentKind::Tilt, self.tilt.is_some()),
            (ExperimentKind::Diffuse, self.diffuse.is_some()),
            (ExperimentKind::Prox, self.prox.is_some()),
            (ExperimentKind::BenchDdpmVsFors, self.bench.is_some()),
        ];
        for (kind, there) in present {
            if kind == self.kind && !there {
                return Err(bad(
                    kind.section(),
                    format!("section is required when kind = \"{}\"", self.kind.name()),
                ));
            }
            if kind != self.kind && there {
                return Err(bad(
                    kind.section(),
                    format!("section does not belong to kind = \"{}\"", self.kind.name()),
                ));
            }
        }
        match self.kind {
            ExperimentKind::ForsOracle => self.validate_oracle(),
            ExperimentKind::Tilt => self.validate_tilt(),
            ExperimentKind::Diffuse => self.validate_diffuse(),
            ExperimentKind::Prox => self.validate_prox(),
            ExperimentKind::BenchDdpmVsFors => self.validate_bench(),
        }
    }

    fn validate_oracle(&self) -> Result<(), CliError> {
        let s = self.fors_oracle.as_ref().expect("checked");
        at_least_one("fors_oracle.runs", s.runs)?;
        if s.tilts.len() < 2 {
            return Err(bad("fors_oracle.tilts", "needs at least two points"));
        }
        for (i, w) in s.tilts.iter().enumerate() {
            if w.is_nan() || w.abs() > self.fors.clip_bound {
                return Err(bad(
                    &format!("fors_oracle.tilts[{i}]"),
                    format!("|{w}| exceeds fors.clip_bound"),
                ));
            }
        }
        for (i, d) in s.tail_deltas.iter().enumerate() {
            unit_interval(&format!("fors_oracle.tail_deltas[{i}]"), *d)?;
        }
        Ok(())
    }

    fn validate_tilt(&self) -> Result<(), CliError> {
        let s = self.tilt.as_ref().expect("checked");
        at_least_one("tilt.dim", s.dim)?;
        vector("tilt.x0", &s.x0, s.dim)?;
        at_least_one("tilt.n_samples", s.n_samples)?;
        unit_interval("tilt.delta", s.delta)?;
        positive("tilt.eta_constant", s.eta_constant)?;
        if let Some(eta) = s.eta {
            positive("tilt.eta", eta)?;
        }
        if let Some(tol) = s.prox_tol {
            positive("tilt.prox_tol", tol)?;
        }
        at_least_one("tilt.prox_max_iters", s.prox_max_iters)?;
        fors_core::proximal::LogConcaveTarget::from_potential(s.potential, s.dim)
            .map_err(|e| bad("tilt.potential", e))?;
        Ok(())
    }

    fn validate_diffuse(&self) -> Result<(), CliError> {
        let s = self.diffuse.as_ref().expect("checked");
        mixture("diffuse.data", &s.data)?;
        unit_interval("diffuse.delta", s.delta)?;
        budget("diffuse", &s.budget)?;
        at_least_one("diffuse.n_chains", s.n_chains)?;
        if let Some(p) = &s.perturbation {
            if !(p.eps >= 0.0 && p.eps.is_finite()) {
                return Err(bad("diffuse.perturbation.eps", "must be non-negative"));
            }
            if p.mode == PerturbationMode::SmoothField && s.data.means[0].len() > 2 {
                return Err(bad(
                    "diffuse.perturbation.mode",
                    "smooth-field supports dimension 1 or 2 only",
                ));
            }
        }
        Ok(())
    }

    fn validate_prox(&self) -> Result<(), CliError> {
        let s = self.prox.as_ref().expect("checked");
        at_least_one("prox.dim", s.dim)?;
        vector("prox.x_init", &s.x_init, s.dim)?;
        at_least_one("prox.iterations", s.iterations)?;
        at_least_one("prox.thin", s.thin)?;
        at_least_one("prox.n_chains", s.n_chains)?;
        if s.burn_in >= s.iterations {
            return Err(bad("prox.burn_in", "must be smaller than prox.iterations"));
        }
        unit_interval("prox.delta", s.delta)?;
        positive("prox.eta_constant", s.eta_constant)?;
        if let Some(eta) = s.eta {
            positive("prox.eta", eta)?;
        }
        if let Some(tol) = s.prox_tol {
            positive("prox.prox_tol", tol)?;
        }
        at_least_one("prox.prox_max_iters", s.prox_max_iters)?;
        fors_core::proximal::LogConcaveTarget::from_potential(s.potential, s.dim)
            .map_err(|e| bad("prox.potential", e))?;
        Ok(())
    }

    fn validate_bench(&self) -> Result<(), CliError> {
        let s = self.bench.as_ref().expect("checked");
        let data = mixture("bench.data", &s.data)?;
        if data.dim() > 2 {
            return Err(bad("bench.data", "benchmarks take 1D or 2D mixtures"));
        }
        if s.methods.is_empty() {
            return Err(bad("bench.methods", "must name at least one method"));
        }
        if s.eps.is_empty() {
            return Err(bad("bench.eps", "must list at least one value"));
        }
        for (i, e) in s.eps.iter().enumerate() {
            if !(*e >= 0.0 && e.is_finite()) {
                return Err(bad(&format!("bench.eps[{i}]"), "must be non-negative"));
            }
        }
        unit_interval("bench.delta", s.delta)?;
        budget("bench", &s.budget)?;
        if s.n_chains < fors_core::metrics::KS_MIN_SAMPLES {
            return Err(bad(
                "bench.n_chains",
                format!(
                    "must be at least {} for the KS column",
                    fors_core::metrics::KS_MIN_SAMPLES
                ),
            ));
        }
        Ok(())
    }

    /// Serializes back to TOML (used for the config echo check).
    pub fn to_toml_string(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

//! Experiment execution: one function per experiment kind.

use std::collections::BTreeMap;
use std::path::Path;

use fors_core::diffusion::{default_schedule, sample_chains, ChainOptions, ChainRun, ScoreBank};
use fors_core::fors::draw_count_bound;
use fors_core::metrics::{batch_means_se, discrete_chi2, ks_1d, moments, MetricReport, SparseCells};
use fors_core::proximal::{proximal_chains, ChainLayout, LogConcaveTarget, Potential, ProxConfig};
use fors_core::quadrature::QuadratureCdf;
use fors_core::rng::{substream, SimRng};
use fors_core::schedule::Schedule;
use fors_core::scores::{normal_cdf, GaussianMixture, PerturbationMode};
use fors_core::tilt::{eta_max, sample_tilt, AnchorPolicy, TiltProblem, TiltSample};
use fors_core::vecops::{norm, sub};
use fors_core::{fors_sample, ForsOutcome};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{
    BenchSpec, DiffuseSpec, ExperimentConfig, ExperimentKind, ForsOracleSpec, MethodName, ProxSpec, TiltSpec,
};
use crate::output::{write_bench_csv, write_json, write_samples_csv};
use crate::report::{named, BenchRow, Counts, Stats};
use crate::CliError;

/// Independent draws are generated in chunks of this size, chunk `c` on
/// substream `c`, so output does not depend on the worker count.
pub const CHUNK: usize = 1024;

/// Everything a run produces besides timing.
#[derive(Debug, Default)]
pub struct Artifacts {
    /// `None` for benchmarks, which write one sample file per row.
    pub samples: Option<Vec<Vec<f64>>>,
    pub counts: Counts,
    pub metrics: Vec<MetricReport>,
    pub stats: Stats,
    pub table: Option<Vec<BenchRow>>,
}

/// Resolved step size for `tilt` and `prox` runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSize {
    pub eta: f64,
    /// `+∞` for a potential with zero smoothness constant.
    pub eta_max: f64,
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

#[allow(clippy::too_many_arguments)]
fn step_size(
    section: &str,
    potential: Potential,
    dim: usize,
    eta: Option<f64>,
    delta: f64,
    constant: f64,
    strict: bool,
) -> Result<StepSize, CliError> {
    let holder = potential
        .holder()
        .map_err(|e| config_err(&format!("{section}.potential"), e))?;
    let limit = eta_max(&holder, dim, delta, constant).map_err(|e| config_err(section, e))?;
    let eta = match eta {
        Some(eta) => eta,
        None if limit.is_finite() => limit,
        None => {
            return Err(config_err(
                &format!("{section}.eta"),
                "required when the potential's gradient is constant (the step-size rule gives no limit)",
            ))
        }
    };
    if eta > limit {
        if strict {
            return Err(config_err(
                &format!("{section}.eta"),
                format!("{eta} exceeds the step-size rule's {limit:.6e} (strict mode)"),
            ));
        }
        if section == "tilt" {
            log::warn!("tilt.eta = {eta} exceeds the step-size rule's {limit:.6e}; clipping may bias the output");
        }
    }
    Ok(StepSize { eta, eta_max: limit })
}

/// Config-level checks that need the sampler's own formulas.
pub fn resolve_step_size(cfg: &ExperimentConfig) -> Result<Option<StepSize>, CliError> {
    match cfg.kind {
        ExperimentKind::Tilt => {
            let s = cfg.tilt.as_ref().expect("validated");
            step_size("tilt", s.potential, s.dim, s.eta, s.delta, s.eta_constant, cfg.strict).map(Some)
        }
        ExperimentKind::Prox => {
            let s = cfg.prox.as_ref().expect("validated");
            step_size("prox", s.potential, s.dim, s.eta, s.delta, s.eta_constant, cfg.strict).map(Some)
        }
        _ => Ok(None),
    }
}

pub fn execute(cfg: &ExperimentConfig, step: Option<StepSize>, out_dir: &Path) -> Result<Artifacts, CliError> {
    match cfg.kind {
        ExperimentKind::ForsOracle => run_oracle(cfg, cfg.fors_oracle.as_ref().expect("validated")),
        ExperimentKind::Tilt => run_tilt(cfg, cfg.tilt.as_ref().expect("validated"), step.expect("resolved")),
        ExperimentKind::Diffuse => run_diffuse(cfg, cfg.diffuse.as_ref().expect("validated")),
        ExperimentKind::Prox => run_prox(cfg, cfg.prox.as_ref().expect("validated"), step.expect("resolved")),
        ExperimentKind::BenchDdpmVsFors => run_bench(cfg, cfg.bench.as_ref().expect("validated"), out_dir),
    }
}

fn chunked<T, F>(n: usize, seed: u64, draw: F) -> fors_core::Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut SimRng) -> fors_core::Result<T> + Sync,
{
    let parts: Vec<Vec<T>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| draw(&mut rng)).collect()
        })
        .collect::<fors_core::Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn put_moments(stats: &mut Stats, samples: &[Vec<f64>]) -> Result<fors_core::metrics::Moments, CliError> {
    let m = moments(samples)?;
    for i in 0..m.mean.len() {
        let c = i + 1;
        stats.put(format!("mean_x{c}"), m.mean[i]);
        stats.put(format!("mean_se_x{c}"), m.mean_se[i]);
        stats.put(format!("var_x{c}"), m.cov[i][i]);
        stats.put(format!("var_se_x{c}"), m.var_se[i]);
    }
    stats.put("mean_norm", norm(&m.mean));
    Ok(m)
}

fn run_oracle(cfg: &ExperimentConfig, spec: &ForsOracleSpec) -> Result<Artifacts, CliError> {
    let params = cfg.fors_params();
    let tilts = &spec.tilts;
    let k = tilts.len();
    let outcomes: Vec<ForsOutcome<usize>> = chunked(spec.runs, cfg.seed, |rng| {
        let mut family = |x: &usize, _: &mut SimRng| Ok(tilts[*x]);
        fors_sample(|r: &mut SimRng| Ok(r.random_range(0..k)), &mut family, &params, rng)
    })?;

    let z: f64 = tilts.iter().map(|w| w.exp()).sum();
    let pmf: BTreeMap<usize, f64> = tilts.iter().enumerate().map(|(i, w)| (i, w.exp() / z)).collect();
    let mut counts: BTreeMap<usize, u64> = (0..k).map(|i| (i, 0)).collect();
    for o in &outcomes {
        *counts.get_mut(&o.point).expect("proposal range") += 1;
    }
    let n = spec.runs as f64;
    let chi2 = discrete_chi2(&counts, &pmf, SparseCells::Error)?;
    let l1: f64 = (0..k).map(|i| (counts[&i] as f64 / n - pmf[&i]).abs()).sum();

    let outer: u64 = outcomes.iter().map(|o| o.outer_iterations).sum();
    let draws: u64 = outcomes.iter().map(|o| o.estimator_draws).sum();
    let b = cfg.fors.clip_bound;
    let mut stats = Stats::default();
    stats.put("l1", l1);
    for i in 0..k {
        stats.put(format!("frequency_{i}"), counts[&i] as f64 / n);
        stats.put(format!("target_probability_{i}"), pmf[&i]);
    }
    stats.put("trials", outer as f64);
    stats.put("acceptance_rate", ratio(spec.runs as u64, outer));
    stats.put(
        "expected_acceptance_rate",
        tilts.iter().map(|w| (w - b).exp()).sum::<f64>() / k as f64,
    );
    stats.put("draws_per_run", ratio(draws, spec.runs as u64));
    stats.put("draws_per_trial", ratio(draws, outer));
    stats.put(
        "max_draws_per_run",
        outcomes.iter().map(|o| o.estimator_draws).max().unwrap_or(0) as f64,
    );
    for delta in &spec.tail_deltas {
        let bound = draw_count_bound(b, *delta);
        let over = outcomes.iter().filter(|o| o.estimator_draws as f64 > bound).count();
        stats.put(format!("tail_bound_delta_{delta}"), bound);
        stats.put(format!("tail_exceedance_delta_{delta}"), over as f64 / n);
    }
    Ok(Artifacts {
        samples: Some(outcomes.iter().map(|o| vec![o.point as f64]).collect()),
        counts: Counts {
            samples: spec.runs as u64,
            outer_iterations: outer,
            estimator_draws: draws,
            ..Counts::default()
        },
        metrics: vec![named(chi2, "chi2")],
        stats,
        table: None,
    })
}

/// Law of one coordinate, for separable potentials.
enum Marginal {
    Normal { mean: f64, var: f64 },
    Numeric(QuadratureCdf<Box<dyn Fn(f64) -> f64 + Send + Sync>>),
}

impl Marginal {
    fn numeric(log_density: impl Fn(f64) -> f64 + Send + Sync + 'static, lo: f64, hi: f64) -> Result<Self, CliError> {
        let peak = log_density(0.5 * (lo + hi));
        let density: Box<dyn Fn(f64) -> f64 + Send + Sync> = Box::new(move |x| (log_density(x) - peak).exp());
        Ok(Marginal::Numeric(QuadratureCdf::new(density, lo, hi, 800, 1e-10)?))
    }

    fn cdf(&self, x: f64) -> f64 {
        match self {
            Marginal::Normal { mean, var } => normal_cdf((x - mean) / var.sqrt()),
            Marginal::Numeric(q) => q.cdf(x),
        }
    }

    fn mean_var(&self) -> (f64, f64) {
        match self {
            Marginal::Normal { mean, var } => (*mean, *var),
            Marginal::Numeric(q) => {
                let m = q.expectation(|x| x);
                (m, q.expectation(|x| (x - m) * (x - m)))
            }
        }
    }
}

/// Law of coordinate `x_i` of the tilt `exp(-f(x) - |x - y|²/2η)`.
fn tilt_marginal(potential: Potential, y: f64, eta: f64) -> Result<Marginal, CliError> {
    match potential {
        Potential::Constant => Ok(Marginal::Normal { mean: y, var: eta }),
        Potential::Quadratic { lambda } => Ok(Marginal::Normal {
            mean: y / (1.0 + eta * lambda),
            var: eta / (1.0 + eta * lambda),
        }),
        Potential::LogcoshQuadratic { a, lambda } => {
            let centre = y / (1.0 + eta * lambda);
            let half = 12.0 * (eta / (1.0 + eta * lambda)).sqrt() + a * eta;
            let p = potential;
            Marginal::numeric(
                move |x| -p.value(&[x]) - (x - y) * (x - y) / (2.0 * eta),
                centre - half,
                centre + half,
            )
        }
    }
}

/// Law of one coordinate of `exp(-f)`; `None` when it is not a probability law.
fn stationary_marginal(potential: Potential) -> Result<Option<Marginal>, CliError> {
    match potential {
        Potential::Constant | Potential::Quadratic { lambda: 0.0 } => Ok(None),
        Potential::Quadratic { lambda } => Ok(Some(Marginal::Normal {
            mean: 0.0,
            var: 1.0 / lambda,
        })),
        Potential::LogcoshQuadratic { a, lambda } => {
            if a == 0.0 && lambda == 0.0 {
                return Ok(None);
            }
            let by_quadratic = if lambda > 0.0 {
                12.0 / lambda.sqrt()
            } else {
                f64::INFINITY
            };
            let by_logcosh = if a > 0.0 { 40.0 / a + 2.0 } else { f64::INFINITY };
            let half = by_quadratic.min(by_logcosh);
            let p = potential;
            Marginal::numeric(move |x| -p.value(&[x]), -half, half).map(Some)
        }
    }
}

fn prox_config(
    cfg: &ExperimentConfig,
    delta: f64,
    eta_constant: f64,
    tol: Option<f64>,
    max_iters: usize,
) -> ProxConfig {
    ProxConfig {
        delta,
        eta_constant,
        prox_tol: tol,
        prox_max_iters: max_iters,
        anchor_policy: if cfg.strict {
            AnchorPolicy::Strict
        } else {
            AnchorPolicy::Warn
        },
    }
}

fn run_tilt(cfg: &ExperimentConfig, spec: &TiltSpec, step: StepSize) -> Result<Artifacts, CliError> {
    let params = cfg.fors_params();
    let eta = step.eta;
    let target = LogConcaveTarget::from_potential(spec.potential, spec.dim)?;
    let pc = prox_config(cfg, spec.delta, spec.eta_constant, spec.prox_tol, spec.prox_max_iters);
    let (x_plus, prox) = target.prox_point(&spec.x0, eta, &pc)?;
    let grad = |x: &[f64]| target.gradient(x);
    let problem = TiltProblem::new(grad, spec.x0.clone(), eta, x_plus.clone())?.with_anchor_policy(pc.anchor_policy);
    let draws: Vec<TiltSample> = chunked(spec.n_samples, cfg.seed, |rng| sample_tilt(&problem, &params, rng))?;

    let samples: Vec<Vec<f64>> = draws.iter().map(|d| d.outcome.point.clone()).collect();
    let outer: u64 = draws.iter().map(|d| d.outcome.outer_iterations).sum();
    let est: u64 = draws.iter().map(|d| d.outcome.estimator_draws).sum();
    let clipped: u64 = draws.iter().map(|d| d.clipped_draws).sum();
    let prox_queries = prox.as_ref().map_or(0, |p| p.iterations as u64);
    let grad_queries = draws.iter().map(|d| d.gradient_queries).sum::<u64>() + prox_queries;

    let mut stats = Stats::default();
    stats.put("eta", eta);
    stats.put("eta_max", step.eta_max);
    stats.put("clip_rate", ratio(clipped, est));
    stats.put("acceptance_rate", ratio(spec.n_samples as u64, outer));
    stats.put("draws_per_sample", ratio(est, spec.n_samples as u64));
    stats.put("anchor_residual", draws.first().map_or(0.0, |d| d.anchor_residual));
    if let Some(p) = &prox {
        stats.put("prox_iterations", p.iterations as f64);
        stats.put("prox_residual", p.residual);
    }
    let m = put_moments(&mut stats, &samples)?;
    let mut metrics = Vec::new();
    for i in 0..spec.dim {
        let c = i + 1;
        let law = tilt_marginal(spec.potential, spec.x0[i], eta)?;
        let (mean, var) = law.mean_var();
        stats.put(format!("expected_mean_x{c}"), mean);
        stats.put(format!("expected_var_x{c}"), var);
        stats.put(format!("mean_z_x{c}"), (m.mean[i] - mean) / m.mean_se[i]);
        stats.put(format!("var_z_x{c}"), (m.cov[i][i] - var) / m.var_se[i]);
        let coord: Vec<f64> = samples.iter().map(|x| x[i]).collect();
        if coord.len() >= fors_core::metrics::KS_MIN_SAMPLES {
            metrics.push(named(ks_1d(&coord, |x| law.cdf(x))?, format!("ks_x{c}")));
        }
    }
    Ok(Artifacts {
        samples: Some(samples),
        counts: Counts {
            samples: spec.n_samples as u64,
            outer_iterations: outer,
            estimator_draws: est,
            clipped_draws: clipped,
            gradient_queries: Some(grad_queries),
            ..Counts::default()
        },
        metrics,
        stats,
        table: None,
    })
}

/// Per-coordinate KS against `p₁`, moments and query statistics of a
/// finished set of backward chains.
struct ChainSummary {
    samples: Vec<Vec<f64>>,
    counts: Counts,
    ks: Vec<MetricReport>,
    mean_error: f64,
}

fn summarize_chains(
    data: &GaussianMixture,
    sched: &Schedule,
    runs: &[ChainRun],
    stats: &mut Stats,
    prefix: &str,
) -> Result<ChainSummary, CliError> {
    let n = runs.len() as u64;
    let big_t = sched.len() as u64;
    let samples: Vec<Vec<f64>> = runs.iter().map(|r| r.x1.clone()).collect();
    let queries: u64 = runs.iter().map(|r| r.score_queries).sum();
    let outer: u64 = runs.iter().map(|r| r.outer_iterations).sum();
    let draws: u64 = runs.iter().map(|r| r.estimator_draws).sum();
    let clipped: u64 = runs.iter().map(|r| r.clipped_draws).sum();
    let per_chain = ratio(queries, n);
    let steps = n * big_t.saturating_sub(1);
    stats.put(format!("{prefix}queries_per_chain"), per_chain);
    stats.put(
        format!("{prefix}max_queries_per_chain"),
        runs.iter().map(|r| r.score_queries).max().unwrap_or(0) as f64,
    );
    stats.put(format!("{prefix}queries_per_chain_over_t"), per_chain / big_t as f64);
    stats.put(format!("{prefix}trials_per_step"), ratio(outer, steps));
    stats.put(format!("{prefix}clip_rate"), ratio(clipped, draws));

    let p1 = data.marginal_of(sched.bar_alpha(1), sched.sigma_sq(1))?;
    let m = moments(&samples)?;
    let target_mean = p1.mean();
    let mut ks = Vec::new();
    for i in 0..data.dim() {
        let c = i + 1;
        let coord_law = p1.coordinate(i)?;
        let second: f64 = coord_law
            .weights()
            .iter()
            .zip(coord_law.means())
            .zip(coord_law.variances())
            .map(|((w, mu), v)| w * (v + mu[0] * mu[0]))
            .sum();
        stats.put(format!("{prefix}mean_x{c}"), m.mean[i]);
        stats.put(format!("{prefix}var_x{c}"), m.cov[i][i]);
        stats.put(format!("{prefix}p1_mean_x{c}"), target_mean[i]);
        stats.put(format!("{prefix}p1_var_x{c}"), second - target_mean[i] * target_mean[i]);
        let coord: Vec<f64> = samples.iter().map(|x| x[i]).collect();
        if coord.len() >= fors_core::metrics::KS_MIN_SAMPLES {
            let cdf = |x: f64| coord_law.cdf_1d(x).expect("1D marginal");
            ks.push(named(ks_1d(&coord, cdf)?, format!("{prefix}ks_x{c}")));
        }
    }
    stats.put(format!("{prefix}mean_norm"), norm(&m.mean));
    let mean_error = norm(&sub(&m.mean, &target_mean));
    stats.put(format!("{prefix}mean_error"), mean_error);
    Ok(ChainSummary {
        samples,
        counts: Counts {
            samples: n,
            outer_iterations: outer,
            estimator_draws: draws,
            clipped_draws: clipped,
            score_queries: Some(queries),
            schedule_len: Some(big_t),
            step_budget: Some(sched.budget()),
            ..Counts::default()
        },
        ks,
        mean_error,
    })
}

fn score_bank(
    data: &GaussianMixture,
    sched: &Schedule,
    eps: f64,
    mode: PerturbationMode,
) -> fors_core::Result<ScoreBank> {
    if eps > 0.0 {
        ScoreBank::perturbed(data, sched, eps, mode)
    } else {
        ScoreBank::exact(data, sched)
    }
}

fn run_diffuse(cfg: &ExperimentConfig, spec: &DiffuseSpec) -> Result<Artifacts, CliError> {
    let data = spec.data.build()?;
    let sched = default_schedule(&data, spec.method.schedule_method(), spec.delta, &spec.budget)?;
    let (eps, mode) = spec
        .perturbation
        .map_or((0.0, PerturbationMode::ConstantBias), |p| (p.eps, p.mode));
    let bank = score_bank(&data, &sched, eps, mode)?;
    let runs = sample_chains(
        spec.method.sampler(),
        &bank,
        &sched,
        data.dim(),
        &cfg.fors_params(),
        ChainOptions::default(),
        spec.n_chains,
        cfg.seed,
    )?;
    let mut stats = Stats::default();
    stats.put("schedule_len", sched.len() as f64);
    stats.put("step_budget", sched.budget());
    stats.put("sigma1_sq", sched.sigma_sq(1));
    stats.put("eps", eps);
    let summary = summarize_chains(&data, &sched, &runs, &mut stats, "")?;
    Ok(Artifacts {
        samples: Some(summary.samples),
        counts: summary.counts,
        metrics: summary.ks,
        stats,
        table: None,
    })
}

fn method_slug(method: MethodName) -> String {
    serde_json::to_value(method)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn run_bench(cfg: &ExperimentConfig, spec: &BenchSpec, out_dir: &Path) -> Result<Artifacts, CliError> {
    let data = spec.data.build()?;
    let params = cfg.fors_params();
    let mut stats = Stats::default();
    let mut metrics = Vec::new();
    let mut rows = Vec::new();
    let mut totals = Counts::default();
    for &method in &spec.methods {
        let sched = default_schedule(&data, method.schedule_method(), spec.delta, &spec.budget)?;
        for &eps in &spec.eps {
            let bank = score_bank(&data, &sched, eps, spec.mode)?;
            let runs = sample_chains(
                method.sampler(),
                &bank,
                &sched,
                data.dim(),
                &params,
                ChainOptions::default(),
                spec.n_chains,
                cfg.seed,
            )?;
            let slug = method_slug(method);
            let prefix = format!("{slug}_eps{eps}_");
            let summary = summarize_chains(&data, &sched, &runs, &mut stats, &prefix)?;
            let file = format!("samples-{slug}-eps{eps}.csv");
            write_samples_csv(&out_dir.join(&file), &summary.samples)?;
            let ks = summary.ks.first().cloned();
            let queries = summary.counts.score_queries.unwrap_or(0);
            rows.push(BenchRow {
                method,
                eps,
                schedule_len: sched.len() as u64,
                n_chains: spec.n_chains as u64,
                total_score_queries: queries,
                queries_per_chain: ratio(queries, spec.n_chains as u64),
                ks: ks.as_ref().map_or(f64::NAN, |k| k.value),
                ks_p_value: ks.as_ref().and_then(|k| k.p_value).unwrap_or(0.0),
                mean_error: summary.mean_error,
                samples_file: file,
            });
            totals.samples += summary.counts.samples;
            totals.outer_iterations += summary.counts.outer_iterations;
            totals.estimator_draws += summary.counts.estimator_draws;
            totals.clipped_draws += summary.counts.clipped_draws;
            *totals.score_queries.get_or_insert(0) += queries;
            metrics.extend(summary.ks);
        }
    }
    write_bench_csv(&out_dir.join("bench.csv"), &rows)?;
    write_json(&out_dir.join("bench.json"), &rows)?;
    Ok(Artifacts {
        samples: None,
        counts: totals,
        metrics,
        stats,
        table: Some(rows),
    })
}

fn run_prox(cfg: &ExperimentConfig, spec: &ProxSpec, step: StepSize) -> Result<Artifacts, CliError> {
    let target = LogConcaveTarget::from_potential(spec.potential, spec.dim)?;
    let pc = prox_config(cfg, spec.delta, spec.eta_constant, spec.prox_tol, spec.prox_max_iters);
    let layout = ChainLayout {
        iterations: spec.iterations,
        burn_in: spec.burn_in,
        thin: spec.thin,
    };
    let chains = proximal_chains(
        &target,
        step.eta,
        layout,
        &spec.x_init,
        &cfg.fors_params(),
        &pc,
        spec.n_chains,
        cfg.seed,
    )?;
    let samples: Vec<Vec<f64>> = chains.iter().flat_map(|c| c.samples.iter().cloned()).collect();
    let mut counts = Counts {
        samples: samples.len() as u64,
        gradient_queries: Some(0),
        ..Counts::default()
    };
    for c in &chains {
        counts.outer_iterations += c.report.outer_iterations;
        counts.estimator_draws += c.report.estimator_draws;
        counts.clipped_draws += c.report.clipped_draws;
        *counts.gradient_queries.get_or_insert(0) += c.report.gradient_queries;
    }
    let sweeps = (spec.iterations * spec.n_chains) as u64;
    let mut stats = Stats::default();
    stats.put("eta", step.eta);
    stats.put("eta_max", step.eta_max);
    stats.put("clip_rate", ratio(counts.clipped_draws, counts.estimator_draws));
    stats.put(
        "gradient_queries_per_iteration",
        ratio(counts.gradient_queries.unwrap_or(0), sweeps),
    );
    stats.put("trials_per_iteration", ratio(counts.outer_iterations, sweeps));
    if samples.len() >= 2 {
        put_moments(&mut stats, &samples)?;
    }
    let truth = stationary_marginal(spec.potential)?.map(|m| m.mean_var());
    let per_chain = chains.first().map_or(0, |c| c.samples.len());
    let batches = (per_chain / 20).clamp(2, 50);
    for i in 0..spec.dim {
        let c = i + 1;
        let mut est = 0.0;
        let mut var_sum = 0.0;
        let mut have_se = per_chain >= 2 * batches;
        for chain in &chains {
            let sq: Vec<f64> = chain.samples.iter().map(|x| x[i] * x[i]).collect();
            est += sq.iter().sum::<f64>() / sq.len().max(1) as f64;
            if have_se {
                match batch_means_se(&sq, batches) {
                    Ok(se) => var_sum += se * se,
                    Err(_) => have_se = false,
                }
            }
        }
        let k = chains.len() as f64;
        est /= k;
        stats.put(format!("m2_x{c}"), est);
        let se = var_sum.sqrt() / k;
        if have_se {
            stats.put(format!("m2_se_x{c}"), se);
        }
        if let Some((mean, var)) = truth {
            let m2 = var + mean * mean;
            stats.put(format!("m2_truth_x{c}"), m2);
            stats.put(format!("mean_truth_x{c}"), mean);
            stats.put(format!("var_truth_x{c}"), var);
            if have_se && se > 0.0 {
                stats.put(format!("m2_z_x{c}"), (est - m2) / se);
            }
        }
    }
    Ok(Artifacts {
        samples: Some(samples),
        counts,
        metrics: Vec::new(),
        stats,
        table: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_draws_do_not_depend_on_thread_count() {
        let draw = |rng: &mut SimRng| Ok(rng.random::<u64>());
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a: Vec<u64> = one.install(|| chunked(5000, 9, draw)).unwrap();
        let b: Vec<u64> = three.install(|| chunked(5000, 9, draw)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5000);
    }

    #[test]
    fn logcosh_stationary_second_moment() {
        let law = stationary_marginal(Potential::LogcoshQuadratic { a: 1.0, lambda: 1.0 })
            .unwrap()
            .unwrap();
        let (m, v) = law.mean_var();
        assert!(m.abs() < 1e-10);
        assert!((v - 0.591_834_114_930_572).abs() < 1e-8, "{v}");
    }

    #[test]
    fn numeric_tilt_marginal_matches_closed_form_when_a_is_zero() {
        let (y, eta, lambda) = (0.7, 0.1, 2.0);
        let numeric = tilt_marginal(Potential::LogcoshQuadratic { a: 0.0, lambda }, y, eta).unwrap();
        let exact = tilt_marginal(Potential::Quadratic { lambda }, y, eta).unwrap();
        let (m1, v1) = numeric.mean_var();
        let (m2, v2) = exact.mean_var();
        assert!((m1 - m2).abs() < 1e-9 && (v1 - v2).abs() < 1e-9);
        for x in [0.2, 0.5, 0.58, 0.9] {
            assert!((numeric.cdf(x) - exact.cdf(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn step_size_rules() {
        let q = Potential::Quadratic { lambda: 1.0 };
        let s = step_size("tilt", q, 1, None, 0.01, 64.0, false).unwrap();
        assert_eq!(s.eta, s.eta_max);
        let err = step_size("tilt", q, 1, Some(1.0), 0.01, 64.0, true)
            .unwrap_err()
            .to_string();
        assert!(err.contains("tilt.eta"), "{err}");
        assert!(step_size("tilt", q, 1, Some(1.0), 0.01, 64.0, false).is_ok());
        let err = step_size("prox", Potential::Constant, 2, None, 0.01, 64.0, false)
            .unwrap_err()
            .to_string();
        assert!(err.contains("prox.eta"), "{err}");
    }
}

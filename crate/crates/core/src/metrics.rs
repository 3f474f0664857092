//! Empirical discrepancy measures used to validate samplers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Minimum sample size accepted by [`ks_1d`].
pub const KS_MIN_SAMPLES: usize = 100;
/// Minimum expected count per cell for [`discrete_chi2`].
pub const CHI2_MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standard_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critical_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<usize>,
}

impl MetricReport {
    fn new(name: &str, value: f64, n_samples: usize) -> Self {
        Self {
            name: name.to_string(),
            value,
            n_samples,
            standard_error: None,
            critical_value: None,
            p_value: None,
            dof: None,
        }
    }
}

fn sorted_finite(samples: &[f64], what: &str) -> Result<Vec<f64>> {
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("{what} contains non-finite values")));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Asymptotic Kolmogorov survival function `P(√n D_n > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut acc = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        acc += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * acc).clamp(0.0, 1.0)
}

/// Kolmogorov–Smirnov distance `sup |F_n - F|`, with the 95% critical value
/// `1.358/√n` and the asymptotic p-value.
///
/// `cdf` is probed at every sample; a decrease along the sorted samples or a
/// value outside `[0, 1]` is reported as [`Error::InvalidCdf`].
pub fn ks_1d<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<MetricReport> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "KS needs at least {KS_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let xs = sorted_finite(samples, "KS sample")?;
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut prev = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidCdf(format!("cdf({x}) = {f} is outside [0, 1]")));
        }
        if f < prev {
            return Err(Error::InvalidCdf(format!("cdf decreases to {f} at {x} from {prev}")));
        }
        prev = f;
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let mut report = MetricReport::new("ks", d, xs.len());
    report.critical_value = Some(1.358 / n.sqrt());
    report.p_value = Some(kolmogorov_sf(n.sqrt() * d));
    Ok(report)
}

/// 1-Wasserstein distance between two empirical laws, `∫ |F_a - F_b|`.
///
/// For equal sizes this is the mean absolute difference of order
/// statistics. Unequal sizes use the exact CDF integral, no resampling.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<MetricReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("W1 needs two non-empty samples"));
    }
    let xa = sorted_finite(a, "W1 sample")?;
    let xb = sorted_finite(b, "W1 sample")?;
    let value = if xa.len() == xb.len() {
        xa.iter().zip(&xb).map(|(p, q)| (p - q).abs()).sum::<f64>() / xa.len() as f64
    } else {
        let (na, nb) = (xa.len() as f64, xb.len() as f64);
        let (mut i, mut j) = (0usize, 0usize);
        let mut acc = 0.0;
        let mut last = xa[0].min(xb[0]);
        while i < xa.len() || j < xb.len() {
            let next = match (xa.get(i), xb.get(j)) {
                (Some(p), Some(q)) => p.min(*q),
                (Some(p), None) => *p,
                (None, Some(q)) => *q,
                (None, None) => unreachable!(),
            };
            acc += (i as f64 / na - j as f64 / nb).abs() * (next - last);
            while i < xa.len() && xa[i] == next {
                i += 1;
            }
            while j < xb.len() && xb[j] == next {
                j += 1;
            }
            last = next;
        }
        acc
    };
    Ok(MetricReport::new("w1", value, xa.len().min(xb.len())))
}

/// Sample mean and unbiased covariance of d-vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub cov: Vec<Vec<f64>>,
    /// `√(cov_ii / n)`.
    pub mean_se: Vec<f64>,
    /// Plug-in standard error of `cov_ii`, `√((m4 - s⁴)/n)`.
    pub var_se: Vec<f64>,
}

pub fn moments(samples: &[Vec<f64>]) -> Result<Moments> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid(format!("covariance needs at least 2 samples, got {n}")));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::invalid("samples must share a positive dimension"));
    }
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut cov = vec![vec![0.0; d]; d];
    let mut m4 = vec![0.0; d];
    for s in samples {
        for i in 0..d {
            let di = s[i] - mean[i];
            m4[i] += di.powi(4);
            for j in i..d {
                cov[i][j] += di * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= nf - 1.0;
            cov[j][i] = cov[i][j];
        }
    }
    let mean_se = (0..d).map(|i| (cov[i][i] / nf).sqrt()).collect();
    let var_se = (0..d)
        .map(|i| ((m4[i] / nf - cov[i][i] * cov[i][i]).max(0.0) / nf).sqrt())
        .collect();
    if mean.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::invalid("samples contain non-finite values"));
    }
    Ok(Moments {
        n,
        mean,
        cov,
        mean_se,
        var_se,
    })
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means; `batches` must be at least 2 and at most `series.len()`.
pub fn batch_means_se(series: &[f64], batches: usize) -> Result<f64> {
    if batches < 2 || batches > series.len() {
        return Err(Error::invalid(format!(
            "batch means needs 2 <= batches <= {}, got {batches}",
            series.len()
        )));
    }
    let size = series.len() / batches;
    let means: Vec<f64> = series
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let b = means.len() as f64;
    let grand = means.iter().sum::<f64>() / b;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (b - 1.0);
    Ok((var / b).sqrt())
}

/// What [`discrete_chi2`] does with cells whose expected count is below 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparseCells {
    #[default]
    Error,
    /// Pool sparse cells, in key order, into a single cell.
    Merge,
}

/// Pearson χ² goodness of fit of `counts` against `pmf`.
///
/// Keys present in `counts` but absent from `pmf` are an error (zero
/// probability cannot be observed).
pub fn discrete_chi2<K: Ord + std::fmt::Debug>(
    counts: &BTreeMap<K, u64>,
    pmf: &BTreeMap<K, f64>,
    sparse: SparseCells,
) -> Result<MetricReport> {
    let total_p: f64 = pmf.values().sum();
    if pmf.values().any(|p| !(*p >= 0.0)) || (total_p - 1.0).abs() > 1e-10 {
        return Err(Error::invalid(format!(
            "pmf must be nonnegative and sum to 1, sums to {total_p}"
        )));
    }
    if let Some(k) = counts.keys().find(|k| !pmf.contains_key(*k)) {
        return Err(Error::invalid(format!("observed point {k:?} has no pmf entry")));
    }
    let n: u64 = counts.values().sum();
    if n == 0 {
        return Err(Error::invalid("chi-square needs at least one observation"));
    }
    let nf = n as f64;
    let mut cells: Vec<(f64, f64)> = Vec::with_capacity(pmf.len());
    let mut pooled = (0.0, 0.0);
    let mut any_pooled = false;
    for (k, p) in pmf {
        let expected = nf * p;
        let observed = counts.get(k).copied().unwrap_or(0) as f64;
        if expected < CHI2_MIN_EXPECTED {
            match sparse {
                SparseCells::Error => {
                    return Err(Error::invalid(format!(
                        "cell {k:?} expects {expected:.3} < {CHI2_MIN_EXPECTED} observations"
                    )))
                }
                SparseCells::Merge => {
                    pooled.0 += observed;
                    pooled.1 += expected;
                    any_pooled = true;
                }
            }
        } else {
            cells.push((observed, expected));
        }
    }
    if any_pooled {
        if pooled.1 >= CHI2_MIN_EXPECTED || cells.is_empty() {
            cells.push(pooled);
        } else {
            // Fold an undersized pool into the smallest regular cell.
            let idx = (0..cells.len())
                .min_by(|a, b| cells[*a].1.total_cmp(&cells[*b].1))
                .expect("non-empty");
            cells[idx].0 += pooled.0;
            cells[idx].1 += pooled.1;
        }
    }
    cells.retain(|(_, e)| *e > 0.0);
    if cells.len() < 2 {
        return Err(Error::invalid("chi-square needs at least two cells with positive mass"));
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = cells.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::NumericalFailure(e.to_string()))?;
    let mut report = MetricReport::new("chi2", stat, n as usize);
    report.dof = Some(dof);
    report.p_value = Some(dist.sf(stat));
    report.critical_value = Some(dist.inverse_cdf(0.999));
    Ok(report)
}

/// Total-variation distance between the histogram of `samples` on `cells`
/// equal bins of `[lo, hi]` and the bin masses of `cdf`. Mass outside the
/// interval forms one extra bin.
pub fn grid_tv_1d<F: Fn(f64) -> f64>(samples: &[f64], cdf: F, lo: f64, hi: f64, cells: usize) -> Result<MetricReport> {
    if samples.is_empty() || cells == 0 || !(lo < hi) {
        return Err(Error::invalid("grid TV needs samples, cells >= 1 and lo < hi"));
    }
    let width = (hi - lo) / cells as f64;
    let mut hist = vec![0u64; cells + 1];
    for &x in samples {
        if !x.is_finite() {
            return Err(Error::invalid("grid TV sample contains non-finite values"));
        }
        let k = ((x - lo) / width).floor();
        let idx = if k >= 0.0 && k < cells as f64 {
            k as usize
        } else {
            cells
        };
        hist[idx] += 1;
    }
    let n = samples.len() as f64;
    let mut tv = 0.0;
    let mut inside = 0.0;
    for (k, h) in hist.iter().take(cells).enumerate() {
        let a = lo + k as f64 * width;
        let mass = cdf(a + width) - cdf(a);
        if mass < -1e-12 {
            return Err(Error::InvalidCdf(format!("negative mass on bin starting at {a}")));
        }
        inside += mass;
        tv += (*h as f64 / n - mass).abs();
    }
    tv += (hist[cells] as f64 / n - (1.0 - inside)).abs();
    Ok(MetricReport::new("grid_tv", 0.5 * tv, samples.len()))
}

//! One-dimensional quadrature: adaptive Simpson, Gauss–Hermite, and a
//! tabulated CDF built on top of adaptive Simpson.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 50;

/// `∫_a^b f` to absolute tolerance `tol` by adaptive Simpson with Richardson
/// correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule for
/// `∫ exp(-x²) g(x) dx`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > 200 {
        return Err(Error::invalid(format!(
            "Gauss-Hermite order must be in 1..=200, got {n}"
        )));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        // Initial guesses for the largest roots, then successive roots.
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // Orthonormal Hermite recurrence.
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    Ok((nodes, weights))
}

/// `E[g(X)]` for `X ~ N(mean, var)` with an `n`-point Gauss–Hermite rule.
pub fn gaussian_expectation<F: Fn(f64) -> f64>(g: F, mean: f64, var: f64, n: usize) -> Result<f64> {
    let (nodes, weights) = gauss_hermite(n)?;
    let scale = (2.0 * var).sqrt();
    Ok(nodes
        .iter()
        .zip(&weights)
        .map(|(x, w)| w * g(mean + scale * x))
        .sum::<f64>()
        / PI.sqrt())
}

/// Normalized CDF of an unnormalized 1D density supported (numerically) on
/// `[lo, hi]`, tabulated on equal cells.
pub struct QuadratureCdf<F> {
    density: F,
    lo: f64,
    width: f64,
    /// Unnormalized mass to the left of each cell boundary.
    cumulative: Vec<f64>,
    tol: f64,
}

impl<F: Fn(f64) -> f64> QuadratureCdf<F> {
    pub fn new(density: F, lo: f64, hi: f64, cells: usize, tol: f64) -> Result<Self> {
        if !(lo < hi) || cells == 0 {
            return Err(Error::invalid("quadrature interval must be non-empty"));
        }
        let width = (hi - lo) / cells as f64;
        let mut cumulative = Vec::with_capacity(cells + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for k in 0..cells {
            let a = lo + k as f64 * width;
            acc += adaptive_simpson(&density, a, a + width, tol / cells as f64);
            cumulative.push(acc);
        }
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(Error::DegenerateDensity(format!("total mass {acc} on [{lo}, {hi}]")));
        }
        Ok(Self {
            density,
            lo,
            width,
            cumulative,
            tol,
        })
    }

    pub fn total_mass(&self) -> f64 {
        *self.cumulative.last().expect("at least one boundary")
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let cells = self.cumulative.len() - 1;
        if x <= self.lo {
            return 0.0;
        }
        let pos = (x - self.lo) / self.width;
        if pos >= cells as f64 {
            return 1.0;
        }
        let k = pos.floor() as usize;
        let start = self.lo + k as f64 * self.width;
        let partial = adaptive_simpson(&self.density, start, x, self.tol / cells as f64);
        ((self.cumulative[k] + partial) / self.total_mass()).clamp(0.0, 1.0)
    }

    /// `∫ g(x) density(x) dx / ∫ density` over the tabulated interval.
    pub fn expectation<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        let cells = self.cumulative.len() - 1;
        let mut acc = 0.0;
        for k in 0..cells {
            let a = self.lo + k as f64 * self.width;
            acc += adaptive_simpson(
                &|x| g(x) * (self.density)(x),
                a,
                a + self.width,
                self.tol / cells as f64,
            );
        }
        acc / self.total_mass()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_polynomial_and_gaussian() {
        let v = adaptive_simpson(&|x: f64| x.powi(4), 0.0, 2.0, 1e-12);
        assert!((v - 32.0 / 5.0).abs() < 1e-10);
        let g = adaptive_simpson(&|x: f64| (-0.5 * x * x).exp(), -12.0, 12.0, 1e-12);
        assert!((g - (2.0 * PI).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn hermite_moments() {
        // E[X^2] = v, E[X^4] = 3v² for X ~ N(0, v).
        let v = 2.5;
        let m2 = gaussian_expectation(|x| x * x, 0.0, v, 20).unwrap();
        let m4 = gaussian_expectation(|x| x.powi(4), 0.0, v, 20).unwrap();
        assert!((m2 - v).abs() < 1e-12);
        assert!((m4 - 3.0 * v * v).abs() < 1e-10);
        // E[cos X] = exp(-v/2)
        let c = gaussian_expectation(f64::cos, 0.0, 1.0, 60).unwrap();
        assert!((c - (-0.5f64).exp()).abs() < 1e-13);
        let (_, w) = gauss_hermite(7).unwrap();
        assert!((w.iter().sum::<f64>() - PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn tabulated_cdf_of_standard_normal() {
        let cdf = QuadratureCdf::new(|x: f64| (-0.5 * x * x).exp(), -10.0, 10.0, 200, 1e-10).unwrap();
        assert!((cdf.cdf(0.0) - 0.5).abs() < 1e-10);
        // Φ(1) = 0.8413447460685429
        assert!((cdf.cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-9);
        assert_eq!(cdf.cdf(-20.0), 0.0);
        assert_eq!(cdf.cdf(20.0), 1.0);
        assert!((cdf.expectation(|x| x * x) - 1.0).abs() < 1e-9);
    }
}

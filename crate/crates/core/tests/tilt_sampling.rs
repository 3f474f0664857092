#![allow(clippy::needless_range_loop)]

use fors_core::metrics::{ks_1d, moments};
use fors_core::proximal::{prox_solve, LogConcaveTarget};
use fors_core::quadrature::QuadratureCdf;
use fors_core::rng::{gaussian_vec, substream};
use fors_core::tilt::{path_eval, sample_tilt, HolderSpec, TiltEstimator, TiltProblem};
use fors_core::ForsParams;
use rand::Rng;

#[test]
fn quadratic_tilt_matches_conjugate_gaussian() {
    let (lambda, eta) = (1.0, 0.05);
    let x0 = vec![1.0, -2.0];
    let grad = move |x: &[f64]| x.iter().map(|v| lambda * v).collect::<Vec<_>>();
    let x_plus: Vec<f64> = x0.iter().map(|v| v / (1.0 + eta * lambda)).collect();
    let problem = TiltProblem::new(grad, x0.clone(), eta, x_plus.clone()).unwrap();
    let params = ForsParams::default();
    let mut rng = substream(5, 0);
    let n = 100_000;
    let mut samples = Vec::with_capacity(n);
    let (mut draws, mut clipped) = (0u64, 0u64);
    for _ in 0..n {
        let s = sample_tilt(&problem, &params, &mut rng).unwrap();
        assert_eq!(s.gradient_queries, s.outcome.estimator_draws + 1);
        draws += s.outcome.estimator_draws;
        clipped += s.clipped_draws;
        samples.push(s.outcome.point);
    }
    let m = moments(&samples).unwrap();
    let var = eta / (1.0 + eta * lambda);
    for i in 0..2 {
        assert!(
            (m.mean[i] - x_plus[i]).abs() < 4.0 * m.mean_se[i],
            "mean {i}: {}",
            m.mean[i]
        );
        assert!(
            (m.cov[i][i] - var).abs() < 4.0 * m.var_se[i],
            "var {i}: {}",
            m.cov[i][i]
        );
    }
    assert!((clipped as f64) < 0.01 * draws as f64);
}

#[test]
fn constant_potential_gives_the_proposal() {
    let x0 = vec![0.5];
    let problem = TiltProblem::new(|x: &[f64]| vec![0.0; x.len()], x0, 0.3, vec![0.5]).unwrap();
    let mut rng = substream(6, 0);
    let xs: Vec<f64> = (0..20_000)
        .map(|_| {
            let s = sample_tilt(&problem, &ForsParams::default(), &mut rng).unwrap();
            assert_eq!(s.clipped_draws, 0);
            s.outcome.point[0]
        })
        .collect();
    let ks = ks_1d(&xs, |x| fors_core::scores::normal_cdf((x - 0.5) / 0.3f64.sqrt())).unwrap();
    assert!(ks.p_value.unwrap() > 1e-3, "{ks:?}");
}

fn quartic_grad(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v * v * v).collect()
}

#[test]
fn quartic_tilt_matches_quadrature_cdf() {
    let (x0, eta) = (1.2, 0.05);
    // Quartic gradients are not globally Lipschitz; the declared constant
    // only matters for step-size checks, which are not used here.
    let target = LogConcaveTarget::new(1, HolderSpec::smooth(10.0).unwrap(), quartic_grad).unwrap();
    let prox = prox_solve(&target, &[x0], eta, 1e-12, 1000).unwrap();
    assert!(prox.converged);
    let problem = TiltProblem::new(quartic_grad, vec![x0], eta, prox.x_plus.clone()).unwrap();
    let mut rng = substream(8, 0);
    let xs: Vec<f64> = (0..100_000)
        .map(|_| {
            sample_tilt(&problem, &ForsParams::default(), &mut rng)
                .unwrap()
                .outcome
                .point[0]
        })
        .collect();
    let log_density = move |x: f64| -0.25 * x.powi(4) - (x - x0).powi(2) / (2.0 * eta);
    let peak = log_density(prox.x_plus[0]);
    let cdf = QuadratureCdf::new(move |x: f64| (log_density(x) - peak).exp(), -10.0, 10.0, 2000, 1e-9).unwrap();
    let ks = ks_1d(&xs, |x| cdf.cdf(x)).unwrap();
    assert!(ks.value < 0.01, "{ks:?}");
}

#[test]
fn estimator_is_unbiased_for_log_ratio_differences() {
    // log(ν/q)(x) = -f(x) + ⟨∇f(x₊), x⟩ + const for the proposal N(x̂, ηI).
    let (x0, eta) = (0.7, 0.1);
    let target = LogConcaveTarget::new(1, HolderSpec::smooth(10.0).unwrap(), quartic_grad).unwrap();
    let x_plus = prox_solve(&target, &[x0], eta, 1e-12, 1000).unwrap().x_plus;
    let problem = TiltProblem::new(quartic_grad, vec![x0], eta, x_plus.clone()).unwrap();
    let est = TiltEstimator::new(&problem, 1.0).unwrap();
    let g_plus = est.grad_plus()[0];
    let log_ratio = |x: f64| -0.25 * x.powi(4) + g_plus * x;
    let mut rng = substream(9, 0);
    let n = 200_000;
    let mean_w = |x: f64, rng: &mut fors_core::rng::SimRng| {
        let ws: Vec<f64> = (0..n)
            .map(|_| {
                let r: f64 = rng.random();
                let z = gaussian_vec(1, eta, rng);
                est.raw_estimate(&[x], &z, r).unwrap()
            })
            .collect();
        let m = ws.iter().sum::<f64>() / n as f64;
        let v = ws.iter().map(|w| (w - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (m, (v / n as f64).sqrt())
    };
    let (a, b) = (0.2, 1.0);
    let (wa, sa) = mean_w(a, &mut rng);
    let (wb, sb) = mean_w(b, &mut rng);
    let exact = log_ratio(a) - log_ratio(b);
    let se = (sa * sa + sb * sb).sqrt();
    assert!(((wa - wb) - exact).abs() < 5.0 * se, "{} vs {exact} (se {se})", wa - wb);
}

#[test]
fn path_velocity_matches_finite_differences() {
    let mut rng = substream(10, 0);
    let h = 1e-6;
    for _ in 0..100 {
        let d = rng.random_range(1..6);
        let x = gaussian_vec(d, 4.0, &mut rng);
        let xhat = gaussian_vec(d, 4.0, &mut rng);
        let z = gaussian_vec(d, 1.0, &mut rng);
        let r = 0.3;
        let (_, vel) = path_eval(&x, &xhat, &z, r).unwrap();
        let (up, _) = path_eval(&x, &xhat, &z, r + h).unwrap();
        let (dn, _) = path_eval(&x, &xhat, &z, r - h).unwrap();
        let fd: Vec<f64> = up.iter().zip(&dn).map(|(u, l)| (u - l) / (2.0 * h)).collect();
        let err: f64 = fd.iter().zip(&vel).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = vel.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-6 * scale, "relative error {}", err / scale);
    }
}

#[test]
fn path_endpoints_are_exact() {
    let mut rng = substream(13, 0);
    for _ in 0..50 {
        let x = gaussian_vec(3, 9.0, &mut rng);
        let xhat = gaussian_vec(3, 9.0, &mut rng);
        let z = gaussian_vec(3, 1.0, &mut rng);
        let (g1, _) = path_eval(&x, &xhat, &z, 1.0).unwrap();
        let (g0, _) = path_eval(&x, &xhat, &z, 0.0).unwrap();
        for i in 0..3 {
            assert!((g1[i] - x[i]).abs() <= 4.0 * f64::EPSILON * x[i].abs().max(1.0));
            assert_eq!(g0[i], xhat[i] + z[i]);
        }
    }
}

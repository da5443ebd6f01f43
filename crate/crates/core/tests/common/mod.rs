//! Oracles shared by the integration tests. Nothing here calls into the
//! crate's own GP linear algebra.
#![allow(dead_code)]

use gpice::gp::{GpProblem, KernelHyperparams, KernelKind};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Covariance written out from the closed forms, in original input units.
pub fn kernel(kind: KernelKind, a: &[f64], b: &[f64], hyp: &KernelHyperparams) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(k, (x, y))| {
            let l = hyp.lengthscales[k.min(hyp.lengthscales.len() - 1)];
            ((x - y) / l).powi(2)
        })
        .sum();
    let r = r2.sqrt();
    let sf2 = hyp.signal_std * hyp.signal_std;
    match kind {
        KernelKind::Matern52 => {
            let s = 5f64.sqrt() * r;
            sf2 * (1.0 + s + 5.0 * r2 / 3.0) * (-s).exp()
        }
        KernelKind::SquaredExponential => sf2 * (-0.5 * r2).exp(),
    }
}

/// Mean and variance of `y*` given `y` from the explicitly assembled joint
/// Gaussian over `[y; y*]` with a constant mean equal to the sample mean.
pub fn joint_gaussian_posterior(
    x: &[Vec<f64>],
    y: &[f64],
    hyp: &KernelHyperparams,
    query: &[f64],
) -> (f64, f64) {
    let n = x.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let mut pts: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    pts.push(query);
    let sn2 = hyp.noise_std * hyp.noise_std;
    let joint = DMatrix::from_fn(n + 1, n + 1, |i, j| {
        kernel(hyp.kind, pts[i], pts[j], hyp) + if i == j { sn2 } else { 0.0 }
    });
    let a = joint.view((0, 0), (n, n)).into_owned();
    let b = joint.view((0, n), (n, 1)).into_owned();
    let c = joint[(n, n)];
    let a_inv = a.try_inverse().expect("invertible");
    let resid = DVector::from_iterator(n, y.iter().map(|v| v - mean));
    let m = mean + (b.transpose() * &a_inv * resid)[(0, 0)];
    let v = c - (b.transpose() * &a_inv * &b)[(0, 0)];
    (m, v)
}

pub struct RandomProblem {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub hyp: KernelHyperparams,
    pub queries: Vec<Vec<f64>>,
}

pub fn random_problem(seed: u64, max_n: usize, max_d: usize) -> RandomProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_n);
    let d = rng.gen_range(1..=max_d);
    let kind = if rng.gen_bool(0.5) {
        KernelKind::Matern52
    } else {
        KernelKind::SquaredExponential
    };
    let point = |rng: &mut ChaCha8Rng| (0..d).map(|_| rng.gen_range(0.0..3.0)).collect();
    let x: Vec<Vec<f64>> = (0..n).map(|_| point(&mut rng)).collect();
    let queries = (0..3).map(|_| point(&mut rng)).collect();
    let y = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let hyp = KernelHyperparams {
        kind,
        signal_std: rng.gen_range(0.5..2.0),
        lengthscales: (0..d).map(|_| rng.gen_range(0.3..3.0)).collect(),
        noise_std: rng.gen_range(0.05..0.5),
    };
    RandomProblem {
        x,
        y,
        hyp,
        queries,
    }
}

/// Central differences of the NLML in log-parameter space.
pub fn fd_gradient(problem: &GpProblem, theta: &[f64], h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|k| {
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            plus[k] += h;
            minus[k] -= h;
            let fp = gpice::gp::nlml_value(problem, &plus).unwrap();
            let fm = gpice::gp::nlml_value(problem, &minus).unwrap();
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `∫₀^∞ exp(−z·cosh t)·cosh(νt) dt` by composite Simpson on `[0, 12]`.
pub fn bessel_k(nu: f64, z: f64) -> f64 {
    let (upper, steps) = (12.0, 24_000);
    let h = upper / steps as f64;
    let f = |t: f64| (-z * t.cosh()).exp() * (nu * t).cosh();
    let mut sum = f(0.0) + f(upper);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * h);
    }
    sum * h / 3.0
}

/// Matérn covariance in the general Bessel form.
pub fn matern_bessel(nu: f64, r: f64, signal_std: f64) -> f64 {
    if r == 0.0 {
        return signal_std * signal_std;
    }
    let z = (2.0 * nu).sqrt() * r;
    // Γ(5/2) = 3√π/4; only ν = 5/2 is needed here.
    assert_eq!(nu, 2.5);
    let gamma = 0.75 * std::f64::consts::PI.sqrt();
    signal_std * signal_std * 2f64.powf(1.0 - nu) / gamma * z.powf(nu) * bessel_k(nu, z)
}

pub fn spec(capacity: f64, noise_std: f64, resistance: f64, seed: u64) -> gpice::synth::SynthCellSpec {
    use gpice::synth::{OcvShape, Sigmoid, SynthCellSpec};
    SynthCellSpec {
        cell_id: format!("cell{seed}"),
        initial_capacity: capacity,
        fade: vec![1.0],
        ocv: OcvShape {
            v0: 3.0,
            slope: 0.7,
            steps: vec![
                Sigmoid { center: 0.3, width: 0.06, amplitude: 0.2 },
                Sigmoid { center: 0.7, width: 0.1, amplitude: 0.15 },
            ],
        },
        resistance,
        resistance_growth: 0.0,
        noise_std,
        seed,
    }
}

pub fn curve_for(capacity: f64, noise_std: f64, resistance: f64, seed: u64, current: f64) -> gpice::dataio::GvCurve {
    gpice::synth::generate_curve(&spec(capacity, noise_std, resistance, seed), 0, current, 1.0).unwrap()
}

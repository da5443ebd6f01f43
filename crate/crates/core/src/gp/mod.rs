//! Exact Gaussian process regression.
//!
//! Hyperparameters live in log space as `[log σ_f, log ρ_1.., log σ_n]`
//! with one lengthscale per input dimension (ARD) or a single shared one.
//! Inputs are optionally divided by their per-dimension training standard
//! deviation before the kernel sees them; outputs are mean-centered. The
//! model is trained by minimising the negative log marginal likelihood from
//! several starting points.

mod io;
pub mod kernel;
pub mod linalg;
pub mod optim;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureSample;
pub use kernel::{kernel_matern52, kernel_sqexp, KernelKind};
use linalg::Cholesky;
pub use optim::{LbfgsOptions, Minimum};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Kernel hyperparameters in the units of the original inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelHyperparams {
    pub kind: KernelKind,
    /// σ_f, amp-hours.
    pub signal_std: f64,
    /// ρ per input dimension; a single entry is shared by all dimensions.
    pub lengthscales: Vec<f64>,
    /// σ_n, amp-hours.
    pub noise_std: f64,
}

impl KernelHyperparams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.signal_std)
            || !ok(self.noise_std)
            || self.lengthscales.is_empty()
            || !self.lengthscales.iter().all(|&l| ok(l))
        {
            return Err(Error::InvalidConfig(format!(
                "hyperparameters must be strictly positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// ŷ*, amp-hours.
    pub mean: f64,
    /// σ*, amp-hours; includes the observation noise.
    pub std: f64,
}

/// Training data prepared for likelihood evaluation: scaled inputs and
/// centered outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GpProblem {
    pub kind: KernelKind,
    pub ard: bool,
    n: usize,
    d: usize,
    /// Original inputs, row-major `n × d`.
    x: Vec<f64>,
    /// Inputs divided by `scale`.
    z: Vec<f64>,
    scale: Vec<f64>,
    y_centered: Vec<f64>,
    y_mean: f64,
}

fn population_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

impl GpProblem {
    pub fn new(
        x: &[Vec<f64>],
        y: &[f64],
        kind: KernelKind,
        ard: bool,
        standardize: bool,
    ) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        if x.is_empty() {
            return Err(Error::InsufficientData { need: 1, got: 0 });
        }
        let d = x[0].len();
        if d == 0 {
            return Err(Error::EmptyInput("input vectors have no dimensions".into()));
        }
        if let Some(bad) = x.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::EmptyInput("non-finite training value".into()));
        }
        let scale: Vec<f64> = (0..d)
            .map(|k| {
                if !standardize {
                    return 1.0;
                }
                let s = population_std(x.iter().map(|r| r[k]));
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let flat: Vec<f64> = x.iter().flatten().copied().collect();
        let y_mean = y.iter().sum::<f64>() / y.len() as f64;
        let y_centered = y.iter().map(|v| v - y_mean).collect();
        Ok(Self::from_parts(kind, ard, d, flat, scale, y_centered, y_mean))
    }

    /// Like [`GpProblem::new`] but with a zero prior mean on the raw outputs
    /// instead of centering them.
    pub fn new_uncentered(
        x: &[Vec<f64>],
        y: &[f64],
        kind: KernelKind,
        ard: bool,
        standardize: bool,
    ) -> Result<Self> {
        let mut p = Self::new(x, y, kind, ard, standardize)?;
        p.y_centered = y.to_vec();
        p.y_mean = 0.0;
        Ok(p)
    }

    fn from_parts(
        kind: KernelKind,
        ard: bool,
        d: usize,
        x: Vec<f64>,
        scale: Vec<f64>,
        y_centered: Vec<f64>,
        y_mean: f64,
    ) -> Self {
        let n = x.len() / d;
        let z = x
            .iter()
            .enumerate()
            .map(|(k, v)| v / scale[k % d])
            .collect();
        GpProblem {
            kind,
            ard,
            n,
            d,
            x,
            z,
            scale,
            y_centered,
            y_mean,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dims(&self) -> usize {
        self.d
    }

    pub fn input_scale(&self) -> &[f64] {
        &self.scale
    }

    /// Number of log-hyperparameters.
    pub fn num_params(&self) -> usize {
        2 + if self.ard { self.d } else { 1 }
    }

    fn lengthscales(&self, theta: &[f64]) -> Vec<f64> {
        let ls = &theta[1..theta.len() - 1];
        (0..self.d)
            .map(|k| if self.ard { ls[k] } else { ls[0] }.exp())
            .collect()
    }

    /// Inputs divided by the lengthscales, row-major.
    fn scaled_inputs(&self, rho: &[f64]) -> Vec<f64> {
        self.z
            .iter()
            .enumerate()
            .map(|(k, v)| v / rho[k % self.d])
            .collect()
    }

    /// Converts original-unit hyperparameters to this problem's log space.
    pub fn log_params(&self, hyp: &KernelHyperparams) -> Result<Vec<f64>> {
        hyp.validate()?;
        let mut theta = vec![hyp.signal_std.ln()];
        if self.ard {
            if hyp.lengthscales.len() != self.d && hyp.lengthscales.len() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    got: hyp.lengthscales.len(),
                });
            }
            for k in 0..self.d {
                let l = hyp.lengthscales[k.min(hyp.lengthscales.len() - 1)];
                theta.push((l / self.scale[k]).ln());
            }
        } else {
            if hyp.lengthscales.len() != 1 {
                return Err(Error::InvalidConfig(
                    "isotropic kernel takes exactly one lengthscale".into(),
                ));
            }
            if self.scale.iter().any(|&s| s != self.scale[0]) {
                return Err(Error::InvalidConfig(
                    "isotropic hyperparameters need unstandardized or equally scaled inputs"
                        .into(),
                ));
            }
            theta.push((hyp.lengthscales[0] / self.scale[0]).ln());
        }
        theta.push(hyp.noise_std.ln());
        Ok(theta)
    }

    /// Original-unit hyperparameters for a log-space vector.
    pub fn hyperparams(&self, theta: &[f64]) -> KernelHyperparams {
        let rho = self.lengthscales(theta);
        KernelHyperparams {
            kind: self.kind,
            signal_std: theta[0].exp(),
            lengthscales: rho.iter().zip(&self.scale).map(|(r, s)| r * s).collect(),
            noise_std: theta[theta.len() - 1].exp(),
        }
    }

    /// Noise-free covariance `K(X, X)`.
    fn kernel_matrix(&self, scaled: &[f64], sf2: f64) -> Vec<f64> {
        let (n, d) = (self.n, self.d);
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            let xi = &scaled[i * d..(i + 1) * d];
            k[i * n + i] = sf2;
            for j in 0..i {
                let xj = &scaled[j * d..(j + 1) * d];
                let r2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
                let v = self.kind.eval_sq(r2, sf2);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    }
}

/// Factors `K + σ_n²I`, adding jitter `1e-10·mean(diag)` and escalating by
/// ×10 up to `1e-4·mean(diag)` if needed. Returns the factor and the jitter.
fn factor_with_jitter(mut cov: Vec<f64>, n: usize) -> Result<(Cholesky, f64)> {
    if let Some(c) = Cholesky::factor(&cov, n) {
        return Ok((c, 0.0));
    }
    let mean_diag = (0..n).map(|i| cov[i * n + i]).sum::<f64>() / n as f64;
    let mut jitter = 1e-10 * mean_diag;
    let mut applied = 0.0;
    while jitter <= 1e-4 * mean_diag * (1.0 + 1e-9) {
        for i in 0..n {
            cov[i * n + i] += jitter - applied;
        }
        applied = jitter;
        if let Some(c) = Cholesky::factor(&cov, n) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Factorization)
}

/// Negative log marginal likelihood and its gradient with respect to the
/// log-hyperparameters.
pub fn nlml(problem: &GpProblem, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let state = NlmlState::new(problem, theta)?;
    let grad = state.gradient(problem);
    Ok((state.value, grad))
}

/// Value only.
pub fn nlml_value(problem: &GpProblem, theta: &[f64]) -> Result<f64> {
    NlmlState::new(problem, theta).map(|s| s.value)
}

/// Factorization at one `θ`, kept so the gradient can follow a value
/// evaluation without refactoring.
struct NlmlState {
    theta: Vec<f64>,
    value: f64,
    sf2: f64,
    sn2: f64,
    scaled: Vec<f64>,
    chol: Cholesky,
    alpha: Vec<f64>,
}

impl NlmlState {
    fn new(problem: &GpProblem, theta: &[f64]) -> Result<Self> {
        if theta.len() != problem.num_params() {
            return Err(Error::DimensionMismatch {
                expected: problem.num_params(),
                got: theta.len(),
            });
        }
        let n = problem.n;
        let sf2 = (2.0 * theta[0]).exp();
        let sn2 = (2.0 * theta[theta.len() - 1]).exp();
        let rho = problem.lengthscales(theta);
        let scaled = problem.scaled_inputs(&rho);
        let mut cov = problem.kernel_matrix(&scaled, sf2);
        for i in 0..n {
            cov[i * n + i] += sn2;
        }
        let (chol, _) = factor_with_jitter(cov, n)?;
        let alpha = chol.solve(&problem.y_centered);
        let fit = 0.5 * linalg::dot(&problem.y_centered, &alpha);
        let value = fit + chol.half_log_det() + 0.5 * n as f64 * LN_2PI;
        if !value.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(NlmlState {
            theta: theta.to_vec(),
            value,
            sf2,
            sn2,
            scaled,
            chol,
            alpha,
        })
    }

    /// `∂NLML/∂θ = −½ tr((ααᵀ − K⁻¹) ∂K/∂θ)`.
    fn gradient(&self, problem: &GpProblem) -> Vec<f64> {
        let (n, d) = (problem.n, problem.d);
        let (alpha, scaled, sf2) = (&self.alpha, &self.scaled, self.sf2);
        let inv = self.chol.inverse();
        let mut g_sf = 0.0;
        let mut g_sn = 0.0;
        let mut g_rho = vec![0.0; d];
        let mut diff = vec![0.0; d];
        for i in 0..n {
            let w_ii = alpha[i] * alpha[i] - inv[i * n + i];
            g_sf += w_ii * sf2;
            g_sn += w_ii;
            let xi = &scaled[i * d..(i + 1) * d];
            for j in 0..i {
                let w = 2.0 * (alpha[i] * alpha[j] - inv[i * n + j]);
                let xj = &scaled[j * d..(j + 1) * d];
                let mut r2 = 0.0;
                for k in 0..d {
                    diff[k] = (xi[k] - xj[k]) * (xi[k] - xj[k]);
                    r2 += diff[k];
                }
                let (kv, factor) = problem.kind.eval_with_factor(r2, sf2);
                g_sf += w * kv;
                let f = w * factor;
                for k in 0..d {
                    g_rho[k] += f * diff[k];
                }
            }
        }
        let mut grad = Vec::with_capacity(self.theta.len());
        // ∂K/∂log σ_f = 2K_f, ∂K/∂log σ_n = 2σ_n² I.
        grad.push(-g_sf);
        if problem.ard {
            grad.extend(g_rho.iter().map(|g| -0.5 * g));
        } else {
            grad.push(-0.5 * g_rho.iter().sum::<f64>());
        }
        grad.push(-self.sn2 * g_sn);
        grad
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub kind: KernelKind,
    pub ard: bool,
    pub standardize: bool,
    /// Number of optimizer starts; the first sits at the data-driven centre.
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            kind: KernelKind::Matern52,
            ard: true,
            standardize: true,
            restarts: 5,
            seed: 0,
            max_iter: 200,
            grad_tol: 1e-5,
        }
    }
}

/// Outcome of hyperparameter optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct FitInfo {
    pub nlml: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_succeeded: usize,
    /// Objective evaluations summed over all restarts.
    pub evaluations: usize,
}

/// A conditioned Gaussian process.
#[derive(Debug, Clone)]
pub struct GpModel {
    problem: GpProblem,
    theta: Vec<f64>,
    chol: Cholesky,
    alpha: Vec<f64>,
    jitter: f64,
    pub info: Option<FitInfo>,
}

impl GpModel {
    /// Conditions on the training data at fixed log-hyperparameters.
    pub fn condition(problem: GpProblem, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != problem.num_params() {
            return Err(Error::DimensionMismatch {
                expected: problem.num_params(),
                got: theta.len(),
            });
        }
        let sf2 = (2.0 * theta[0]).exp();
        let sn2 = (2.0 * theta[theta.len() - 1]).exp();
        let rho = problem.lengthscales(&theta);
        let scaled = problem.scaled_inputs(&rho);
        let n = problem.n;
        let mut cov = problem.kernel_matrix(&scaled, sf2);
        for i in 0..n {
            cov[i * n + i] += sn2;
        }
        let (chol, jitter) = factor_with_jitter(cov, n)?;
        let alpha = chol.solve(&problem.y_centered);
        Ok(GpModel {
            problem,
            theta,
            chol,
            alpha,
            jitter,
            info: None,
        })
    }

    /// Conditions with hyperparameters given in original input units.
    pub fn with_hyperparams(
        x: &[Vec<f64>],
        y: &[f64],
        hyp: &KernelHyperparams,
        standardize: bool,
    ) -> Result<Self> {
        let ard = hyp.lengthscales.len() > 1 || x.first().map_or(1, Vec::len) == 1;
        let problem = GpProblem::new(x, y, hyp.kind, ard, standardize)?;
        let theta = problem.log_params(hyp)?;
        Self::condition(problem, theta)
    }

    pub fn problem(&self) -> &GpProblem {
        &self.problem
    }

    /// Log-hyperparameters in the (possibly standardized) input space.
    pub fn log_params(&self) -> &[f64] {
        &self.theta
    }

    pub fn hyperparams(&self) -> KernelHyperparams {
        self.problem.hyperparams(&self.theta)
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dims(&self) -> usize {
        self.problem.d
    }

    pub fn num_train(&self) -> usize {
        self.problem.n
    }

    pub fn train_mean(&self) -> f64 {
        self.problem.y_mean
    }

    /// Lower factor of `K + σ_n²I` (plus jitter), row-major.
    pub fn factor(&self) -> &Cholesky {
        &self.chol
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let d = self.problem.d;
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let theta = &self.theta;
        let sf2 = (2.0 * theta[0]).exp();
        let sn2 = (2.0 * theta[theta.len() - 1]).exp();
        let rho = self.problem.lengthscales(theta);
        let scaled = self.problem.scaled_inputs(&rho);
        let q: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(k, v)| v / self.problem.scale[k] / rho[k])
            .collect();
        let mut kstar: Vec<f64> = (0..self.problem.n)
            .map(|i| {
                let r2: f64 = scaled[i * d..(i + 1) * d]
                    .iter()
                    .zip(&q)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                self.problem.kind.eval_sq(r2, sf2)
            })
            .collect();
        let mean = linalg::dot(&kstar, &self.alpha) + self.problem.y_mean;
        self.chol.solve_lower_in_place(&mut kstar);
        let explained = linalg::dot(&kstar, &kstar);
        let mut var = sf2 - explained + sn2 + self.jitter;
        if var < 0.0 {
            if var < -1e-10 {
                warn!("predictive variance {var} clamped to zero");
            }
            var = 0.0;
        }
        Ok(Prediction {
            mean,
            std: var.sqrt(),
        })
    }
}

fn restart_points(problem: &GpProblem, opts: &FitOptions) -> Vec<Vec<f64>> {
    let y_std = population_std(problem.y_centered.iter().copied());
    let y_std = if y_std > 0.0 { y_std } else { 1e-3 * (1.0 + problem.y_mean.abs()) };
    let mut centre = vec![y_std.ln()];
    let input_std: Vec<f64> = (0..problem.d)
        .map(|k| {
            let s = population_std((0..problem.n).map(|i| problem.z[i * problem.d + k]));
            if s > 0.0 {
                s.ln()
            } else {
                0.0
            }
        })
        .collect();
    if problem.ard {
        centre.extend(&input_std);
    } else {
        centre.push(input_std.iter().sum::<f64>() / input_std.len() as f64);
    }
    centre.push((0.05 * y_std).ln());

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let spread = 5f64.ln();
    let mut points = vec![centre.clone()];
    for _ in 1..opts.restarts.max(1) {
        points.push(
            centre
                .iter()
                .map(|c| c + rng.gen_range(-spread..spread))
                .collect(),
        );
    }
    points
}

/// Local optimization of the NLML from `start`.
pub fn optimize_from(
    problem: &GpProblem,
    start: &[f64],
    opts: &FitOptions,
) -> Option<Minimum> {
    let lbfgs = LbfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
        ..LbfgsOptions::default()
    };
    let mut last: Option<NlmlState> = None;
    optim::minimize(
        |t, want_grad| {
            let state = match last.take() {
                Some(s) if s.theta == t => s,
                _ => NlmlState::new(problem, t).ok()?,
            };
            let out = (state.value, want_grad.then(|| state.gradient(problem)));
            last = Some(state);
            Some(out)
        },
        start,
        &lbfgs,
    )
}

/// Optimizes hyperparameters (best of `opts.restarts` starts) and conditions.
pub fn fit(x: &[Vec<f64>], y: &[f64], opts: &FitOptions) -> Result<GpModel> {
    if x.len() < 2 {
        return Err(Error::InsufficientData {
            need: 2,
            got: x.len(),
        });
    }
    let problem = GpProblem::new(x, y, opts.kind, opts.ard, opts.standardize)?;
    fit_problem(problem, opts)
}

pub fn fit_problem(problem: GpProblem, opts: &FitOptions) -> Result<GpModel> {
    if problem.n < 2 {
        return Err(Error::InsufficientData {
            need: 2,
            got: problem.n,
        });
    }
    let starts = restart_points(&problem, opts);
    if nlml_value(&problem, &starts[0]).is_err() {
        return Err(Error::NonFinite);
    }
    let mut best: Option<Minimum> = None;
    let mut succeeded = 0;
    let mut evaluations = 0;
    for start in &starts {
        if let Some(m) = optimize_from(&problem, start, opts) {
            succeeded += 1;
            evaluations += m.evaluations;
            if best.as_ref().is_none_or(|b| m.value < b.value) {
                best = Some(m);
            }
        }
    }
    let best = best.ok_or(Error::NonFinite)?;
    let info = FitInfo {
        nlml: best.value,
        grad_norm: best.grad_norm,
        iterations: best.iterations,
        converged: best.converged,
        restarts_succeeded: succeeded,
        evaluations,
    };
    let mut model = GpModel::condition(problem, best.x)?;
    model.info = Some(info);
    Ok(model)
}

/// Fits on labelled feature samples.
pub fn fit_samples(samples: &[FeatureSample], opts: &FitOptions) -> Result<GpModel> {
    let (x, y) = split_samples(samples)?;
    fit(&x, &y, opts)
}

pub(crate) fn split_samples(samples: &[FeatureSample]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut x = Vec::with_capacity(samples.len());
    let mut y = Vec::with_capacity(samples.len());
    for s in samples {
        let label = s.y.ok_or_else(|| {
            Error::EmptyInput(format!("sample {}/{} has no capacity label", s.cell_id, s.curve_id))
        })?;
        x.push(s.x.clone());
        y.push(label);
    }
    Ok((x, y))
}

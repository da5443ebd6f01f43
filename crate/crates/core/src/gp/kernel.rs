//! Stationary covariance functions of a scaled distance
//! `r = ‖(x − x′) / ρ‖`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelKind {
    /// Matérn with smoothness 5/2.
    #[default]
    Matern52,
    SquaredExponential,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Matern52 => "matern52",
            KernelKind::SquaredExponential => "squared_exponential",
        })
    }
}

impl FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matern52" => Ok(KernelKind::Matern52),
            "squared_exponential" | "sqexp" | "se" => Ok(KernelKind::SquaredExponential),
            other => Err(Error::InvalidConfig(format!(
                "kernel must be matern52 or squared_exponential, got {other:?}"
            ))),
        }
    }
}

/// `σ_f²·(1 + √5·r + 5r²/3)·exp(−√5·r)`.
pub fn kernel_matern52(r: f64, signal_std: f64) -> f64 {
    let s = SQRT5 * r;
    signal_std * signal_std * (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// `σ_f²·exp(−r²/2)`.
pub fn kernel_sqexp(r: f64, signal_std: f64) -> f64 {
    signal_std * signal_std * (-0.5 * r * r).exp()
}

impl KernelKind {
    /// Covariance from the squared scaled distance and `σ_f²`.
    #[inline]
    pub(crate) fn eval_sq(self, r2: f64, sf2: f64) -> f64 {
        match self {
            KernelKind::Matern52 => {
                let s = SQRT5 * r2.sqrt();
                sf2 * (1.0 + s + s * s / 3.0) * (-s).exp()
            }
            KernelKind::SquaredExponential => sf2 * (-0.5 * r2).exp(),
        }
    }

    /// Covariance `k` together with `g(r)`, where
    /// `∂k/∂log ρ_d = g(r)·(Δ_d/ρ_d)²`.
    #[inline]
    pub(crate) fn eval_with_factor(self, r2: f64, sf2: f64) -> (f64, f64) {
        match self {
            KernelKind::Matern52 => {
                let s = SQRT5 * r2.sqrt();
                let e = sf2 * (-s).exp();
                ((1.0 + s + s * s / 3.0) * e, (5.0 / 3.0) * (1.0 + s) * e)
            }
            KernelKind::SquaredExponential => {
                let k = sf2 * (-0.5 * r2).exp();
                (k, k)
            }
        }
    }
}

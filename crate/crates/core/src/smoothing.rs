//! Savitzky-Golay smoothing on a uniform time grid.
//!
//! Curves are first linearly interpolated onto a uniform grid (the filter
//! assumes equal spacing), then each point is replaced by the value of the
//! least-squares polynomial fitted over its window. Points closer than half a
//! window to either end take their value from the polynomial of the first or
//! last full window, evaluated at the point's offset, so the output has the
//! same length as the input.

use nalgebra::DMatrix;

use crate::dataio::GvCurve;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgConfig {
    pub window_length: usize,
    pub polynomial_order: usize,
    /// Seconds between resampled points.
    pub resample_interval: f64,
}

impl Default for SgConfig {
    fn default() -> Self {
        SgConfig {
            window_length: 25,
            polynomial_order: 3,
            resample_interval: 1.0,
        }
    }
}

impl SgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_length.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "sg_window must be odd, got {}",
                self.window_length
            )));
        }
        if self.window_length < self.polynomial_order + 2 {
            return Err(Error::InvalidConfig(format!(
                "sg_window {} must exceed sg_order + 1 = {}",
                self.window_length,
                self.polynomial_order + 1
            )));
        }
        if !(self.resample_interval > 0.0 && self.resample_interval.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sg_interval must be positive, got {}",
                self.resample_interval
            )));
        }
        Ok(())
    }

    /// Shrinks the window to the largest valid odd length that fits `len`
    /// samples. Used for short online segments.
    pub fn clamped_to(&self, len: usize) -> Result<SgConfig> {
        if len >= self.window_length {
            return Ok(*self);
        }
        let window = if len % 2 == 1 { len } else { len.saturating_sub(1) };
        if window < self.polynomial_order + 2 {
            return Err(Error::TooShort(format!(
                "{len} samples cannot hold a window for polynomial order {}",
                self.polynomial_order
            )));
        }
        Ok(SgConfig {
            window_length: window,
            ..*self
        })
    }
}

/// Voltage on a uniform time grid starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedCurve {
    pub time: Vec<f64>,
    pub voltage: Vec<f64>,
    pub source_id: String,
}

impl SmoothedCurve {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn interval(&self) -> f64 {
        self.time[1] - self.time[0]
    }

    pub fn duration(&self) -> f64 {
        self.time[self.time.len() - 1]
    }

    /// Voltage at time `t` by linear interpolation; `None` outside the grid.
    pub fn voltage_at(&self, t: f64) -> Option<f64> {
        interp_uniform(&self.voltage, self.interval(), t)
    }

    /// Indices `[start, end)` as a new curve with time re-zeroed.
    pub fn slice(&self, start: usize, end: usize) -> SmoothedCurve {
        let t0 = self.time[start];
        SmoothedCurve {
            time: self.time[start..end].iter().map(|t| t - t0).collect(),
            voltage: self.voltage[start..end].to_vec(),
            source_id: self.source_id.clone(),
        }
    }

    /// Same curve with every voltage negated; discharge curves are handled
    /// as rising curves this way.
    pub fn negated(&self) -> SmoothedCurve {
        SmoothedCurve {
            time: self.time.clone(),
            voltage: self.voltage.iter().map(|v| -v).collect(),
            source_id: self.source_id.clone(),
        }
    }
}

fn interp_uniform(values: &[f64], step: f64, t: f64) -> Option<f64> {
    let last = (values.len() - 1) as f64 * step;
    if !(t >= 0.0 && t <= last * (1.0 + 1e-12)) {
        return None;
    }
    let pos = (t / step).min((values.len() - 1) as f64);
    let i = (pos.floor() as usize).min(values.len() - 2);
    let frac = pos - i as f64;
    Some(values[i] + frac * (values[i + 1] - values[i]))
}

/// Interpolates voltage onto `t = 0, interval, 2·interval, …` measured from
/// the first sample, never past the last one.
pub fn resample_uniform(curve: &GvCurve, interval: f64) -> Result<SmoothedCurve> {
    if !(interval > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "resample interval must be positive, got {interval}"
        )));
    }
    if curve.time.len() < 2 {
        return Err(Error::TooShort(format!("curve {} has < 2 points", curve.name())));
    }
    let t0 = curve.time[0];
    let duration = curve.duration();
    if duration < 2.0 * interval {
        return Err(Error::TooShort(format!(
            "curve {} lasts {duration} s, need at least {} s",
            curve.name(),
            2.0 * interval
        )));
    }
    let count = (duration / interval + 1e-9).floor() as usize + 1;
    let mut time = Vec::with_capacity(count);
    let mut voltage = Vec::with_capacity(count);
    let mut j = 0;
    for k in 0..count {
        let t = k as f64 * interval;
        let abs_t = t0 + t;
        while j + 2 < curve.time.len() && curve.time[j + 1] < abs_t {
            j += 1;
        }
        let (ta, tb) = (curve.time[j], curve.time[j + 1]);
        let (va, vb) = (curve.voltage[j], curve.voltage[j + 1]);
        let frac = ((abs_t - ta) / (tb - ta)).min(1.0);
        time.push(t);
        voltage.push(va + frac * (vb - va));
    }
    Ok(SmoothedCurve {
        time,
        voltage,
        source_id: curve.name(),
    })
}

/// Savitzky-Golay weights for a window of `window` samples.
///
/// Row `k` holds the weights that evaluate the fitted polynomial at offset
/// `k - half` from the window centre, so the middle row is the ordinary
/// smoothing kernel and the outer rows serve the boundary points.
#[derive(Debug, Clone)]
pub struct SgWeights {
    window: usize,
    rows: Vec<Vec<f64>>,
}

impl SgWeights {
    pub fn new(window: usize, order: usize) -> Result<Self> {
        SgConfig {
            window_length: window,
            polynomial_order: order,
            resample_interval: 1.0,
        }
        .validate()?;
        let half = (window / 2) as f64;
        let scale = if half > 0.0 { half } else { 1.0 };
        let vander = DMatrix::from_fn(window, order + 1, |i, p| {
            ((i as f64 - half) / scale).powi(p as i32)
        });
        // (AᵀA)⁻¹Aᵀ via QR: R⁻¹ Qᵀ.
        let qr = vander.qr();
        let r_inv = qr
            .r()
            .try_inverse()
            .ok_or_else(|| Error::InvalidConfig("singular Savitzky-Golay design".into()))?;
        let pinv = r_inv * qr.q().transpose();
        let rows = (0..window)
            .map(|k| {
                let u = (k as f64 - half) / scale;
                (0..window)
                    .map(|j| {
                        (0..=order)
                            .map(|p| u.powi(p as i32) * pinv[(p, j)])
                            .sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        Ok(SgWeights { window, rows })
    }

    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        let n = y.len();
        let w = self.window;
        if n < w {
            return Err(Error::TooShort(format!(
                "{n} samples shorter than window {w}"
            )));
        }
        let half = w / 2;
        let dot = |row: &[f64], start: usize| -> f64 {
            row.iter().zip(&y[start..start + w]).map(|(a, b)| a * b).sum()
        };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let value = if i < half {
                dot(&self.rows[i], 0)
            } else if i + half >= n {
                dot(&self.rows[w - (n - i)], n - w)
            } else {
                dot(&self.rows[half], i - half)
            };
            out.push(value);
        }
        Ok(out)
    }
}

/// Smooths a uniform-grid voltage sequence. Output length equals input
/// length.
pub fn sg_smooth_values(values: &[f64], config: &SgConfig) -> Result<Vec<f64>> {
    config.validate()?;
    SgWeights::new(config.window_length, config.polynomial_order)?.apply(values)
}

/// Smooths a resampled curve, keeping its grid.
pub fn sg_smooth(curve: &SmoothedCurve, config: &SgConfig) -> Result<SmoothedCurve> {
    let voltage = sg_smooth_values(&curve.voltage, config)?;
    Ok(SmoothedCurve {
        time: curve.time.clone(),
        voltage,
        source_id: curve.source_id.clone(),
    })
}

/// Resamples then smooths a full curve.
pub fn preprocess(curve: &GvCurve, config: &SgConfig) -> Result<SmoothedCurve> {
    let grid = resample_uniform(curve, config.resample_interval)?;
    sg_smooth(&grid, config)
}

/// Like [`preprocess`], shrinking the window for segments shorter than it.
pub fn preprocess_segment(curve: &GvCurve, config: &SgConfig) -> Result<SmoothedCurve> {
    let grid = resample_uniform(curve, config.resample_interval)?;
    sg_smooth(&grid, &config.clamped_to(grid.len())?)
}

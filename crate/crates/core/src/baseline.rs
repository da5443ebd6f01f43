//! Incremental-capacity (dQ/dV) and differential-voltage (dV/dQ) peak
//! features, the comparison baseline for the segment-time features.
//!
//! Both curves come from central differences of the smoothed curve: IC on
//! 5 mV voltage bins using the first crossing of each bin edge, DV on 200
//! uniform charge points. The largest peak of each gives a location and a
//! magnitude, four regression inputs in total.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::dataio::{format_g9, GvCurve};
use crate::error::{Error, Result};
use crate::features::Direction;
use crate::smoothing::{preprocess, SgConfig, SmoothedCurve};

pub const IC_BIN_V: f64 = 0.005;
pub const DV_POINTS: usize = 200;
/// Fewest voltage steps an IC curve may span.
pub const MIN_IC_STEPS: usize = 10;
/// Largest voltage drop below the running maximum tolerated before a curve
/// counts as non-monotone.
pub const MAX_REVERSAL_V: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DifferentialKind {
    Ic,
    Dv,
}

impl fmt::Display for DifferentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DifferentialKind::Ic => "ic",
            DifferentialKind::Dv => "dv",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialCurve {
    /// Volts for IC, amp-hours for DV.
    pub abscissa: Vec<f64>,
    /// Ah/V for IC, V/Ah for DV.
    pub ordinate: Vec<f64>,
    pub kind: DifferentialKind,
    /// Set when the voltage is exactly flat somewhere, where dQ/dV has no
    /// finite value.
    pub singular: bool,
}

fn direction_of(current: f64) -> Result<f64> {
    if current > 0.0 {
        Ok(1.0)
    } else if current < 0.0 {
        Ok(-1.0)
    } else {
        Err(Error::InvalidConfig("current must be nonzero".into()))
    }
}

/// Oriented (rising) voltages after checking that reversals stay small.
fn oriented(curve: &SmoothedCurve, sign: f64) -> Result<Vec<f64>> {
    if curve.len() < 3 {
        return Err(Error::TooShort(format!(
            "differential curve needs at least 3 samples, got {}",
            curve.len()
        )));
    }
    let w: Vec<f64> = curve.voltage.iter().map(|v| sign * v).collect();
    let mut peak = f64::NEG_INFINITY;
    for (i, &v) in w.iter().enumerate() {
        peak = peak.max(v);
        if peak - v > MAX_REVERSAL_V {
            return Err(Error::NotMonotone(format!(
                "{}: voltage reverses by {:.4} V at sample {i}",
                curve.source_id,
                peak - v
            )));
        }
    }
    Ok(w)
}

fn central_differences(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (y[b] - y[a]) / (x[b] - x[a])
        })
        .collect()
}

/// dQ/dV on 5 mV bins. `current` is signed: positive for a charge, whose
/// voltage rises, negative for a discharge.
pub fn compute_ic(curve: &SmoothedCurve, current: f64) -> Result<DifferentialCurve> {
    let sign = direction_of(current)?;
    let w = oriented(curve, sign)?;
    let start = w[0];
    let top = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = (start / IC_BIN_V - 1e-9).ceil() as i64;
    let last = (top / IC_BIN_V + 1e-9).floor() as i64;
    if last - first < MIN_IC_STEPS as i64 {
        return Err(Error::TooShort(format!(
            "{}: voltage range {:.4} V spans fewer than {MIN_IC_STEPS} steps of {IC_BIN_V} V",
            curve.source_id,
            top - start
        )));
    }

    let mut running = Vec::with_capacity(w.len());
    let mut m = f64::NEG_INFINITY;
    for &v in &w {
        m = m.max(v);
        running.push(m);
    }
    let amps_h = current.abs() / 3600.0;
    let levels: Vec<f64> = (first..=last).map(|k| k as f64 * IC_BIN_V).collect();
    let charge: Vec<f64> = levels
        .iter()
        .map(|&level| {
            let i = running.partition_point(|&p| p < level);
            let t = if i == 0 {
                curve.time[0]
            } else if i == w.len() {
                curve.duration()
            } else {
                let frac = (level - w[i - 1]) / (w[i] - w[i - 1]);
                curve.time[i - 1] + frac * (curve.time[i] - curve.time[i - 1])
            };
            amps_h * t
        })
        .collect();
    let ordinate = central_differences(&levels, &charge);
    let singular = w.windows(2).any(|p| p[1] == p[0] && p[0] >= start && p[0] <= top);
    Ok(DifferentialCurve {
        abscissa: levels.iter().map(|v| sign * v).collect(),
        ordinate,
        kind: DifferentialKind::Ic,
        singular,
    })
}

/// dV/dQ on 200 uniform charge points, oriented so a normal curve gives
/// positive values.
pub fn compute_dv(curve: &SmoothedCurve, current: f64) -> Result<DifferentialCurve> {
    let sign = direction_of(current)?;
    let w = oriented(curve, sign)?;
    let amps_h = current.abs() / 3600.0;
    let total = amps_h * curve.duration();
    let charge: Vec<f64> = (0..DV_POINTS)
        .map(|k| total * k as f64 / (DV_POINTS - 1) as f64)
        .collect();
    let volts: Vec<f64> = charge
        .iter()
        .map(|q| {
            let t = (q / amps_h).min(curve.duration());
            curve
                .voltage_at(t)
                .map(|v| sign * v)
                .ok_or_else(|| Error::TooShort(format!("{}: no voltage at t = {t}", curve.source_id)))
        })
        .collect::<Result<_>>()?;
    let ordinate = central_differences(&charge, &volts);
    let singular = w.windows(2).any(|p| p[1] == p[0]);
    Ok(DifferentialCurve {
        abscissa: charge,
        ordinate,
        kind: DifferentialKind::Dv,
        singular,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub location: f64,
    pub magnitude: f64,
    /// False when the curve has no strict interior local maximum and the
    /// global maximum was used instead.
    pub interior: bool,
}

/// The strict interior local maximum with the greatest ordinate, ties going
/// to the lowest abscissa; the global maximum if there is none.
pub fn largest_peak(curve: &DifferentialCurve) -> Result<Peak> {
    let (x, y) = (&curve.abscissa, &curve.ordinate);
    if y.len() < 3 || x.len() != y.len() {
        return Err(Error::TooShort(format!(
            "peak search needs at least 3 points, got {}",
            y.len()
        )));
    }
    let better = |i: usize, best: Option<usize>| match best {
        None => true,
        Some(b) => y[i] > y[b] || (y[i] == y[b] && x[i] < x[b]),
    };
    let mut best = None;
    for i in 1..y.len() - 1 {
        if y[i] > y[i - 1] && y[i] > y[i + 1] && better(i, best) {
            best = Some(i);
        }
    }
    let interior = best.is_some();
    if best.is_none() {
        for (i, v) in y.iter().enumerate() {
            if v.is_finite() && better(i, best) {
                best = Some(i);
            }
        }
    }
    let i = best.ok_or(Error::NonFinite)?;
    Ok(Peak {
        location: x[i],
        magnitude: y[i],
        interior,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakFeature {
    pub ic: Peak,
    pub dv: Peak,
}

impl PeakFeature {
    /// `[ic location, ic magnitude, dv location, dv magnitude]`.
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.ic.location,
            self.ic.magnitude,
            self.dv.location,
            self.dv.magnitude,
        ]
    }
}

/// Smooths a full reference curve and extracts both peaks. The current
/// magnitude is the curve's mean absolute current.
pub fn extract_icdv_features(
    curve: &GvCurve,
    sg: &SgConfig,
    direction: Direction,
) -> Result<PeakFeature> {
    let smoothed = preprocess(curve, sg)?;
    icdv_from_smoothed(&smoothed, direction.sign() * curve.mean_abs_current())
}

pub fn icdv_from_smoothed(curve: &SmoothedCurve, current: f64) -> Result<PeakFeature> {
    let ic = compute_ic(curve, current)?;
    let dv = compute_dv(curve, current)?;
    if ic.singular {
        log::warn!("{}: flat voltage stretch, IC unbounded there", curve.source_id);
    }
    Ok(PeakFeature {
        ic: largest_peak(&ic)?,
        dv: largest_peak(&dv)?,
    })
}

/// Writes `abscissa,ordinate,kind` rows for each curve.
pub fn write_differential_csv(curves: &[&DifferentialCurve], path: &Path) -> Result<()> {
    let mut out = String::from("abscissa,ordinate,kind\n");
    for c in curves {
        for (x, y) in c.abscissa.iter().zip(&c.ordinate) {
            out.push_str(&format!("{},{},{}\n", format_g9(*x), format_g9(*y), c.kind));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

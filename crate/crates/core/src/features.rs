//! Regression inputs from smoothed curves: the elapsed time from the lower
//! voltage to each of `n` equispaced voltages above it.
//!
//! Discharge curves are negated before any crossing search, so all of the
//! logic below works on rising curves.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::dataio::{Dataset, GvCurve};
use crate::error::{Error, Result};
use crate::smoothing::{preprocess, SgConfig, SmoothedCurve};

/// A test segment may start this far past the lower voltage and still be
/// treated as starting on it.
pub const START_TOLERANCE_V: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    #[default]
    Charge,
    Discharge,
}

impl Direction {
    /// +1 for charge, -1 for discharge.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Charge => 1.0,
            Direction::Discharge => -1.0,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Charge => "charge",
            Direction::Discharge => "discharge",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "charge" => Ok(Direction::Charge),
            "discharge" => Ok(Direction::Discharge),
            other => Err(Error::InvalidConfig(format!(
                "direction must be charge or discharge, got {other:?}"
            ))),
        }
    }
}

/// How the top of the voltage window is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpperBound {
    /// Online test duration in seconds; V_h is read off the test curve.
    DeltaT(f64),
    /// Fixed upper voltage.
    Vh(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionConfig {
    pub v_l: f64,
    pub upper: UpperBound,
    pub n: usize,
}

impl ExtractionConfig {
    pub fn with_delta_t(v_l: f64, delta_t: f64, n: usize) -> Self {
        ExtractionConfig {
            v_l,
            upper: UpperBound::DeltaT(delta_t),
            n,
        }
    }

    pub fn with_v_h(v_l: f64, v_h: f64, n: usize) -> Self {
        ExtractionConfig {
            v_l,
            upper: UpperBound::Vh(v_h),
            n,
        }
    }

    pub fn validate(&self, direction: Direction) -> Result<()> {
        if !self.v_l.is_finite() {
            return Err(Error::InvalidConfig("v_l must be finite".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        match self.upper {
            UpperBound::DeltaT(dt) if !(dt > 0.0 && dt.is_finite()) => Err(
                Error::InvalidConfig(format!("delta_t must be positive, got {dt}")),
            ),
            UpperBound::Vh(vh) if !((vh - self.v_l) * direction.sign() > 0.0) => {
                Err(Error::InvalidConfig(format!(
                    "v_h = {vh} must lie beyond v_l = {} for {direction}",
                    self.v_l
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    /// Seconds from the lower-voltage crossing to each grid voltage.
    pub x: Vec<f64>,
    /// Capacity label in amp-hours, absent for online test segments.
    pub y: Option<f64>,
    pub cell_id: String,
    pub curve_id: String,
}

/// Equispaced grid `v_l + k·(v_h − v_l)/n` for `k = 1..=n`, rounded to the
/// nearest nanovolt.
pub fn voltage_grid(v_l: f64, v_h: f64, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| {
            let v = v_l + (v_h - v_l) * k as f64 / n as f64;
            (v * 1e9).round() / 1e9
        })
        .collect()
}

fn running_max(values: &[f64]) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    values
        .iter()
        .map(|&v| {
            best = best.max(v);
            best
        })
        .collect()
}

/// First time a rising curve reaches `level`, interpolating between grid
/// samples. `peak` is the running maximum of `voltage`.
fn first_crossing(time: &[f64], voltage: &[f64], peak: &[f64], level: f64) -> Option<f64> {
    let i = peak.partition_point(|&m| m < level);
    if i == voltage.len() {
        return None;
    }
    if i == 0 {
        return Some(time[0]);
    }
    let (va, vb) = (voltage[i - 1], voltage[i]);
    let frac = (level - va) / (vb - va);
    Some(time[i - 1] + frac * (time[i] - time[i - 1]))
}

/// A smoothed curve oriented to rise, with its running maximum cached for
/// repeated crossing searches.
#[derive(Debug, Clone)]
pub struct OrientedCurve {
    pub curve: SmoothedCurve,
    peak: Vec<f64>,
    sign: f64,
}

impl OrientedCurve {
    pub fn new(curve: &SmoothedCurve, direction: Direction) -> Self {
        let curve = match direction {
            Direction::Charge => curve.clone(),
            Direction::Discharge => curve.negated(),
        };
        let peak = running_max(&curve.voltage);
        OrientedCurve {
            curve,
            peak,
            sign: direction.sign(),
        }
    }

    /// Highest voltage reached, in real units (lowest for discharge).
    pub fn max_reachable(&self) -> f64 {
        self.sign * self.peak[self.peak.len() - 1]
    }

    pub fn direction(&self) -> Direction {
        if self.sign > 0.0 {
            Direction::Charge
        } else {
            Direction::Discharge
        }
    }

    /// The smoothed curve in real voltage units.
    pub fn original(&self) -> SmoothedCurve {
        match self.direction() {
            Direction::Charge => self.curve.clone(),
            Direction::Discharge => self.curve.negated(),
        }
    }

    /// Crossing time of a real-unit voltage.
    pub fn crossing(&self, volts: f64) -> Option<f64> {
        first_crossing(
            &self.curve.time,
            &self.curve.voltage,
            &self.peak,
            self.sign * volts,
        )
    }

    /// Crossing of the lower voltage, allowing the curve to start slightly
    /// past it.
    fn lower_crossing(&self, v_l: f64) -> Result<f64> {
        let level = self.sign * v_l;
        let start = self.curve.voltage[0];
        if start > level + START_TOLERANCE_V {
            return Err(Error::NotMonotone(format!(
                "curve starts at {} V, past the lower voltage {v_l} V",
                self.sign * start
            )));
        }
        self.crossing(v_l)
            .ok_or(Error::LowerVoltageNotReached { v_l })
    }

    pub fn features(&self, voltages: &[f64], v_l: f64) -> Result<Vec<f64>> {
        let t_l = self.lower_crossing(v_l)?;
        let top = voltages
            .iter()
            .map(|v| self.sign * v)
            .fold(f64::NEG_INFINITY, f64::max);
        if self.peak[self.peak.len() - 1] < top {
            return Err(Error::RangeNotCovered {
                max_reachable: self.max_reachable(),
            });
        }
        voltages
            .iter()
            .map(|&v| {
                let t = self.crossing(v).ok_or(Error::RangeNotCovered {
                    max_reachable: self.max_reachable(),
                })?;
                Ok((t - t_l).max(0.0))
            })
            .collect()
    }

    pub fn resolve_grid(&self, config: &ExtractionConfig) -> Result<Vec<f64>> {
        let v_h = match config.upper {
            UpperBound::Vh(v_h) => v_h,
            UpperBound::DeltaT(dt) => {
                let t_l = self.lower_crossing(config.v_l)?;
                let t_end = t_l + dt;
                let v = self.curve.voltage_at(t_end).ok_or_else(|| {
                    Error::TooShort(format!(
                        "segment lasts {} s after the lower-voltage crossing, need {dt} s",
                        self.curve.duration() - t_l
                    ))
                })?;
                self.sign * v
            }
        };
        if !((v_h - config.v_l) * self.sign > 0.0) {
            return Err(Error::NotMonotone(format!(
                "voltage at the end of the test ({v_h} V) does not pass v_l = {} V",
                config.v_l
            )));
        }
        Ok(voltage_grid(config.v_l, v_h, config.n))
    }
}

/// Resolves the n-point voltage grid from a test curve.
pub fn resolve_voltage_grid(
    config: &ExtractionConfig,
    test_curve: &SmoothedCurve,
    direction: Direction,
) -> Result<Vec<f64>> {
    config.validate(direction)?;
    OrientedCurve::new(test_curve, direction).resolve_grid(config)
}

/// Time from the first `v_l` crossing to the first crossing of each grid
/// voltage.
pub fn extract_features(
    curve: &SmoothedCurve,
    voltages: &[f64],
    v_l: f64,
    direction: Direction,
) -> Result<Vec<f64>> {
    OrientedCurve::new(curve, direction).features(voltages, v_l)
}

/// A labelled curve ready for repeated feature extraction.
#[derive(Debug, Clone)]
pub struct PreparedCurve {
    pub cell_id: String,
    pub curve_id: String,
    pub capacity: f64,
    /// Mean absolute current of the raw curve, amperes.
    pub current: f64,
    pub oriented: OrientedCurve,
}

/// Smooths every curve of the dataset once. Output is sorted by
/// `(cell_id, curve_id)`.
pub fn prepare_curves(
    dataset: &Dataset,
    sg: &SgConfig,
    direction: Direction,
) -> Result<Vec<PreparedCurve>> {
    let mut out = dataset
        .samples()
        .map(|(curve, capacity)| prepare_curve(curve, capacity, sg, direction))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| (&a.cell_id, &a.curve_id).cmp(&(&b.cell_id, &b.curve_id)));
    Ok(out)
}

pub fn prepare_curve(
    curve: &GvCurve,
    capacity: f64,
    sg: &SgConfig,
    direction: Direction,
) -> Result<PreparedCurve> {
    let smoothed = preprocess(curve, sg)?;
    Ok(PreparedCurve {
        cell_id: curve.cell_id.clone(),
        curve_id: curve.curve_id.clone(),
        capacity,
        current: curve.mean_abs_current(),
        oriented: OrientedCurve::new(&smoothed, direction),
    })
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub samples: Vec<FeatureSample>,
    /// Curves left out because they do not cover the voltage range.
    pub excluded: usize,
}

/// Features for every prepared curve accepted by `keep`.
pub fn training_set_from_prepared<'a>(
    curves: impl IntoIterator<Item = &'a PreparedCurve>,
    voltages: &[f64],
    v_l: f64,
) -> Result<TrainingSet> {
    let mut samples = Vec::new();
    let mut excluded = 0;
    for c in curves {
        match c.oriented.features(voltages, v_l) {
            Ok(x) => samples.push(FeatureSample {
                x,
                y: Some(c.capacity),
                cell_id: c.cell_id.clone(),
                curve_id: c.curve_id.clone(),
            }),
            Err(
                Error::RangeNotCovered { .. }
                | Error::LowerVoltageNotReached { .. }
                | Error::NotMonotone(_),
            ) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no training curve covers {v_l} V to {:?} V ({excluded} excluded)",
            voltages.last()
        )));
    }
    if excluded > 0 {
        log::info!("excluded {excluded} curves not covering the voltage range");
    }
    Ok(TrainingSet { samples, excluded })
}

/// One feature sample per dataset curve covering the voltage range.
pub fn build_training_set(
    dataset: &Dataset,
    voltages: &[f64],
    v_l: f64,
    sg: &SgConfig,
    direction: Direction,
) -> Result<TrainingSet> {
    let prepared = prepare_curves(dataset, sg, direction)?;
    training_set_from_prepared(&prepared, voltages, v_l)
}

/// Writes `cell_id,curve_id,x_1..x_n,y`.
pub fn write_feature_csv(samples: &[FeatureSample], path: &Path) -> Result<()> {
    let n = samples.first().map_or(0, |s| s.x.len());
    let mut out = String::from("cell_id,curve_id");
    for k in 1..=n {
        out.push_str(&format!(",x_{k}"));
    }
    out.push_str(",y\n");
    for s in samples {
        out.push_str(&format!("{},{}", s.cell_id, s.curve_id));
        for x in &s.x {
            out.push_str(&format!(",{x}"));
        }
        match s.y {
            Some(y) => out.push_str(&format!(",{y}\n")),
            None => out.push_str(",\n"),
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

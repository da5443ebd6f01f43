//! Synthetic constant-current curves with known capacities.
//!
//! Open-circuit voltage is a linear function of state of charge plus a sum
//! of sigmoid steps; each flat stretch between steps produces one
//! incremental-capacity bump. Capacity fades along a per-cycle multiplier
//! schedule, an ohmic term `I·R` shifts the curve, and Gaussian noise is
//! added to the voltage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::{CellRecord, Dataset, GvCurve};
use crate::error::{Error, Result};

pub const MIN_VOLTAGE: f64 = 2.5;
pub const MAX_VOLTAGE: f64 = 4.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sigmoid {
    /// Normalized state of charge.
    pub center: f64,
    pub width: f64,
    /// Volts.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcvShape {
    pub v0: f64,
    /// Volts per unit state of charge.
    pub slope: f64,
    pub steps: Vec<Sigmoid>,
}

impl OcvShape {
    pub fn voltage(&self, soc: f64) -> f64 {
        self.v0
            + self.slope * soc
            + self
                .steps
                .iter()
                .map(|s| s.amplitude / (1.0 + (-(soc - s.center) / s.width).exp()))
                .sum::<f64>()
    }

    /// Derivative with respect to state of charge.
    pub fn slope_at(&self, soc: f64) -> f64 {
        self.slope
            + self
                .steps
                .iter()
                .map(|s| {
                    let e = (-(soc - s.center) / s.width).exp();
                    s.amplitude * e / (s.width * (1.0 + e).powi(2))
                })
                .sum::<f64>()
    }

    /// State of charge at which the open-circuit voltage equals `v`
    /// (bisection; the shape must be increasing).
    pub fn soc_at(&self, v: f64) -> Option<f64> {
        let (mut lo, mut hi) = (0.0, 1.0);
        if v < self.voltage(lo) || v > self.voltage(hi) {
            return None;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.voltage(mid) < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCellSpec {
    pub cell_id: String,
    /// Amp-hours.
    pub initial_capacity: f64,
    /// Capacity multiplier per reference-cycle index, in (0, 1] and
    /// nonincreasing.
    pub fade: Vec<f64>,
    pub ocv: OcvShape,
    /// Ohms at the first cycle.
    pub resistance: f64,
    /// Fractional resistance increase per unit of lost capacity fraction.
    pub resistance_growth: f64,
    /// Volts.
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthCellSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("cell {}: {m}", self.cell_id)));
        if !(self.initial_capacity > 0.0) {
            return bad(format!("initial_capacity {} must be positive", self.initial_capacity));
        }
        if self.fade.is_empty() {
            return bad("empty fade schedule".into());
        }
        if self.fade.iter().any(|m| !(*m > 0.0 && *m <= 1.0)) {
            return bad("capacity multipliers must lie in (0, 1]".into());
        }
        if self.fade.windows(2).any(|w| w[1] > w[0]) {
            return bad("capacity multipliers must be nonincreasing".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad(format!("noise_std {} must be nonnegative", self.noise_std));
        }
        if !(self.resistance >= 0.0) || !(self.resistance_growth >= 0.0) {
            return bad("resistance must be nonnegative".into());
        }
        if self.ocv.steps.iter().any(|s| !(s.width > 0.0)) {
            return bad("sigmoid widths must be positive".into());
        }
        Ok(())
    }

    pub fn cycles(&self) -> usize {
        self.fade.len()
    }

    /// Scheduled capacity at a reference cycle, amp-hours.
    pub fn capacity(&self, cycle: usize) -> f64 {
        self.initial_capacity * self.fade[cycle]
    }

    pub fn resistance_at(&self, cycle: usize) -> f64 {
        self.resistance * (1.0 + self.resistance_growth * (1.0 - self.fade[cycle]))
    }
}

/// One full charge (positive current) or discharge (negative current).
///
/// Samples fall every `interval` seconds plus a final sample at the exact
/// end of the charge, so the coulomb count of the curve equals the
/// scheduled capacity.
pub fn generate_curve(
    spec: &SynthCellSpec,
    cycle: usize,
    current: f64,
    interval: f64,
) -> Result<GvCurve> {
    spec.validate()?;
    if current == 0.0 || !current.is_finite() {
        return Err(Error::InvalidConfig("current must be nonzero".into()));
    }
    if !(interval > 0.0) {
        return Err(Error::InvalidConfig("interval must be positive".into()));
    }
    if cycle >= spec.cycles() {
        return Err(Error::InvalidConfig(format!(
            "cycle {cycle} beyond fade schedule of {}",
            spec.cycles()
        )));
    }
    let capacity = spec.capacity(cycle);
    let amps = current.abs();
    let end = 3600.0 * capacity / amps;
    let ohmic = current * spec.resistance_at(cycle);

    let mut time: Vec<f64> = (0..)
        .map(|k| k as f64 * interval)
        .take_while(|t| *t < end)
        .collect();
    if end - time[time.len() - 1] > 1e-9 * end {
        time.push(end);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(
        spec.seed ^ (cycle as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let noise = Normal::new(0.0, spec.noise_std.max(0.0))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut voltage = Vec::with_capacity(time.len());
    for &t in &time {
        let charged = (amps * t / (3600.0 * capacity)).min(1.0);
        let soc = if current > 0.0 { charged } else { 1.0 - charged };
        let clean = spec.ocv.voltage(soc) + ohmic;
        if !(MIN_VOLTAGE..=MAX_VOLTAGE).contains(&clean) {
            return Err(Error::InvalidConfig(format!(
                "cell {}: voltage {clean:.4} V outside [{MIN_VOLTAGE}, {MAX_VOLTAGE}] V",
                spec.cell_id
            )));
        }
        let v = if spec.noise_std > 0.0 {
            clean + noise.sample(&mut rng)
        } else {
            clean
        };
        voltage.push(v);
    }
    let n = time.len();
    Ok(GvCurve {
        cell_id: spec.cell_id.clone(),
        curve_id: format!("cyc{cycle:03}"),
        time,
        voltage,
        current: vec![current; n],
        temperature_c: None,
    })
}

/// Every scheduled cycle of every spec, labelled with its scheduled capacity.
pub fn generate_dataset(
    name: &str,
    specs: &[SynthCellSpec],
    current: f64,
    interval: f64,
) -> Result<Dataset> {
    let cells = specs
        .iter()
        .map(|spec| {
            let curves = (0..spec.cycles())
                .map(|c| generate_curve(spec, c, current, interval))
                .collect::<Result<Vec<_>>>()?;
            let capacities = (0..spec.cycles()).map(|c| spec.capacity(c)).collect();
            Ok(CellRecord {
                cell_id: spec.cell_id.clone(),
                curves,
                capacities,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, cells)
}

/// Multipliers `1 − total·(c/(cycles−1))^power`, with an optional knee that
/// removes an extra `drop` at `knee` and doubles the fade rate afterwards.
pub fn fade_schedule(
    cycles: usize,
    total: f64,
    power: f64,
    knee: Option<(usize, f64)>,
) -> Vec<f64> {
    let last = (cycles.max(2) - 1) as f64;
    let mut out: Vec<f64> = (0..cycles)
        .map(|c| {
            let u = c as f64 / last;
            let mut m = 1.0 - total * u.powf(power);
            if let Some((k, drop)) = knee {
                if c >= k {
                    m -= drop + total * (u - k as f64 / last);
                }
            }
            m
        })
        .collect();
    for i in 1..out.len() {
        out[i] = out[i].min(out[i - 1]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 8 pouch-like cells, ~65 reference charges at 1C.
    Oxford,
    /// 20 cylindrical-like cells, ~42 reference discharges at 2 A.
    Nasa,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oxford" => Ok(Preset::Oxford),
            "nasa" => Ok(Preset::Nasa),
            other => Err(Error::InvalidConfig(format!(
                "preset must be oxford or nasa, got {other:?}"
            ))),
        }
    }
}

/// Everything needed to regenerate a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub preset: Preset,
    pub cells: usize,
    pub cycles: usize,
    pub noise_std: f64,
    /// Signed amperes; positive charges.
    pub current: f64,
    pub interval: f64,
    pub seed: u64,
    /// Index of the cell given a sudden capacity drop, if any.
    pub knee_cell: Option<usize>,
    pub knee_cycle: usize,
}

impl SynthConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Oxford => SynthConfig {
                preset,
                cells: 8,
                cycles: 65,
                noise_std: 0.001,
                current: 0.74,
                interval: 1.0,
                seed: 1,
                knee_cell: Some(2),
                knee_cycle: 40,
            },
            Preset::Nasa => SynthConfig {
                preset,
                cells: 20,
                cycles: 42,
                noise_std: 0.001,
                current: -2.0,
                interval: 1.0,
                seed: 1,
                knee_cell: None,
                knee_cycle: 28,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 || self.cycles == 0 {
            return Err(Error::InvalidConfig("cells and cycles must be positive".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            )));
        }
        if self.current == 0.0 || !self.current.is_finite() {
            return Err(Error::InvalidConfig("current must be nonzero".into()));
        }
        if !(self.interval > 0.0) {
            return Err(Error::InvalidConfig("interval must be positive".into()));
        }
        if let Some(k) = self.knee_cell {
            if k >= self.cells {
                return Err(Error::InvalidConfig(format!(
                    "knee_cell {k} out of range for {} cells",
                    self.cells
                )));
            }
        }
        Ok(())
    }

    /// Per-cell specs with seeded cell-to-cell variation.
    pub fn specs(&self) -> Result<Vec<SynthCellSpec>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut specs = Vec::with_capacity(self.cells);
        for i in 0..self.cells {
            let mut jitter = |scale: f64| rng.gen_range(-scale..scale);
            let (capacity, ocv, resistance, total) = match self.preset {
                Preset::Oxford => (
                    0.74 * (1.0 + jitter(0.01)),
                    OcvShape {
                        v0: 3.2 + jitter(0.005),
                        slope: 0.45,
                        steps: vec![
                            Sigmoid {
                                center: 0.05 + jitter(0.005),
                                width: 0.025,
                                amplitude: 0.35 * (1.0 + jitter(0.02)),
                            },
                            Sigmoid {
                                center: 0.55 + jitter(0.01),
                                width: 0.04,
                                amplitude: 0.12 * (1.0 + jitter(0.02)),
                            },
                            Sigmoid {
                                center: 0.85 + jitter(0.01),
                                width: 0.03,
                                amplitude: 0.10 * (1.0 + jitter(0.02)),
                            },
                        ],
                    },
                    0.05 * (1.0 + jitter(0.1)),
                    0.34 + jitter(0.06),
                ),
                Preset::Nasa => (
                    2.1 * (1.0 + jitter(0.01)),
                    OcvShape {
                        v0: 3.0 + jitter(0.005),
                        slope: 0.55,
                        steps: vec![
                            Sigmoid {
                                center: 0.08 + jitter(0.005),
                                width: 0.03,
                                amplitude: 0.30 * (1.0 + jitter(0.02)),
                            },
                            Sigmoid {
                                center: 0.6 + jitter(0.01),
                                width: 0.05,
                                amplitude: 0.15 * (1.0 + jitter(0.02)),
                            },
                            Sigmoid {
                                center: 0.9 + jitter(0.01),
                                width: 0.03,
                                amplitude: 0.12 * (1.0 + jitter(0.02)),
                            },
                        ],
                    },
                    0.06 * (1.0 + jitter(0.1)),
                    0.45 + 0.15 * (i % 5) as f64 / 4.0 + jitter(0.03),
                ),
            };
            let power = 1.0 + jitter(0.25);
            let knee = (self.knee_cell == Some(i)).then_some((self.knee_cycle, 0.06));
            specs.push(SynthCellSpec {
                cell_id: format!("cell{}", i + 1),
                initial_capacity: capacity,
                fade: fade_schedule(self.cycles, total, power, knee),
                ocv,
                resistance,
                resistance_growth: 0.5,
                noise_std: self.noise_std,
                seed: self.seed.wrapping_mul(1000).wrapping_add(i as u64),
            });
        }
        Ok(specs)
    }

    pub fn generate(&self) -> Result<Dataset> {
        let name = match self.preset {
            Preset::Oxford => "synthetic-oxford",
            Preset::Nasa => "synthetic-nasa",
        };
        generate_dataset(name, &self.specs()?, self.current, self.interval)
    }
}

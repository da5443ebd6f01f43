//! Dataset ingestion: galvanostatic voltage curves, coulomb-counted capacity
//! labels and the per-cell grouping used by leave-one-cell-out evaluation.
//!
//! On disk a dataset is a manifest plus one CSV per curve. The manifest lists
//! `cell_id,curve_id,relative_path[,capacity_ah]` per line, `#` starts a
//! comment. Curve files carry a `time_s,voltage_v,current_a[,temperature_c]`
//! header.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};

/// Maximum coefficient of variation of the current for a curve to count as
/// constant-current.
pub const GALVANOSTATIC_CV_TOL: f64 = 0.01;

/// One constant-current voltage-vs-time record.
#[derive(Debug, Clone, PartialEq)]
pub struct GvCurve {
    pub cell_id: String,
    pub curve_id: String,
    pub time: Vec<f64>,
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
    pub temperature_c: Option<Vec<f64>>,
}

impl GvCurve {
    /// Builds a curve, collapsing rows with a repeated timestamp (first row
    /// wins). Returns the curve and the indices of the dropped rows.
    pub fn ingest(
        cell_id: impl Into<String>,
        curve_id: impl Into<String>,
        time: Vec<f64>,
        voltage: Vec<f64>,
        current: Vec<f64>,
        temperature_c: Option<Vec<f64>>,
    ) -> Result<(Self, Vec<usize>)> {
        let cell_id = cell_id.into();
        let curve_id = curve_id.into();
        let name = format!("{cell_id}/{curve_id}");
        let len = time.len();
        if len == 0 {
            return Err(Error::EmptyCurve { curve: name });
        }
        if voltage.len() != len
            || current.len() != len
            || temperature_c.as_ref().is_some_and(|t| t.len() != len)
        {
            return Err(Error::Parse {
                path: PathBuf::from(&name),
                line: 0,
                message: "column lengths differ".into(),
            });
        }

        let decreasing: Vec<usize> = (1..len).filter(|&i| time[i] < time[i - 1]).collect();
        if !decreasing.is_empty() {
            return Err(Error::NonMonotoneTime {
                curve: name,
                indices: decreasing,
            });
        }

        let dropped: Vec<usize> = (1..len).filter(|&i| time[i] == time[i - 1]).collect();
        let retained: Vec<bool> = (0..len).map(|i| i == 0 || time[i] != time[i - 1]).collect();
        let keep = |v: Vec<f64>| -> Vec<f64> {
            if dropped.is_empty() {
                return v;
            }
            v.into_iter()
                .zip(&retained)
                .filter(|(_, k)| **k)
                .map(|(x, _)| x)
                .collect()
        };
        let voltage = keep(voltage);
        let current = keep(current);
        let temperature_c = temperature_c.map(keep);
        let time = keep(time);
        if !dropped.is_empty() {
            warn!(
                "curve {name}: dropped {} duplicate-timestamp rows {:?}",
                dropped.len(),
                dropped
            );
        }

        let curve = GvCurve {
            cell_id,
            curve_id,
            time,
            voltage,
            current,
            temperature_c,
        };
        curve.validate()?;
        Ok((curve, dropped))
    }

    /// Checks the curve invariants: strictly increasing time, at least two
    /// samples, finite values and a constant nonzero current.
    pub fn validate(&self) -> Result<()> {
        let name = self.name();
        if self.time.len() < 2 {
            return Err(Error::EmptyCurve { curve: name });
        }
        let bad: Vec<usize> = (1..self.time.len())
            .filter(|&i| self.time[i] <= self.time[i - 1])
            .collect();
        if !bad.is_empty() {
            return Err(Error::NonMonotoneTime {
                curve: name,
                indices: bad,
            });
        }
        if self
            .time
            .iter()
            .chain(&self.voltage)
            .chain(&self.current)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Parse {
                path: PathBuf::from(name),
                line: 0,
                message: "non-finite value".into(),
            });
        }
        let cv = current_cv(&self.current);
        if !(cv < GALVANOSTATIC_CV_TOL) {
            return Err(Error::NonGalvanostatic { curve: name, cv });
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        format!("{}/{}", self.cell_id, self.curve_id)
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.time[self.time.len() - 1] - self.time[0]
    }

    /// Mean current magnitude in amperes.
    pub fn mean_abs_current(&self) -> f64 {
        self.current.iter().map(|c| c.abs()).sum::<f64>() / self.current.len() as f64
    }
}

fn current_cv(current: &[f64]) -> f64 {
    let n = current.len() as f64;
    let mean = current.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return f64::INFINITY;
    }
    let var = current.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean.abs()
}

/// Capacity in amp-hours from trapezoidal integration of `|current|`.
pub fn coulomb_count(curve: &GvCurve) -> Result<f64> {
    if curve.time.len() < 2 {
        return Err(Error::TooShort(format!(
            "curve {} has fewer than 2 points",
            curve.name()
        )));
    }
    let coulombs: f64 = curve
        .time
        .windows(2)
        .zip(curve.current.windows(2))
        .map(|(t, i)| 0.5 * (i[0].abs() + i[1].abs()) * (t[1] - t[0]))
        .sum();
    Ok(coulombs / 3600.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub cell_id: String,
    pub curves: Vec<GvCurve>,
    /// Amp-hours, one per curve.
    pub capacities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub cells: Vec<CellRecord>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, cells: Vec<CellRecord>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for cell in &cells {
            if !seen.insert(cell.cell_id.clone()) {
                return Err(Error::DuplicateCell(cell.cell_id.clone()));
            }
            if cell.curves.len() != cell.capacities.len() {
                return Err(Error::InvalidConfig(format!(
                    "cell {}: {} curves but {} capacities",
                    cell.cell_id,
                    cell.curves.len(),
                    cell.capacities.len()
                )));
            }
            if let Some(q) = cell.capacities.iter().find(|q| !(**q > 0.0)) {
                return Err(Error::NonPositiveTruth(*q));
            }
        }
        Ok(Dataset {
            name: name.into(),
            cells,
        })
    }

    /// N_C.
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// N_D, the total number of curves.
    pub fn num_samples(&self) -> usize {
        self.cells.iter().map(|c| c.curves.len()).sum()
    }

    pub fn cell(&self, cell_id: &str) -> Option<&CellRecord> {
        self.cells.iter().find(|c| c.cell_id == cell_id)
    }

    /// Iterates `(curve, capacity)` over every curve of every cell.
    pub fn samples(&self) -> impl Iterator<Item = (&GvCurve, f64)> {
        self.cells
            .iter()
            .flat_map(|c| c.curves.iter().zip(c.capacities.iter().copied()))
    }
}

/// A dataset together with the non-fatal problems met while loading it.
#[derive(Debug)]
pub struct LoadReport {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

struct ManifestEntry {
    cell_id: String,
    curve_id: String,
    path: PathBuf,
    capacity: Option<f64>,
}

fn parse_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !(3..=4).contains(&fields.len()) || fields[..3].iter().any(|f| f.is_empty()) {
            return Err(parse_err(format!(
                "expected cell_id,curve_id,relative_path[,capacity_ah], got {line:?}"
            )));
        }
        let capacity = match fields.get(3) {
            Some(s) if !s.is_empty() => Some(
                s.parse::<f64>()
                    .map_err(|_| parse_err(format!("capacity {s:?} is not a number")))?,
            ),
            _ => None,
        };
        entries.push(ManifestEntry {
            cell_id: fields[0].to_string(),
            curve_id: fields[1].to_string(),
            path: base.join(fields[2]),
            capacity,
        });
    }
    Ok(entries)
}

/// Raw columns of one curve file.
pub struct CurveColumns {
    pub time: Vec<f64>,
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
    pub temperature_c: Option<Vec<f64>>,
}

/// Reads a `time_s,voltage_v,current_a[,temperature_c]` CSV file.
pub fn read_curve_csv(path: &Path) -> Result<CurveColumns> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_curve_from(file, path)
}

fn read_curve_from<R: std::io::Read>(reader: R, path: &Path) -> Result<CurveColumns> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_temp = match names.as_slice() {
        ["time_s", "voltage_v", "current_a"] => false,
        ["time_s", "voltage_v", "current_a", "temperature_c"] => true,
        _ => {
            return Err(parse_err(
                1,
                format!("header must be time_s,voltage_v,current_a[,temperature_c], got {names:?}"),
            ))
        }
    };
    let mut cols = CurveColumns {
        time: Vec::new(),
        voltage: Vec::new(),
        current: Vec::new(),
        temperature_c: has_temp.then(Vec::new),
    };
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != names.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, got {}", names.len(), record.len()),
            ));
        }
        let mut values = [0.0; 4];
        for (j, field) in record.iter().enumerate() {
            values[j] = field
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("non-numeric field {field:?}")))?;
        }
        cols.time.push(values[0]);
        cols.voltage.push(values[1]);
        cols.current.push(values[2]);
        if let Some(t) = cols.temperature_c.as_mut() {
            t.push(values[3]);
        }
    }
    Ok(cols)
}

/// Loads a dataset, returning only the dataset. See [`load_dataset_report`].
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    load_dataset_report(manifest_path).map(|r| r.dataset)
}

/// Loads the dataset described by a manifest file.
///
/// Curves whose timestamps decrease are rejected individually and reported
/// in the warnings; every other problem aborts the load.
pub fn load_dataset_report(manifest_path: &Path) -> Result<LoadReport> {
    let entries = parse_manifest(manifest_path)?;
    let mut warnings = Vec::new();
    let mut cells: BTreeMap<String, CellRecord> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();

    for entry in entries {
        let cols = read_curve_csv(&entry.path)?;
        if cols.time.is_empty() {
            return Err(Error::EmptyCurve {
                curve: format!("{}/{}", entry.cell_id, entry.curve_id),
            });
        }
        let ingested = GvCurve::ingest(
            entry.cell_id.clone(),
            entry.curve_id.clone(),
            cols.time,
            cols.voltage,
            cols.current,
            cols.temperature_c,
        );
        let curve = match ingested {
            Ok((curve, dropped)) => {
                if !dropped.is_empty() {
                    warnings.push(format!(
                        "{}: kept first of duplicated timestamps, dropped rows {:?}",
                        curve.name(),
                        dropped
                    ));
                }
                curve
            }
            Err(e @ Error::NonMonotoneTime { .. }) => {
                warn!("rejected: {e}");
                warnings.push(format!("rejected {e}"));
                continue;
            }
            Err(e) => return Err(e),
        };
        let capacity = match entry.capacity {
            Some(q) => q,
            None => coulomb_count(&curve)?,
        };
        if !(capacity > 0.0) {
            return Err(Error::NonPositiveTruth(capacity));
        }
        let cell = cells.entry(entry.cell_id.clone()).or_insert_with(|| {
            order.push(entry.cell_id.clone());
            CellRecord {
                cell_id: entry.cell_id.clone(),
                curves: Vec::new(),
                capacities: Vec::new(),
            }
        });
        if cell.curves.iter().any(|c| c.curve_id == curve.curve_id) {
            return Err(Error::InvalidConfig(format!(
                "duplicate curve id {} in cell {}",
                curve.curve_id, cell.cell_id
            )));
        }
        cell.curves.push(curve);
        cell.capacities.push(capacity);
    }

    let cells = order
        .into_iter()
        .filter_map(|id| cells.remove(&id))
        .collect();
    let name = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(LoadReport {
        dataset: Dataset::new(name, cells)?,
        warnings,
    })
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes a curve as CSV. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn write_curve_csv(curve: &GvCurve, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(curve.len() * 40);
    match &curve.temperature_c {
        Some(_) => out.push_str("time_s,voltage_v,current_a,temperature_c\n"),
        None => out.push_str("time_s,voltage_v,current_a\n"),
    }
    for i in 0..curve.len() {
        out.push_str(&format!(
            "{},{},{}",
            curve.time[i], curve.voltage[i], curve.current[i]
        ));
        if let Some(t) = &curve.temperature_c {
            out.push_str(&format!(",{}", t[i]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// C-style `%.9g`: nine significant digits, trailing zeros removed,
/// exponent form outside `1e-4 ≤ |v| < 1e9`.
pub fn format_g9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let fixed = format!("{v:.*}", (8 - exp) as usize);
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

/// Exports a dataset as `manifest.csv` plus `curves/*.csv` under `dir`.
/// Capacity labels are written explicitly so they survive the round trip.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let curves_dir = dir.join("curves");
    fs::create_dir_all(&curves_dir).map_err(|e| Error::io(&curves_dir, e))?;
    let manifest_path = dir.join("manifest.csv");
    let mut manifest =
        fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut text = format!(
        "# dataset {}\n# cell_id,curve_id,relative_path,capacity_ah\n",
        dataset.name
    );
    for cell in &dataset.cells {
        for (curve, q) in cell.curves.iter().zip(&cell.capacities) {
            let file = format!("{}__{}.csv", sanitize(&cell.cell_id), sanitize(&curve.curve_id));
            write_curve_csv(curve, &curves_dir.join(&file))?;
            text.push_str(&format!(
                "{},{},curves/{},{}\n",
                cell.cell_id, curve.curve_id, file, q
            ));
        }
    }
    manifest
        .write_all(text.as_bytes())
        .map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(current: f64, duration: f64, step: f64) -> GvCurve {
        let n = (duration / step).round() as usize;
        let time: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
        let voltage = time.iter().map(|t| 3.0 + 1e-4 * t).collect();
        let current = vec![current; time.len()];
        GvCurve::ingest("c", "k", time, voltage, current, None).unwrap().0
    }

    #[test]
    fn coulomb_count_rectangles() {
        let q = coulomb_count(&constant(0.74, 3600.0, 1.0)).unwrap();
        assert!((q - 0.74).abs() < 1e-12);
        let q = coulomb_count(&constant(2.0, 1800.0, 10.0)).unwrap();
        assert!((q - 1.0).abs() < 1e-12);
        let q = coulomb_count(&constant(-2.0, 1800.0, 10.0)).unwrap();
        assert!((q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coulomb_count_piecewise_current() {
        // 1 A for 1800 s then 0.5 A for 1800 s, step change between samples
        // at 1800 and 1800.001 s: 0.5 + 0.25 Ah plus a negligible sliver.
        let mut time = vec![0.0, 900.0, 1800.0];
        let mut current = vec![1.0, 1.0, 1.0];
        time.extend([1800.0 + 1e-9, 2700.0, 3600.0]);
        current.extend([0.5, 0.5, 0.5]);
        let curve = GvCurve {
            cell_id: "c".into(),
            curve_id: "p".into(),
            voltage: vec![3.5; time.len()],
            time,
            current,
            temperature_c: None,
        };
        let q = coulomb_count(&curve).unwrap();
        assert!((q - 0.75).abs() < 1e-12, "{q}");
    }

    #[test]
    fn coulomb_count_needs_two_points() {
        let curve = GvCurve {
            cell_id: "c".into(),
            curve_id: "p".into(),
            time: vec![0.0],
            voltage: vec![3.5],
            current: vec![1.0],
            temperature_c: None,
        };
        assert!(matches!(coulomb_count(&curve), Err(Error::TooShort(_))));
    }

    #[test]
    fn duplicate_timestamps_keep_first() {
        let (curve, dropped) = GvCurve::ingest(
            "c",
            "d",
            vec![0.0, 1.0, 1.0, 2.0],
            vec![3.0, 3.1, 3.9, 3.2],
            vec![1.0; 4],
            None,
        )
        .unwrap();
        assert_eq!(dropped, vec![2]);
        assert_eq!(curve.time, vec![0.0, 1.0, 2.0]);
        assert_eq!(curve.voltage, vec![3.0, 3.1, 3.2]);
    }

    #[test]
    fn decreasing_time_lists_indices() {
        let err = GvCurve::ingest(
            "c",
            "d",
            vec![0.0, 2.0, 1.0, 3.0, 2.5],
            vec![3.0; 5],
            vec![1.0; 5],
            None,
        )
        .unwrap_err();
        match err {
            Error::NonMonotoneTime { indices, .. } => assert_eq!(indices, vec![2, 4]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn alternating_current_is_rejected() {
        let err = GvCurve::ingest(
            "c",
            "d",
            vec![0.0, 1.0, 2.0, 3.0],
            vec![3.0; 4],
            vec![1.0, -1.0, 1.0, -1.0],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonGalvanostatic { .. }));
        assert!(err.to_string().contains("non-galvanostatic"));
    }

    #[test]
    fn malformed_row_names_line() {
        let data = "time_s,voltage_v,current_a\n0,3.0,1\n1,abc,1\n";
        let err = read_curve_from(data.as_bytes(), Path::new("x.csv")).err().unwrap();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn header_is_required() {
        let data = "0,3.0,1\n1,3.1,1\n";
        assert!(read_curve_from(data.as_bytes(), Path::new("x.csv")).is_err());
    }

    #[test]
    fn g9_formatting() {
        assert_eq!(format_g9(0.0), "0");
        assert_eq!(format_g9(1.0), "1");
        assert_eq!(format_g9(0.1 + 0.2), "0.3");
        assert_eq!(format_g9(2.0 / 3.0), "0.666666667");
        assert_eq!(format_g9(-1234.5), "-1234.5");
        assert_eq!(format_g9(123456789.4), "123456789");
        assert_eq!(format_g9(1234567890.0), "1.23456789e+09");
        assert_eq!(format_g9(0.0001), "0.0001");
        assert_eq!(format_g9(0.00001234), "1.234e-05");
        assert_eq!(format_g9(9.999999999), "10");
    }
}

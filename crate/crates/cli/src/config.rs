//! `key = value` configuration files merged with command-line overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gpice::eval::{EvalConfig, GRID_QUANTUM_V};
use gpice::features::{Direction, ExtractionConfig, UpperBound};
use gpice::gp::{FitOptions, KernelKind};
use gpice::smoothing::SgConfig;

use crate::CliError;

/// Keys accepted in run configuration files.
pub const RUN_KEYS: &[&str] = &[
    "manifest",
    "output",
    "direction",
    "v_l",
    "delta_t",
    "v_h",
    "n",
    "sg_window",
    "sg_order",
    "sg_interval",
    "kernel",
    "ard",
    "standardize",
    "restarts",
    "seed",
    "max_iter",
    "grad_tol",
    "grid_quantum_v",
    "cache",
    "jobs",
    "keep_going",
    "sweep_grid",
    "n_sweep",
    "baseline",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    parse_key_values(&text, &path.display().to_string())
}

pub fn parse_key_values(text: &str, origin: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{origin}: line {}: expected `key = value`, got {line:?}",
                i + 1
            )));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Settings for `evaluate`, `sweep` and `fit`.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub output: PathBuf,
    pub eval: EvalConfig,
    pub sweep_grid: Option<Vec<(f64, f64)>>,
    pub n_sweep: Option<Vec<usize>>,
    pub baseline: bool,
}

struct Reader<'a> {
    map: &'a BTreeMap<String, String>,
    errors: Vec<String>,
}

impl Reader<'_> {
    fn get<T: std::str::FromStr>(&mut self, key: &str, default: T) -> T
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => default,
            Some(raw) => match raw.parse() {
                Ok(v) => v,
                Err(e) => {
                    self.errors.push(format!("{key}: cannot parse {raw:?}: {e}"));
                    default
                }
            },
        }
    }

    fn opt<T: std::str::FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.map.get(key)?;
        match raw.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(format!("{key}: cannot parse {raw:?}: {e}"));
                None
            }
        }
    }
}

/// `start:end:step` (inclusive) or a comma-separated list.
pub fn parse_n_sweep(spec: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("n_sweep: expected start:end:step or a list, got {spec:?}");
    let values: Vec<usize> = if spec.contains(':') {
        let parts: Vec<usize> = spec
            .split(':')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let [start, end, step] = parts[..] else {
            return Err(bad());
        };
        if step == 0 || start > end {
            return Err(bad());
        }
        (start..=end).step_by(step).collect()
    } else {
        spec.split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(format!("n_sweep: values must be positive, got {spec:?}"));
    }
    Ok(values)
}

/// `delta_t:v_l` pairs separated by `;`, as written in snapshots.
fn parse_inline_grid(spec: &str) -> Result<Vec<(f64, f64)>, String> {
    spec.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| format!("sweep_grid: expected delta_t:v_l, got {p:?}"))?;
            let dt = a.trim().parse::<f64>();
            let vl = b.trim().parse::<f64>();
            match (dt, vl) {
                (Ok(dt), Ok(vl)) => Ok((dt, vl)),
                _ => Err(format!("sweep_grid: expected numbers, got {p:?}")),
            }
        })
        .collect()
}

pub fn format_inline_grid(grid: &[(f64, f64)]) -> String {
    grid.iter()
        .map(|(dt, vl)| format!("{dt}:{vl}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Reads a grid file of `delta_t,v_l` rows. A header row naming the
/// columns and `#` comments are allowed.
pub fn read_grid_file(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut grid = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (i == 0 && line.replace(' ', "") == "delta_t,v_l") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields[..] {
            [a, b] => a.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((dt, vl)) if dt > 0.0 && dt.is_finite() && vl.is_finite() => grid.push((dt, vl)),
            _ => {
                return Err(CliError::Usage(format!(
                    "{}: line {}: expected `delta_t,v_l` with positive delta_t, got {line:?}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    if grid.is_empty() {
        return Err(CliError::Usage(format!("{}: grid file has no rows", path.display())));
    }
    Ok(grid)
}

impl RunConfig {
    /// Validates every field, reporting all problems at once.
    pub fn from_map(
        map: &BTreeMap<String, String>,
        require_manifest: bool,
    ) -> Result<RunConfig, CliError> {
        let mut r = Reader {
            map,
            errors: Vec::new(),
        };
        for key in map.keys() {
            if !RUN_KEYS.contains(&key.as_str()) {
                r.errors.push(format!("{key}: unknown setting"));
            }
        }

        let manifest = map.get("manifest").map(PathBuf::from);
        match &manifest {
            None if require_manifest => r.errors.push("manifest: missing".into()),
            Some(p) if require_manifest && !p.is_file() => {
                r.errors.push(format!("manifest: file not found: {}", p.display()))
            }
            _ => {}
        }
        let output = PathBuf::from(map.get("output").map_or("report", String::as_str));

        let direction: Direction = r.get("direction", Direction::Charge);
        let v_l: f64 = r.get("v_l", 3.5);
        let n: usize = r.get("n", 4);
        let delta_t: Option<f64> = r.opt("delta_t");
        let v_h: Option<f64> = r.opt("v_h");
        let upper = match (delta_t, v_h) {
            (Some(_), Some(_)) => {
                r.errors.push("delta_t, v_h: give one, not both".into());
                UpperBound::DeltaT(450.0)
            }
            (_, Some(vh)) => UpperBound::Vh(vh),
            (Some(dt), None) => UpperBound::DeltaT(dt),
            (None, None) => UpperBound::DeltaT(450.0),
        };
        let extraction = ExtractionConfig { v_l, upper, n };
        if !v_l.is_finite() {
            r.errors.push(format!("v_l: must be finite, got {v_l}"));
        }
        if n == 0 {
            r.errors.push("n: must be at least 1".into());
        }
        match upper {
            UpperBound::DeltaT(dt) if !(dt > 0.0 && dt.is_finite()) => {
                r.errors.push(format!("delta_t: must be positive, got {dt}"))
            }
            UpperBound::Vh(vh) if !((vh - v_l) * direction.sign() > 0.0) => r.errors.push(format!(
                "v_h: {vh} must lie {} v_l = {v_l} for {direction}",
                if direction == Direction::Charge { "above" } else { "below" }
            )),
            _ => {}
        }

        let sg = SgConfig {
            window_length: r.get("sg_window", 25),
            polynomial_order: r.get("sg_order", 3),
            resample_interval: r.get("sg_interval", 1.0),
        };
        if let Err(e) = sg.validate() {
            r.errors.push(e.to_string().replace("invalid configuration: ", ""));
        }

        let defaults = FitOptions::default();
        let fit = FitOptions {
            kind: r.get("kernel", KernelKind::Matern52),
            ard: r.get("ard", defaults.ard),
            standardize: r.get("standardize", defaults.standardize),
            restarts: r.get("restarts", defaults.restarts),
            seed: r.get("seed", defaults.seed),
            max_iter: r.get("max_iter", defaults.max_iter),
            grad_tol: r.get("grad_tol", defaults.grad_tol),
        };
        if fit.restarts == 0 {
            r.errors.push("restarts: must be at least 1".into());
        }
        if fit.max_iter == 0 {
            r.errors.push("max_iter: must be at least 1".into());
        }
        if !(fit.grad_tol > 0.0) {
            r.errors.push(format!("grad_tol: must be positive, got {}", fit.grad_tol));
        }
        if let Some(q) = r.opt::<f64>("grid_quantum_v") {
            if q != GRID_QUANTUM_V {
                r.errors.push(format!(
                    "grid_quantum_v: only {GRID_QUANTUM_V} is supported, got {q}"
                ));
            }
        }

        let sweep_grid = map.get("sweep_grid").and_then(|s| match parse_inline_grid(s) {
            Ok(g) => Some(g),
            Err(e) => {
                r.errors.push(e);
                None
            }
        });
        let n_sweep = map.get("n_sweep").and_then(|s| match parse_n_sweep(s) {
            Ok(v) => Some(v),
            Err(e) => {
                r.errors.push(e);
                None
            }
        });

        let eval = EvalConfig {
            direction,
            extraction,
            sg,
            fit,
            cache: r.get("cache", true),
            jobs: r.get("jobs", 0),
            keep_going: r.get("keep_going", false),
        };
        let baseline = r.get("baseline", false);
        if !r.errors.is_empty() {
            return Err(CliError::Config(r.errors));
        }
        Ok(RunConfig {
            manifest: manifest.unwrap_or_default(),
            output,
            eval,
            sweep_grid,
            n_sweep,
            baseline,
        })
    }

    /// Every setting needed to rerun, as `key = value` pairs readable by
    /// [`RunConfig::from_map`].
    pub fn snapshot(&self) -> Vec<(String, String)> {
        let manifest = fs::canonicalize(&self.manifest).unwrap_or_else(|_| self.manifest.clone());
        let mut out = vec![
            ("manifest".to_string(), manifest.display().to_string()),
            ("output".to_string(), self.output.display().to_string()),
        ];
        out.extend(self.eval.snapshot());
        if let Some(g) = &self.sweep_grid {
            out.push(("sweep_grid".into(), format_inline_grid(g)));
        }
        if let Some(ns) = &self.n_sweep {
            out.push((
                "n_sweep".into(),
                ns.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            ));
        }
        if self.baseline {
            out.push(("baseline".into(), "true".into()));
        }
        out
    }
}

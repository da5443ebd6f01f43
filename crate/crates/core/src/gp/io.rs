//! Plain-text model files.
//!
//! ```text
//! gpice-model 1
//! kernel matern52
//! ard true
//! dims 4
//! log_params <σ_f> <ρ…> <σ_n>
//! input_scale <s_1> … <s_d>
//! train_mean <ȳ>
//! meta.<key> <value>
//! rows <N>
//! <x_1> … <x_d> <y − ȳ>
//! ```
//!
//! Every number is written in the shortest form that parses back to the
//! same `f64`, so a reloaded model predicts bit-for-bit identically.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{GpModel, GpProblem, KernelKind};
use crate::error::{Error, Result};

const MAGIC: &str = "gpice-model 1";

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Model(format!("{what}: bad number {t:?}")))
        })
        .collect()
}

impl GpModel {
    /// Serializes the model with extra `meta.*` entries.
    pub fn to_text(&self, metadata: &BTreeMap<String, String>) -> String {
        let p = &self.problem;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "kernel {}", p.kind);
        let _ = writeln!(out, "ard {}", p.ard);
        let _ = writeln!(out, "dims {}", p.d);
        let _ = writeln!(out, "log_params {}", join(&self.theta));
        let _ = writeln!(out, "input_scale {}", join(&p.scale));
        let _ = writeln!(out, "train_mean {}", p.y_mean);
        for (k, v) in metadata {
            let _ = writeln!(out, "meta.{k} {v}");
        }
        let _ = writeln!(out, "rows {}", p.n);
        for i in 0..p.n {
            let row = &p.x[i * p.d..(i + 1) * p.d];
            let _ = writeln!(out, "{} {}", join(row), p.y_centered[i]);
        }
        out
    }

    /// Parses a model file, refactorizing the covariance. Returns the model
    /// and its `meta.*` entries (keys without the prefix).
    pub fn from_text(text: &str) -> Result<(GpModel, BTreeMap<String, String>)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(MAGIC) {
            return Err(Error::Model(format!("missing {MAGIC:?} header")));
        }
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        let mut meta = BTreeMap::new();
        let mut rows = None;
        for line in lines.by_ref() {
            let (key, value) = line.trim().split_once(' ').unwrap_or((line.trim(), ""));
            if key == "rows" {
                rows = Some(
                    value
                        .trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Model(format!("bad row count {value:?}")))?,
                );
                break;
            }
            if let Some(k) = key.strip_prefix("meta.") {
                meta.insert(k.to_string(), value.trim().to_string());
            } else {
                fields.insert(key, value.trim());
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Model(format!("missing field {k}")))
        };
        let kind: KernelKind = get("kernel")?.parse()?;
        let ard = match get("ard")? {
            "true" => true,
            "false" => false,
            other => return Err(Error::Model(format!("ard must be true/false, got {other}"))),
        };
        let d: usize = get("dims")?
            .parse()
            .map_err(|_| Error::Model("bad dims".into()))?;
        let theta = parse_floats(get("log_params")?, "log_params")?;
        let scale = parse_floats(get("input_scale")?, "input_scale")?;
        let y_mean = parse_floats(get("train_mean")?, "train_mean")?
            .first()
            .copied()
            .ok_or_else(|| Error::Model("empty train_mean".into()))?;
        let n = rows.ok_or_else(|| Error::Model("missing rows".into()))?;
        if d == 0 || scale.len() != d {
            return Err(Error::Model(format!(
                "input_scale has {} entries for {d} dims",
                scale.len()
            )));
        }
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let values = parse_floats(line, &format!("row {}", i + 1))?;
            if values.len() != d + 1 {
                return Err(Error::Model(format!(
                    "row {} has {} values, expected {}",
                    i + 1,
                    values.len(),
                    d + 1
                )));
            }
            x.extend_from_slice(&values[..d]);
            y.push(values[d]);
        }
        if y.len() != n || n == 0 {
            return Err(Error::Model(format!("expected {n} rows, found {}", y.len())));
        }
        let problem = GpProblem::from_parts(kind, ard, d, x, scale, y, y_mean);
        let model = GpModel::condition(problem, theta)?;
        Ok((model, meta))
    }
}

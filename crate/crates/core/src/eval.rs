//! Leave-one-cell-out evaluation, error metrics and configuration sweeps.
//!
//! In every fold the hyperparameters are optimized once, on the training
//! matrix built from the grid of the fold's median test segment. Each test
//! segment then resolves its own voltage grid (upper voltage rounded down
//! to the millivolt), and the training set is rebuilt and reconditioned on
//! that grid with the fold's hyperparameters. Segments sharing a rounded
//! grid share one conditioned model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::baseline::icdv_from_smoothed;
use crate::dataio::{format_g9, Dataset};
use crate::error::{Error, Result};
use crate::features::{
    prepare_curves, training_set_from_prepared, voltage_grid, Direction, ExtractionConfig,
    FeatureSample, PreparedCurve, UpperBound,
};
use crate::gp::{fit_problem, FitInfo, FitOptions, GpModel, GpProblem, KernelHyperparams};
use crate::smoothing::SgConfig;

/// Upper voltages of per-segment grids are rounded to this many volts.
pub const GRID_QUANTUM_V: f64 = 1e-3;

/// `100·√(mean(((ŷ − y)/y)²))` over `(ŷ, y)` pairs.
pub fn rmspe(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no predictions for RMSPE".into()));
    }
    let mut sum = 0.0;
    for &(yhat, y) in pairs {
        if !(y > 0.0) {
            return Err(Error::NonPositiveTruth(y));
        }
        sum += ((yhat - y) / y).powi(2);
    }
    Ok(100.0 * (sum / pairs.len() as f64).sqrt())
}

/// Fraction of `(ŷ, σ, y)` triples with `|ŷ − y| < k·σ`.
pub fn calibration_score(triples: &[(f64, f64, f64)], k: f64) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::EmptyInput("no predictions for calibration score".into()));
    }
    let hits = triples
        .iter()
        .filter(|(yhat, sigma, y)| (yhat - y).abs() < k * sigma)
        .count();
    Ok(hits as f64 / triples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    GpIce,
    IcDv,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::GpIce => "gp-ice",
            Method::IcDv => "ic+dv",
        })
    }
}

/// Everything that determines an evaluation besides the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub direction: Direction,
    pub extraction: ExtractionConfig,
    pub sg: SgConfig,
    pub fit: FitOptions,
    /// Share conditioned models between segments with the same rounded grid.
    pub cache: bool,
    /// Worker threads; 0 lets the thread pool decide.
    pub jobs: usize,
    /// Record a failing fold and carry on instead of failing the run.
    pub keep_going: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            direction: Direction::Charge,
            extraction: ExtractionConfig::with_delta_t(3.5, 450.0, 4),
            sg: SgConfig::default(),
            fit: FitOptions::default(),
            cache: true,
            jobs: 0,
            keep_going: false,
        }
    }
}

impl EvalConfig {
    /// `key = value` lines echoing every setting.
    pub fn snapshot(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("direction".to_string(), self.direction.to_string()),
            ("v_l".to_string(), self.extraction.v_l.to_string()),
        ];
        match self.extraction.upper {
            UpperBound::DeltaT(dt) => out.push(("delta_t".into(), dt.to_string())),
            UpperBound::Vh(vh) => out.push(("v_h".into(), vh.to_string())),
        }
        out.extend([
            ("n".to_string(), self.extraction.n.to_string()),
            ("sg_window".to_string(), self.sg.window_length.to_string()),
            ("sg_order".to_string(), self.sg.polynomial_order.to_string()),
            ("sg_interval".to_string(), self.sg.resample_interval.to_string()),
            ("kernel".to_string(), self.fit.kind.to_string()),
            ("ard".to_string(), self.fit.ard.to_string()),
            ("standardize".to_string(), self.fit.standardize.to_string()),
            ("restarts".to_string(), self.fit.restarts.to_string()),
            ("seed".to_string(), self.fit.seed.to_string()),
            ("max_iter".to_string(), self.fit.max_iter.to_string()),
            ("grad_tol".to_string(), self.fit.grad_tol.to_string()),
            ("grid_quantum_v".to_string(), GRID_QUANTUM_V.to_string()),
            ("cache".to_string(), self.cache.to_string()),
        ]);
        out
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub cell_id: String,
    pub curve_id: String,
    pub y: f64,
    pub yhat: f64,
    pub sigma: f64,
    /// Upper voltage of the grid the prediction used (GP-ICE only).
    pub v_h: Option<f64>,
}

/// One conditioned model inside a fold.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFit {
    pub v_h: f64,
    pub train_size: usize,
    pub train_excluded: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub test_cell_id: String,
    pub predictions: Vec<PredictionRecord>,
    /// Optimized log-hyperparameters, absent when nothing was predicted.
    pub log_params: Option<Vec<f64>>,
    /// The same hyperparameters in the reference grid's input units.
    pub hyperparams: Option<KernelHyperparams>,
    pub fit_info: Option<FitInfo>,
    /// Upper voltage of the grid the hyperparameters were optimized on.
    pub reference_v_h: Option<f64>,
    pub grids: Vec<GridFit>,
    /// Test curves without a prediction, with the reason.
    pub test_excluded: Vec<(String, String)>,
    /// Every cell contributing a training sample to any model of the fold.
    pub training_cells: BTreeSet<String>,
    /// Set when the fold failed and the run kept going.
    pub error: Option<String>,
}

impl FoldResult {
    fn empty(test_cell: &str) -> Self {
        FoldResult {
            test_cell_id: test_cell.to_string(),
            predictions: Vec::new(),
            log_params: None,
            hyperparams: None,
            fit_info: None,
            reference_v_h: None,
            grids: Vec::new(),
            test_excluded: Vec::new(),
            training_cells: BTreeSet::new(),
            error: None,
        }
    }
}

/// Applies the keep-going policy to one fold's outcome.
fn settle(cell: &str, outcome: Result<FoldResult>, keep_going: bool) -> Result<FoldResult> {
    match outcome {
        Err(e) if keep_going => {
            log::error!("fold {cell}: {e}");
            let mut fold = FoldResult::empty(cell);
            fold.error = Some(e.to_string());
            Ok(fold)
        }
        other => other,
    }
}

#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub label: String,
    pub method: Method,
    pub config: EvalConfig,
    pub folds: Vec<FoldResult>,
    pub overall_rmspe: f64,
    /// Cells with at least one prediction.
    pub per_cell_rmspe: Vec<(String, f64)>,
    pub cs_067: f64,
    pub cs_2: f64,
}

impl EvaluationReport {
    fn assemble(
        label: String,
        method: Method,
        config: EvalConfig,
        folds: Vec<FoldResult>,
    ) -> Result<Self> {
        let all: Vec<&PredictionRecord> = folds.iter().flat_map(|f| &f.predictions).collect();
        let pairs: Vec<(f64, f64)> = all.iter().map(|p| (p.yhat, p.y)).collect();
        let triples: Vec<(f64, f64, f64)> = all.iter().map(|p| (p.yhat, p.sigma, p.y)).collect();
        let overall_rmspe = rmspe(&pairs)?;
        let per_cell_rmspe = folds
            .iter()
            .filter(|f| !f.predictions.is_empty())
            .map(|f| {
                let pairs: Vec<(f64, f64)> = f.predictions.iter().map(|p| (p.yhat, p.y)).collect();
                Ok((f.test_cell_id.clone(), rmspe(&pairs)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvaluationReport {
            label,
            method,
            config,
            overall_rmspe,
            per_cell_rmspe,
            cs_067: calibration_score(&triples, 0.67)?,
            cs_2: calibration_score(&triples, 2.0)?,
            folds,
        })
    }

    pub fn num_predictions(&self) -> usize {
        self.folds.iter().map(|f| f.predictions.len()).sum()
    }

    pub fn predictions(&self) -> impl Iterator<Item = &PredictionRecord> {
        self.folds.iter().flat_map(|f| &f.predictions)
    }

    /// Cells whose fold trained on their own data; empty when the split is
    /// clean.
    pub fn leakage(&self) -> Vec<String> {
        self.folds
            .iter()
            .filter(|f| {
                f.training_cells.contains(&f.test_cell_id)
                    || f.predictions.iter().any(|p| p.cell_id != f.test_cell_id)
            })
            .map(|f| f.test_cell_id.clone())
            .collect()
    }

    pub fn leakage_free(&self) -> bool {
        self.leakage().is_empty()
    }

    pub fn failed_folds(&self) -> Vec<(&str, &str)> {
        self.folds
            .iter()
            .filter_map(|f| f.error.as_deref().map(|e| (f.test_cell_id.as_str(), e)))
            .collect()
    }
}

/// Rounds an upper voltage toward `v_l` onto the millivolt lattice.
fn quantize_v_h(v_h: f64, direction: Direction) -> f64 {
    let s = direction.sign();
    let units = (s * v_h / GRID_QUANTUM_V + 1e-9).floor();
    s * ((units * GRID_QUANTUM_V) * 1e9).round() / 1e9
}

/// The grid a test segment asks for, or why it cannot be used.
fn test_grid(curve: &PreparedCurve, config: &EvalConfig) -> Result<(f64, Vec<f64>)> {
    let ext = &config.extraction;
    let exact = curve.oriented.resolve_grid(ext)?;
    let v_h = match ext.upper {
        UpperBound::Vh(v_h) => v_h,
        UpperBound::DeltaT(_) => quantize_v_h(exact[exact.len() - 1], config.direction),
    };
    if !((v_h - ext.v_l) * config.direction.sign() > 0.0) {
        return Err(Error::NotMonotone(format!(
            "segment rises less than {GRID_QUANTUM_V} V past v_l"
        )));
    }
    Ok((v_h, voltage_grid(ext.v_l, v_h, ext.n)))
}

fn key(v_h: f64) -> u64 {
    v_h.to_bits()
}

fn training_problem(
    train: &[&PreparedCurve],
    grid: &[f64],
    config: &EvalConfig,
    test_cell: &str,
) -> Result<(GpProblem, usize, BTreeSet<String>)> {
    let set = training_set_from_prepared(train.iter().copied(), grid, config.extraction.v_l)
        .map_err(|e| match e {
            Error::EmptyInput(_) => Error::EmptyTrainingSet {
                cell: test_cell.to_string(),
            },
            other => other,
        })?;
    let cells = set.samples.iter().map(|s| s.cell_id.clone()).collect();
    let (x, y) = crate::gp::split_samples(&set.samples)?;
    let problem = GpProblem::new(&x, &y, config.fit.kind, config.fit.ard, config.fit.standardize)?;
    Ok((problem, set.excluded, cells))
}

fn gp_ice_fold(
    test_cell: &str,
    prepared: &[PreparedCurve],
    config: &EvalConfig,
) -> Result<FoldResult> {
    let train: Vec<&PreparedCurve> = prepared.iter().filter(|c| c.cell_id != test_cell).collect();
    let mut fold = FoldResult::empty(test_cell);
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet {
            cell: test_cell.to_string(),
        });
    }

    // Test segments with their features on the rounded grid.
    let mut tests: Vec<(&PreparedCurve, f64, Vec<f64>)> = Vec::new();
    for c in prepared.iter().filter(|c| c.cell_id == test_cell) {
        let features = test_grid(c, config).and_then(|(v_h, grid)| {
            let x = c.oriented.features(&grid, config.extraction.v_l)?;
            Ok((v_h, x))
        });
        match features {
            Ok((v_h, x)) => tests.push((c, v_h, x)),
            Err(e) => fold.test_excluded.push((c.curve_id.clone(), e.to_string())),
        }
    }
    if tests.is_empty() {
        log::warn!("fold {test_cell}: no usable test segment");
        return Ok(fold);
    }

    let mut sorted: Vec<f64> = tests.iter().map(|t| t.1).collect();
    sorted.sort_by(f64::total_cmp);
    let reference = sorted[sorted.len() / 2];
    let grid = voltage_grid(config.extraction.v_l, reference, config.extraction.n);
    let (problem, _, _) = training_problem(&train, &grid, config, test_cell)?;
    let fitted = fit_problem(problem, &config.fit)?;
    let theta = fitted.log_params().to_vec();
    fold.hyperparams = Some(fitted.hyperparams());
    fold.fit_info = fitted.info.clone();
    fold.reference_v_h = Some(reference);

    // Group segments by grid; without the cache every segment gets its own
    // model, which must give identical numbers.
    let mut groups: BTreeMap<(u64, usize), Vec<usize>> = BTreeMap::new();
    for (i, t) in tests.iter().enumerate() {
        let slot = if config.cache { 0 } else { i };
        groups.entry((key(t.1), slot)).or_default().push(i);
    }
    let mut outputs: Vec<Option<PredictionRecord>> = vec![None; tests.len()];
    for members in groups.values() {
        let v_h = tests[members[0]].1;
        let grid = voltage_grid(config.extraction.v_l, v_h, config.extraction.n);
        let (problem, excluded, cells) = training_problem(&train, &grid, config, test_cell)?;
        let train_size = problem.len();
        let model = GpModel::condition(problem, theta.clone())?;
        for &i in members {
            let (c, _, x) = &tests[i];
            let p = model.predict(x)?;
            outputs[i] = Some(PredictionRecord {
                cell_id: c.cell_id.clone(),
                curve_id: c.curve_id.clone(),
                y: c.capacity,
                yhat: p.mean,
                sigma: p.std,
                v_h: Some(v_h),
            });
        }
        fold.training_cells.extend(cells);
        fold.grids.push(GridFit {
            v_h,
            train_size,
            train_excluded: excluded,
            test_size: members.len(),
        });
    }
    fold.predictions = outputs.into_iter().flatten().collect();
    fold.log_params = Some(theta);
    Ok(fold)
}

fn cell_ids(prepared: &[PreparedCurve]) -> Vec<String> {
    let set: BTreeSet<&str> = prepared.iter().map(|c| c.cell_id.as_str()).collect();
    set.into_iter().map(String::from).collect()
}

fn check_cells(cells: &[String]) -> Result<()> {
    if cells.len() < 2 {
        return Err(Error::InsufficientData {
            need: 2,
            got: cells.len(),
        });
    }
    Ok(())
}

/// Leave-one-cell-out GP-ICE on curves already smoothed with `config.sg`.
pub fn leave_one_cell_out_prepared(
    prepared: &[PreparedCurve],
    config: &EvalConfig,
    label: &str,
) -> Result<EvaluationReport> {
    config.extraction.validate(config.direction)?;
    let cells = cell_ids(prepared);
    check_cells(&cells)?;
    let folds = config.pool()?.install(|| {
        cells
            .par_iter()
            .map(|cell| settle(cell, gp_ice_fold(cell, prepared, config), config.keep_going))
            .collect::<Result<Vec<_>>>()
    })?;
    EvaluationReport::assemble(label.to_string(), Method::GpIce, config.clone(), folds)
}

pub fn leave_one_cell_out(dataset: &Dataset, config: &EvalConfig) -> Result<EvaluationReport> {
    config.sg.validate()?;
    let prepared = prepare_curves(dataset, &config.sg, config.direction)?;
    leave_one_cell_out_prepared(&prepared, config, "gp-ice")
}

/// Peak features of every curve that yields them; the rest are returned
/// with the reason.
pub fn icdv_samples(
    prepared: &[PreparedCurve],
) -> (Vec<FeatureSample>, Vec<(String, String, String)>) {
    let mut samples = Vec::new();
    let mut failed = Vec::new();
    for c in prepared {
        let current = c.oriented.direction().sign() * c.current;
        match icdv_from_smoothed(&c.oriented.original(), current) {
            Ok(f) => samples.push(FeatureSample {
                x: f.to_vec(),
                y: Some(c.capacity),
                cell_id: c.cell_id.clone(),
                curve_id: c.curve_id.clone(),
            }),
            Err(e) => failed.push((c.cell_id.clone(), c.curve_id.clone(), e.to_string())),
        }
    }
    (samples, failed)
}

/// Leave-one-cell-out with the IC/DV peak features and the same GP.
pub fn leave_one_cell_out_icdv_prepared(
    prepared: &[PreparedCurve],
    config: &EvalConfig,
) -> Result<EvaluationReport> {
    let cells = cell_ids(prepared);
    check_cells(&cells)?;
    let (samples, failed) = icdv_samples(prepared);
    let fold = |cell: &String| -> Result<FoldResult> {
        let train: Vec<&FeatureSample> = samples.iter().filter(|s| &s.cell_id != cell).collect();
        let test: Vec<&FeatureSample> = samples.iter().filter(|s| &s.cell_id == cell).collect();
        let test_excluded = failed
            .iter()
            .filter(|f| &f.0 == cell)
            .map(|f| (f.1.clone(), f.2.clone()))
            .collect();
        if train.len() < 2 {
            return Err(Error::EmptyTrainingSet { cell: cell.clone() });
        }
        let x: Vec<Vec<f64>> = train.iter().map(|s| s.x.clone()).collect();
        let y: Vec<f64> = train.iter().map(|s| s.y.unwrap_or(f64::NAN)).collect();
        let problem =
            GpProblem::new(&x, &y, config.fit.kind, config.fit.ard, config.fit.standardize)?;
        let model = fit_problem(problem, &config.fit)?;
        let predictions = test
            .iter()
            .map(|s| {
                let p = model.predict(&s.x)?;
                Ok(PredictionRecord {
                    cell_id: s.cell_id.clone(),
                    curve_id: s.curve_id.clone(),
                    y: s.y.unwrap_or(f64::NAN),
                    yhat: p.mean,
                    sigma: p.std,
                    v_h: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FoldResult {
            test_cell_id: cell.clone(),
            predictions,
            log_params: Some(model.log_params().to_vec()),
            hyperparams: Some(model.hyperparams()),
            fit_info: model.info.clone(),
            reference_v_h: None,
            grids: Vec::new(),
            test_excluded,
            training_cells: train.iter().map(|s| s.cell_id.clone()).collect(),
            error: None,
        })
    };
    let folds = config.pool()?.install(|| {
        cells
            .par_iter()
            .map(|cell| settle(cell, fold(cell), config.keep_going))
            .collect::<Result<Vec<_>>>()
    })?;
    EvaluationReport::assemble("ic+dv".into(), Method::IcDv, config.clone(), folds)
}

pub fn leave_one_cell_out_icdv(dataset: &Dataset, config: &EvalConfig) -> Result<EvaluationReport> {
    config.sg.validate()?;
    let prepared = prepare_curves(dataset, &config.sg, config.direction)?;
    leave_one_cell_out_icdv_prepared(&prepared, config)
}

/// The six segment configurations `(Δt, v_l)`, numbered 1 to 6 in order.
pub const DEFAULT_GRID: [(f64, f64); 6] = [
    (10.0, 3.5),
    (450.0, 3.5),
    (1450.0, 3.5),
    (10.0, 3.7),
    (450.0, 3.7),
    (1450.0, 3.7),
];

#[derive(Debug, Clone)]
pub struct SweepEntry {
    /// 1-based position in the `(Δt, v_l)` grid.
    pub config_index: usize,
    pub delta_t: f64,
    pub v_l: f64,
    pub n: usize,
    /// Failed evaluations keep their message instead of aborting the sweep.
    pub outcome: std::result::Result<EvaluationReport, String>,
}

impl SweepEntry {
    pub fn label(&self) -> String {
        format!("config{}_n{}", self.config_index, self.n)
    }

    pub fn rmspe(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.overall_rmspe)
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    pub baseline: Option<std::result::Result<EvaluationReport, String>>,
}

impl SweepResult {
    pub fn reports(&self) -> Vec<&EvaluationReport> {
        let mut out: Vec<&EvaluationReport> =
            self.entries.iter().filter_map(|e| e.outcome.as_ref().ok()).collect();
        if let Some(Ok(b)) = &self.baseline {
            out.push(b);
        }
        out
    }

    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.outcome.is_err()).count()
            + usize::from(matches!(self.baseline, Some(Err(_))))
    }

    /// RMSPE against `n` for one `(Δt, v_l)` configuration.
    pub fn rmspe_vs_n(&self, config_index: usize) -> Vec<(usize, Option<f64>)> {
        self.entries
            .iter()
            .filter(|e| e.config_index == config_index)
            .map(|e| (e.n, e.rmspe()))
            .collect()
    }
}

/// Every `(Δt, v_l)` pair crossed with every `n`, optionally with the IC/DV
/// baseline. `base` supplies everything except the extraction settings.
pub fn sweep_prepared(
    prepared: &[PreparedCurve],
    grid: &[(f64, f64)],
    ns: &[usize],
    base: &EvalConfig,
    with_baseline: bool,
) -> Result<SweepResult> {
    if grid.is_empty() || ns.is_empty() {
        return Err(Error::EmptyInput("sweep grid is empty".into()));
    }
    let mut jobs = Vec::new();
    for (i, &(delta_t, v_l)) in grid.iter().enumerate() {
        for &n in ns {
            jobs.push((i + 1, delta_t, v_l, n));
        }
    }
    let pool = base.pool()?;
    let entries = pool.install(|| {
        jobs.par_iter()
            .map(|&(config_index, delta_t, v_l, n)| {
                let mut config = base.clone();
                config.extraction = ExtractionConfig::with_delta_t(v_l, delta_t, n);
                let label = format!("config{config_index}_n{n}");
                let outcome = leave_one_cell_out_prepared(prepared, &config, &label)
                    .map_err(|e| e.to_string());
                if let Err(e) = &outcome {
                    log::warn!("{label}: {e}");
                }
                SweepEntry {
                    config_index,
                    delta_t,
                    v_l,
                    n,
                    outcome,
                }
            })
            .collect::<Vec<_>>()
    });
    let baseline = with_baseline
        .then(|| leave_one_cell_out_icdv_prepared(prepared, base).map_err(|e| e.to_string()));
    Ok(SweepResult { entries, baseline })
}

pub fn sweep(
    dataset: &Dataset,
    grid: &[(f64, f64)],
    ns: &[usize],
    base: &EvalConfig,
) -> Result<SweepResult> {
    base.sg.validate()?;
    let prepared = prepare_curves(dataset, &base.sg, base.direction)?;
    sweep_prepared(&prepared, grid, ns, base, false)
}

/// The sweep with the IC/DV baseline alongside.
pub fn compare_baseline(
    dataset: &Dataset,
    grid: &[(f64, f64)],
    base: &EvalConfig,
) -> Result<SweepResult> {
    base.sg.validate()?;
    let prepared = prepare_curves(dataset, &base.sg, base.direction)?;
    sweep_prepared(&prepared, grid, &[base.extraction.n], base, true)
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn describe_extraction(e: &ExtractionConfig) -> (String, String, String) {
    match e.upper {
        UpperBound::DeltaT(dt) => (format_g9(e.v_l), format_g9(dt), String::new()),
        UpperBound::Vh(vh) => (format_g9(e.v_l), String::new(), format_g9(vh)),
    }
}

/// Writes `summary.csv`, `predictions.csv`, `per_cell.csv`, `folds.csv`,
/// `config.snapshot` and, for sweeps, `sweep.csv` and `rmspe_vs_n.csv`
/// into `dir`.
pub fn write_report_dir(
    dir: &Path,
    reports: &[&EvaluationReport],
    sweep: Option<&SweepResult>,
    snapshot: &[(String, String)],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut summary =
        String::from("label,method,v_l,delta_t_s,v_h,n,rmspe_pct,cs_067,cs_2,n_predictions,n_excluded\n");
    let mut predictions = String::from("label,cell_id,curve_id,y,yhat,sigma,v_h\n");
    let mut per_cell = String::from("label,cell_id,rmspe_pct,n_predictions\n");
    let mut folds = String::from(
        "label,test_cell_id,log_params,nlml,converged,reference_v_h,n_grids,n_test_excluded,error\n",
    );
    for r in reports {
        let (v_l, dt, vh) = match r.method {
            Method::GpIce => describe_extraction(&r.config.extraction),
            Method::IcDv => Default::default(),
        };
        let n = match r.method {
            Method::GpIce => r.config.extraction.n,
            Method::IcDv => 4,
        };
        let excluded: usize = r.folds.iter().map(|f| f.test_excluded.len()).sum();
        let _ = writeln!(
            summary,
            "{},{},{v_l},{dt},{vh},{n},{},{},{},{},{excluded}",
            r.label,
            r.method,
            format_g9(r.overall_rmspe),
            format_g9(r.cs_067),
            format_g9(r.cs_2),
            r.num_predictions()
        );
        for p in r.predictions() {
            let _ = writeln!(
                predictions,
                "{},{},{},{},{},{},{}",
                r.label,
                p.cell_id,
                p.curve_id,
                format_g9(p.y),
                format_g9(p.yhat),
                format_g9(p.sigma),
                p.v_h.map(format_g9).unwrap_or_default()
            );
        }
        for f in &r.folds {
            let count = f.predictions.len();
            if let Some((_, v)) = r.per_cell_rmspe.iter().find(|(c, _)| c == &f.test_cell_id) {
                let _ = writeln!(per_cell, "{},{},{},{count}", r.label, f.test_cell_id, format_g9(*v));
            }
            let theta = f
                .log_params
                .as_ref()
                .map(|t| t.iter().map(|v| format_g9(*v)).collect::<Vec<_>>().join(" "))
                .unwrap_or_default();
            let (nlml, converged) = f
                .fit_info
                .as_ref()
                .map(|i| (format_g9(i.nlml), i.converged.to_string()))
                .unwrap_or_default();
            let _ = writeln!(
                folds,
                "{},{},{theta},{nlml},{converged},{},{},{},{}",
                r.label,
                f.test_cell_id,
                f.reference_v_h.map(format_g9).unwrap_or_default(),
                f.grids.len(),
                f.test_excluded.len(),
                f.error.as_deref().map(|e| format!("\"{}\"", e.replace('"', "'"))).unwrap_or_default()
            );
        }
    }
    write(&dir.join("summary.csv"), summary)?;
    write(&dir.join("predictions.csv"), predictions)?;
    write(&dir.join("per_cell.csv"), per_cell)?;
    write(&dir.join("folds.csv"), folds)?;

    if let Some(s) = sweep {
        let mut text =
            String::from("config,delta_t_s,v_l,n,rmspe_pct,cs_067,cs_2,n_predictions,status\n");
        for e in &s.entries {
            match &e.outcome {
                Ok(r) => {
                    let _ = writeln!(
                        text,
                        "{},{},{},{},{},{},{},{},ok",
                        e.config_index,
                        format_g9(e.delta_t),
                        format_g9(e.v_l),
                        e.n,
                        format_g9(r.overall_rmspe),
                        format_g9(r.cs_067),
                        format_g9(r.cs_2),
                        r.num_predictions()
                    );
                }
                Err(msg) => {
                    let _ = writeln!(
                        text,
                        "{},{},{},{},,,,0,\"error: {}\"",
                        e.config_index,
                        format_g9(e.delta_t),
                        format_g9(e.v_l),
                        e.n,
                        msg.replace('"', "'")
                    );
                }
            }
        }
        write(&dir.join("sweep.csv"), text)?;

        // RMSPE against n, one column per (Δt, v_l) configuration.
        let configs: BTreeSet<usize> = s.entries.iter().map(|e| e.config_index).collect();
        let ns: BTreeSet<usize> = s.entries.iter().map(|e| e.n).collect();
        let mut wide = String::from("n");
        for c in &configs {
            let _ = write!(wide, ",config{c}");
        }
        wide.push('\n');
        for n in &ns {
            let _ = write!(wide, "{n}");
            for c in &configs {
                let v = s
                    .entries
                    .iter()
                    .find(|e| e.n == *n && e.config_index == *c)
                    .and_then(SweepEntry::rmspe);
                let _ = write!(wide, ",{}", v.map(format_g9).unwrap_or_default());
            }
            wide.push('\n');
        }
        write(&dir.join("rmspe_vs_n.csv"), wide)?;
    }

    let mut snap = String::new();
    for (k, v) in snapshot {
        let _ = writeln!(snap, "{k} = {v}");
    }
    write(&dir.join("config.snapshot"), snap)
}

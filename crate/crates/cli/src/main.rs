#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpice::dataio::{load_dataset_report, read_curve_csv, write_dataset, GvCurve};
use gpice::eval::{
    leave_one_cell_out_prepared, sweep_prepared, write_report_dir, EvaluationReport, DEFAULT_GRID,
};
use gpice::features::{
    prepare_curves, training_set_from_prepared, voltage_grid, Direction, OrientedCurve,
    UpperBound,
};
use gpice::gp::{fit_samples, GpModel};
use gpice::smoothing::{preprocess_segment, SgConfig};
use gpice::synth::{Preset, SynthConfig};

use config::{read_grid_file, read_key_values, RunConfig};

/// `println!` that stays quiet when stdout is closed early, as with `| head`.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config values or input files; exit code 2.
    Usage(String),
    /// Every validation problem found in a configuration; exit code 2.
    Config(Vec<String>),
    /// Failure while running; exit code 1.
    Runtime(String),
}

impl From<gpice::Error> for CliError {
    fn from(e: gpice::Error) -> Self {
        use gpice::Error as E;
        match e {
            E::Io { .. }
            | E::Parse { .. }
            | E::InvalidConfig(_)
            | E::EmptyCurve { .. }
            | E::NonGalvanostatic { .. }
            | E::NonMonotoneTime { .. }
            | E::DuplicateCell(_)
            | E::Model(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "gpice", version, about = "Capacity estimation from short constant-current voltage segments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Leave-one-cell-out evaluation at one configuration.
    Evaluate(RunArgs),
    /// Evaluation over a grid of (Δt, v_l) pairs and optionally several n.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// CSV of `delta_t,v_l` rows; defaults to the six standard configurations.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Input dimensions to sweep, `start:end:step` or a list.
        #[arg(long)]
        n_sweep: Option<String>,
        /// Also evaluate the IC/DV peak baseline.
        #[arg(long)]
        baseline: bool,
    },
    /// Write a synthetic dataset.
    Synth {
        /// `key = value` spec file.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, allow_hyphen_values = true)]
        noise_std: Option<f64>,
        #[arg(long)]
        cells: Option<usize>,
        #[arg(long)]
        cycles: Option<usize>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Fit one model on a whole dataset at a fixed voltage grid and save it.
    Fit {
        #[command(flatten)]
        run: RunArgs,
        /// Where to write the model.
        #[arg(long)]
        model: PathBuf,
    },
    /// Estimate capacity from a segment with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Segment CSV with `time_s,voltage_v,current_a` columns.
        #[arg(long)]
        segment: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// `key = value` configuration file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    direction: Option<String>,
    #[arg(long)]
    v_l: Option<f64>,
    #[arg(long)]
    delta_t: Option<f64>,
    #[arg(long)]
    v_h: Option<f64>,
    #[arg(long, short)]
    n: Option<usize>,
    #[arg(long)]
    sg_window: Option<usize>,
    #[arg(long)]
    sg_order: Option<usize>,
    #[arg(long)]
    sg_interval: Option<f64>,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Record failing folds and exit 0 instead of stopping.
    #[arg(long)]
    keep_going: bool,
    /// Refit per segment instead of sharing models between equal grids.
    #[arg(long)]
    no_cache: bool,
}

impl RunArgs {
    fn merged(&self) -> Result<BTreeMap<String, String>, CliError> {
        let mut map = match &self.config {
            Some(p) => read_key_values(p)?,
            None => BTreeMap::new(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                map.insert(k.to_string(), v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        set("manifest", path(&self.manifest));
        set("output", path(&self.output));
        set("direction", self.direction.clone());
        set("v_l", self.v_l.map(|v| v.to_string()));
        set("n", self.n.map(|v| v.to_string()));
        set("sg_window", self.sg_window.map(|v| v.to_string()));
        set("sg_order", self.sg_order.map(|v| v.to_string()));
        set("sg_interval", self.sg_interval.map(|v| v.to_string()));
        set("kernel", self.kernel.clone());
        set("restarts", self.restarts.map(|v| v.to_string()));
        set("seed", self.seed.map(|v| v.to_string()));
        set("jobs", self.jobs.map(|v| v.to_string()));
        if self.keep_going {
            set("keep_going", Some("true".into()));
        }
        if self.no_cache {
            set("cache", Some("false".into()));
        }
        // A flag for one upper bound replaces the other from the file.
        if let Some(dt) = self.delta_t {
            map.remove("v_h");
            map.insert("delta_t".into(), dt.to_string());
        }
        if let Some(vh) = self.v_h {
            map.remove("delta_t");
            map.insert("v_h".into(), vh.to_string());
        }
        Ok(map)
    }
}

fn load_prepared(
    cfg: &RunConfig,
) -> Result<Vec<gpice::features::PreparedCurve>, CliError> {
    let report = load_dataset_report(&cfg.manifest)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let ds = report.dataset;
    log::info!(
        "loaded {}: {} cells, {} curves",
        cfg.manifest.display(),
        ds.num_cells(),
        ds.num_samples()
    );
    Ok(prepare_curves(&ds, &cfg.eval.sg, cfg.eval.direction)?)
}

fn print_report(r: &EvaluationReport) {
    say!(
        "{:<14} RMSPE {:>8.4} %   CS_0.67σ {:.3}   CS_2σ {:.3}   predictions {}",
        r.label,
        r.overall_rmspe,
        r.cs_067,
        r.cs_2,
        r.num_predictions()
    );
}

fn check_leakage(reports: &[&EvaluationReport]) -> Result<(), CliError> {
    for r in reports {
        let leaked = r.leakage();
        if !leaked.is_empty() {
            return Err(CliError::Runtime(format!(
                "{}: test cells found in their own training data: {leaked:?}",
                r.label
            )));
        }
    }
    Ok(())
}

fn cmd_evaluate(args: &RunArgs) -> Result<(), CliError> {
    let cfg = RunConfig::from_map(&args.merged()?, true)?;
    let prepared = load_prepared(&cfg)?;
    let report = leave_one_cell_out_prepared(&prepared, &cfg.eval, "gp-ice")?;
    write_report_dir(&cfg.output, &[&report], None, &cfg.snapshot())?;
    check_leakage(&[&report])?;
    print_report(&report);
    for (cell, e) in report.failed_folds() {
        eprintln!("fold {cell} failed: {e}");
    }
    say!("report written to {}", cfg.output.display());
    Ok(())
}

fn cmd_sweep(
    args: &RunArgs,
    grid: Option<&Path>,
    n_sweep: Option<&str>,
    baseline: bool,
) -> Result<(), CliError> {
    let mut map = args.merged()?;
    if let Some(spec) = n_sweep {
        map.insert("n_sweep".into(), spec.to_string());
    }
    if baseline {
        map.insert("baseline".into(), "true".into());
    }
    let mut cfg = RunConfig::from_map(&map, true)?;
    if let Some(path) = grid {
        cfg.sweep_grid = Some(read_grid_file(path)?);
    }
    let pairs = cfg.sweep_grid.clone().unwrap_or_else(|| DEFAULT_GRID.to_vec());
    cfg.sweep_grid = Some(pairs.clone());
    let ns = cfg
        .n_sweep
        .clone()
        .unwrap_or_else(|| vec![cfg.eval.extraction.n]);
    let prepared = load_prepared(&cfg)?;
    let result = sweep_prepared(&prepared, &pairs, &ns, &cfg.eval, cfg.baseline)?;
    let reports = result.reports();
    write_report_dir(&cfg.output, &reports, Some(&result), &cfg.snapshot())?;
    check_leakage(&reports)?;
    for r in &reports {
        print_report(r);
    }
    let mut failures = Vec::new();
    for e in &result.entries {
        if let Err(msg) = &e.outcome {
            failures.push(format!("{}: {msg}", e.label()));
        }
    }
    if let Some(Err(msg)) = &result.baseline {
        failures.push(format!("ic+dv: {msg}"));
    }
    for r in &reports {
        for (cell, e) in r.failed_folds() {
            eprintln!("{} fold {cell} failed: {e}", r.label);
        }
    }
    say!("report written to {}", cfg.output.display());
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("{f}");
        }
        if !cfg.eval.keep_going {
            return Err(CliError::Runtime(format!(
                "{} of the sweep evaluations failed",
                failures.len()
            )));
        }
    }
    Ok(())
}

const SYNTH_KEYS: &[&str] = &[
    "preset",
    "cells",
    "cycles",
    "noise_std",
    "current",
    "interval",
    "seed",
    "knee_cell",
    "knee_cycle",
    "output",
];

fn synth_config(map: &BTreeMap<String, String>) -> Result<(SynthConfig, PathBuf), CliError> {
    let mut errors = Vec::new();
    for key in map.keys() {
        if !SYNTH_KEYS.contains(&key.as_str()) {
            errors.push(format!("{key}: unknown setting"));
        }
    }
    let preset: Preset = match map.get("preset").map(|p| p.parse()) {
        None => Preset::Oxford,
        Some(Ok(p)) => p,
        Some(Err(e)) => {
            errors.push(format!("preset: {e}"));
            Preset::Oxford
        }
    };
    let mut cfg = SynthConfig::preset(preset);
    fn field<T: std::str::FromStr>(
        map: &BTreeMap<String, String>,
        key: &str,
        slot: &mut T,
        errors: &mut Vec<String>,
    ) {
        if let Some(raw) = map.get(key) {
            match raw.parse() {
                Ok(v) => *slot = v,
                Err(_) => errors.push(format!("{key}: cannot parse {raw:?}")),
            }
        }
    }
    field(map, "cells", &mut cfg.cells, &mut errors);
    field(map, "cycles", &mut cfg.cycles, &mut errors);
    field(map, "noise_std", &mut cfg.noise_std, &mut errors);
    field(map, "current", &mut cfg.current, &mut errors);
    field(map, "interval", &mut cfg.interval, &mut errors);
    field(map, "seed", &mut cfg.seed, &mut errors);
    field(map, "knee_cycle", &mut cfg.knee_cycle, &mut errors);
    match map.get("knee_cell").map(String::as_str) {
        // The preset's knee cell may not exist in a smaller dataset.
        None if cfg.knee_cell.is_some_and(|k| k >= cfg.cells) => {
            log::info!("preset knee cell dropped for {} cells", cfg.cells);
            cfg.knee_cell = None;
        }
        None => {}
        Some("none") => cfg.knee_cell = None,
        Some(raw) => match raw.parse() {
            Ok(v) => cfg.knee_cell = Some(v),
            Err(_) => errors.push(format!("knee_cell: cannot parse {raw:?}")),
        },
    }
    if errors.is_empty() {
        if let Err(e) = cfg.validate() {
            errors.push(e.to_string().replace("invalid configuration: ", ""));
        }
    }
    if !errors.is_empty() {
        return Err(CliError::Config(errors));
    }
    let output = PathBuf::from(map.get("output").map_or("synthetic", String::as_str));
    Ok((cfg, output))
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    spec: Option<&Path>,
    preset: Option<String>,
    seed: Option<u64>,
    noise_std: Option<f64>,
    cells: Option<usize>,
    cycles: Option<usize>,
    output: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut map = match spec {
        Some(p) => read_key_values(p)?,
        None => BTreeMap::new(),
    };
    let mut set = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    };
    set("preset", preset);
    set("seed", seed.map(|v| v.to_string()));
    set("noise_std", noise_std.map(|v| v.to_string()));
    set("cells", cells.map(|v| v.to_string()));
    set("cycles", cycles.map(|v| v.to_string()));
    set("output", output.map(|p| p.display().to_string()));
    let (cfg, out) = synth_config(&map)?;
    let ds = cfg.generate()?;
    let manifest = write_dataset(&ds, &out)?;
    say!(
        "wrote {} cells, {} curves to {}",
        ds.num_cells(),
        ds.num_samples(),
        manifest.display()
    );
    Ok(())
}

fn cmd_fit(args: &RunArgs, model_path: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::from_map(&args.merged()?, true)?;
    let ext = cfg.eval.extraction;
    let UpperBound::Vh(v_h) = ext.upper else {
        return Err(CliError::Config(vec![
            "v_h: fit needs a fixed grid; give v_h instead of delta_t".into(),
        ]));
    };
    let prepared = load_prepared(&cfg)?;
    let grid = voltage_grid(ext.v_l, v_h, ext.n);
    let set = training_set_from_prepared(&prepared, &grid, ext.v_l)?;
    let model = fit_samples(&set.samples, &cfg.eval.fit)?;
    let mut meta = BTreeMap::new();
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
    meta.insert("direction".to_string(), cfg.eval.direction.to_string());
    meta.insert("v_l".to_string(), ext.v_l.to_string());
    meta.insert("v_h".to_string(), v_h.to_string());
    meta.insert("grid".to_string(), join(&grid));
    meta.insert("sg_window".to_string(), cfg.eval.sg.window_length.to_string());
    meta.insert("sg_order".to_string(), cfg.eval.sg.polynomial_order.to_string());
    meta.insert("sg_interval".to_string(), cfg.eval.sg.resample_interval.to_string());
    meta.insert("excluded_curves".to_string(), set.excluded.to_string());
    if let Some(parent) = model_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    fs::write(model_path, model.to_text(&meta))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", model_path.display())))?;
    let info = model.info.clone();
    say!(
        "fitted on {} curves ({} excluded), NLML {:.6}, converged {}; model written to {}",
        model.num_train(),
        set.excluded,
        info.as_ref().map_or(f64::NAN, |i| i.nlml),
        info.as_ref().is_some_and(|i| i.converged),
        model_path.display()
    );
    Ok(())
}

fn meta_value<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T, CliError> {
    meta.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::Usage(format!("model file: missing or bad meta.{key}")))
}

fn cmd_predict(model_path: &Path, segment: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(model_path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", model_path.display())))?;
    let (model, meta) = GpModel::from_text(&text)?;
    let direction: Direction = meta_value(&meta, "direction")?;
    let v_l: f64 = meta_value(&meta, "v_l")?;
    let grid: Vec<f64> = meta
        .get("grid")
        .map(|g| g.split_whitespace().map(str::parse).collect::<Result<Vec<f64>, _>>())
        .and_then(Result::ok)
        .ok_or_else(|| CliError::Usage("model file: missing or bad meta.grid".into()))?;
    let sg = SgConfig {
        window_length: meta_value(&meta, "sg_window")?,
        polynomial_order: meta_value(&meta, "sg_order")?,
        resample_interval: meta_value(&meta, "sg_interval")?,
    };
    let cols = read_curve_csv(segment)?;
    let (curve, _) = GvCurve::ingest(
        "online",
        segment.display().to_string(),
        cols.time,
        cols.voltage,
        cols.current,
        cols.temperature_c,
    )?;
    let smoothed = preprocess_segment(&curve, &sg)?;
    let x = OrientedCurve::new(&smoothed, direction).features(&grid, v_l)?;
    let p = model.predict(&x)?;
    say!(
        "capacity {:.6} Ah ± {:.6} Ah (2σ)",
        p.mean,
        2.0 * p.std
    );
    say!("capacity_ah={}", p.mean);
    say!("sigma_ah={}", p.std);
    say!("lower_2sigma_ah={}", p.mean - 2.0 * p.std);
    say!("upper_2sigma_ah={}", p.mean + 2.0 * p.std);
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Sweep {
            run,
            grid,
            n_sweep,
            baseline,
        } => cmd_sweep(&run, grid.as_deref(), n_sweep.as_deref(), baseline),
        Command::Synth {
            spec,
            preset,
            seed,
            noise_std,
            cells,
            cycles,
            output,
        } => cmd_synth(spec.as_deref(), preset, seed, noise_std, cells, cycles, output),
        Command::Fit { run, model } => cmd_fit(&run, &model),
        Command::Predict { model, segment } => cmd_predict(&model, &segment),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Config(errors)) => {
            eprintln!("error: invalid configuration");
            for e in errors {
                eprintln!("  {e}");
            }
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

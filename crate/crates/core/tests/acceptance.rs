//! Runs without the libtest harness so the report is never captured: one
//! line per acceptance criterion, then a nonzero exit if any failed.
//! Criterion 8 needs the public datasets and is skipped without them: point
//! `GPICE_OXFORD_MANIFEST` and `GPICE_NASA_MANIFEST` at their manifests
//! (direction defaults to charge, override with `GPICE_OXFORD_DIRECTION` /
//! `GPICE_NASA_DIRECTION`).

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{fd_gradient, joint_gaussian_posterior, random_problem};
use gpice::dataio::load_dataset;
use gpice::eval::{
    calibration_score, leave_one_cell_out_prepared, rmspe, sweep_prepared, EvalConfig,
    EvaluationReport, SweepResult, DEFAULT_GRID,
};
use gpice::features::{extract_features, prepare_curves, voltage_grid, Direction, ExtractionConfig};
use gpice::gp::{self, GpModel, GpProblem};
use gpice::smoothing::{sg_smooth_values, SgConfig, SmoothedCurve};
use gpice::synth::{Preset, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let p = random_problem(seed, 6, 4);
        let model = match GpModel::with_hyperparams(&p.x, &p.y, &p.hyp, true) {
            Ok(m) => m,
            Err(e) => return Outcome::Fail(format!("problem {seed}: {e}")),
        };
        for q in &p.queries {
            let got = model.predict(q).unwrap();
            let (m, v) = joint_gaussian_posterior(&p.x, &p.y, &p.hyp, q);
            worst = worst.max((got.mean - m).abs()).max((got.std * got.std - v).abs());
        }
    }
    let took = start.elapsed();
    verdict(
        worst < 1e-8 && took < Duration::from_secs(10),
        format!("max abs deviation {worst:.2e} over 100 problems in {took:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    let mut seed = 0;
    while instances < 50 {
        seed += 1;
        let p = random_problem(5000 + seed, 10, 3);
        if p.x.len() < 3 {
            continue;
        }
        let problem = GpProblem::new(&p.x, &p.y, p.hyp.kind, true, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta: Vec<f64> = (0..problem.num_params())
            .map(|_| rng.gen_range(-1.0..0.5))
            .collect();
        let (_, grad) = gp::nlml(&problem, &theta).unwrap();
        let fd = fd_gradient(&problem, &theta, 1e-6);
        for (a, b) in grad.iter().zip(&fd) {
            // Floor keeps components that are zero up to rounding from
            // dividing by nothing.
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
            worst = worst.max(rel);
        }
        instances += 1;
    }
    let took = start.elapsed();
    verdict(
        worst < 1e-5 && took < Duration::from_secs(10),
        format!("max relative error {worst:.2e} over {instances} instances in {took:.2?}"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for (order, window) in [(2, 11), (3, 25), (4, 31)] {
        let cfg = SgConfig {
            window_length: window,
            polynomial_order: order,
            resample_interval: 1.0,
        };
        for _ in 0..50 {
            let len = rng.gen_range(window..4 * window);
            let degree = rng.gen_range(0..=order);
            let coeffs: Vec<f64> = (0..=degree).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..len)
                .map(|i| {
                    let u = i as f64 / len as f64;
                    coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
                })
                .collect();
            let out = sg_smooth_values(&y, &cfg).unwrap();
            for (a, b) in out.iter().zip(&y) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    verdict(
        worst < 1e-10,
        format!("max deviation {worst:.2e} for (2,11), (3,25), (4,31)"),
    )
}

fn criterion_4() -> Outcome {
    let grid = voltage_grid(3.3, 3.5, 4);
    let ramp = SmoothedCurve {
        time: (0..400).map(f64::from).collect(),
        voltage: (0..400).map(|i| 3.2 + 0.001 * f64::from(i)).collect(),
        source_id: "ramp".into(),
    };
    let x = extract_features(&ramp, &grid, 3.3, Direction::Charge).unwrap();
    let times_ok = x
        .iter()
        .zip([50.0, 100.0, 150.0, 200.0])
        .all(|(a, b)| (a - b).abs() < 1e-6);
    verdict(
        grid == [3.35, 3.40, 3.45, 3.50] && times_ok,
        format!("grid {grid:?}, ramp features {x:?}"),
    )
}

fn criterion_5() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let examples = [
        rmspe(&[(1.0, 1.0), (0.7, 0.7)]).unwrap() == 0.0,
        close(rmspe(&[(1.1, 1.0)]).unwrap(), 10.0),
        close(rmspe(&[(1.02, 1.0), (0.98, 1.0)]).unwrap(), 2.0),
        calibration_score(&[(1.0, 0.1, 1.0), (0.8, 0.2, 0.8)], 2.0).unwrap() == 1.0,
        calibration_score(&[(1.5, 0.25, 1.0)], 2.0).unwrap() == 0.0,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let triples: Vec<(f64, f64, f64)> = (0..100_000)
        .map(|_| {
            let sigma = rng.gen_range(0.001..0.05);
            let z: f64 = rng.sample(StandardNormal);
            (1.0, sigma, 1.0 + sigma * z)
        })
        .collect();
    let cs2 = calibration_score(&triples, 2.0).unwrap();
    verdict(
        examples.iter().all(|&b| b) && (cs2 - 0.954).abs() <= 0.005,
        format!(
            "{}/{} hand examples, Monte Carlo CS_2sigma {cs2:.4}",
            examples.iter().filter(|&&b| b).count(),
            examples.len()
        ),
    )
}

struct Synthetic {
    sweep: SweepResult,
    elapsed: Duration,
    n8: Result<EvaluationReport, String>,
}

fn run_synthetic() -> Result<Synthetic, String> {
    let start = Instant::now();
    let dataset = SynthConfig::preset(Preset::Oxford)
        .generate()
        .map_err(|e| e.to_string())?;
    let base = EvalConfig::default();
    let prepared = prepare_curves(&dataset, &base.sg, base.direction).map_err(|e| e.to_string())?;
    let sweep = sweep_prepared(&prepared, &DEFAULT_GRID, &[4], &base, true)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (dt, v_l) = DEFAULT_GRID[1];
    let config = EvalConfig {
        extraction: ExtractionConfig::with_delta_t(v_l, dt, 8),
        ..base
    };
    let n8 = leave_one_cell_out_prepared(&prepared, &config, "config2_n8").map_err(|e| e.to_string());
    Ok(Synthetic { sweep, elapsed, n8 })
}

/// Pairs of configurations adjacent in Δt at equal v_l that get worse as
/// Δt grows, with the size of the increase.
fn inversions(sweep: &SweepResult) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for a in &sweep.entries {
        for b in &sweep.entries {
            let adjacent = a.v_l == b.v_l
                && a.delta_t < b.delta_t
                && !sweep
                    .entries
                    .iter()
                    .any(|c| c.v_l == a.v_l && c.delta_t > a.delta_t && c.delta_t < b.delta_t);
            if let (true, Some(ra), Some(rb)) = (adjacent, a.rmspe(), b.rmspe()) {
                if rb > ra {
                    out.push((a.config_index, b.config_index, rb - ra));
                }
            }
        }
    }
    out
}

fn criterion_6(syn: &Result<Synthetic, String>) -> Outcome {
    let syn = match syn {
        Ok(s) => s,
        Err(e) => return Outcome::Fail(format!("synthetic run failed: {e}")),
    };
    let rmspes: Vec<String> = syn
        .sweep
        .entries
        .iter()
        .map(|e| match e.rmspe() {
            Some(r) => format!("{}={r:.2}%", e.config_index),
            None => format!("{}=failed", e.config_index),
        })
        .collect();
    let baseline = match &syn.sweep.baseline {
        Some(Ok(b)) => format!("{:.2}%", b.overall_rmspe),
        _ => "failed".into(),
    };
    let config2 = syn.sweep.entries[1].outcome.as_ref();
    let (r2, cs2) = config2.map_or((f64::NAN, f64::NAN), |r| (r.overall_rmspe, r.cs_2));
    let inv = inversions(&syn.sweep);
    let monotone = inv.is_empty() || (inv.len() == 1 && inv[0].2 <= 0.3);
    let ok = syn.sweep.failures() == 0
        && r2 < 3.0
        && (0.80..=0.99).contains(&cs2)
        && syn.elapsed < Duration::from_secs(600)
        && monotone;
    verdict(
        ok,
        format!(
            "config2 RMSPE {r2:.2}% CS_2sigma {cs2:.3}; sweep {} ic+dv={baseline}; inversions {inv:?}; {:.0} s",
            rmspes.join(" "),
            syn.elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7(syn: &Result<Synthetic, String>) -> Outcome {
    let syn = match syn {
        Ok(s) => s,
        Err(e) => return Outcome::Fail(format!("synthetic run failed: {e}")),
    };
    let r4 = syn.sweep.entries[1].rmspe();
    let r8 = syn.n8.as_ref().ok().map(|r| r.overall_rmspe);
    match (r4, r8) {
        (Some(r4), Some(r8)) => verdict(
            r4 - r8 < 0.5,
            format!("config2 RMSPE n=4 {r4:.2}% n=8 {r8:.2}%, improvement {:.2} pp", r4 - r8),
        ),
        _ => Outcome::Fail(format!("missing run: n=4 {r4:?}, n=8 {:?}", syn.n8.as_ref().err())),
    }
}

fn manifest(var: &str) -> Option<PathBuf> {
    std::env::var_os(var).map(PathBuf::from).filter(|p| p.is_file())
}

fn direction(var: &str) -> Direction {
    std::env::var(var)
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(Direction::Charge)
}

struct RealCheck {
    ok: bool,
    detail: String,
    reports: Vec<EvaluationReport>,
}

fn real_dataset(
    name: &str,
    path: &Path,
    dir: Direction,
    gp_target: (f64, f64),
    icdv_target: (f64, f64),
    cliff: bool,
) -> Result<RealCheck, String> {
    let dataset = load_dataset(path).map_err(|e| e.to_string())?;
    let base = EvalConfig {
        direction: dir,
        ..EvalConfig::default()
    };
    let prepared = prepare_curves(&dataset, &base.sg, base.direction).map_err(|e| e.to_string())?;
    let (dt6, vl6) = DEFAULT_GRID[5];
    let mut grid = vec![(dt6, vl6)];
    if cliff {
        grid.extend([(10.0, 3.3), (10.0, 3.7)]);
    }
    let sweep = sweep_prepared(&prepared, &grid, &[4], &base, true).map_err(|e| e.to_string())?;
    let r6 = sweep.entries[0].rmspe().ok_or("config 6 failed")?;
    let icdv = match &sweep.baseline {
        Some(Ok(b)) => b.overall_rmspe,
        _ => return Err("IC+DV baseline failed".into()),
    };
    let mut ok = (r6 - gp_target.0).abs() <= gp_target.1
        && (icdv - icdv_target.0).abs() <= icdv_target.1
        && r6 < icdv;
    let mut detail = format!("{name}: config6 {r6:.2}% ic+dv {icdv:.2}%");
    if cliff {
        let (lo, hi) = (sweep.entries[1].rmspe(), sweep.entries[2].rmspe());
        let drop = match (lo, hi) {
            (Some(a), Some(b)) => a - b,
            _ => f64::NAN,
        };
        ok &= drop >= 5.0;
        detail.push_str(&format!(" cliff 3.3->3.7 V at 10 s {drop:.2} pp"));
    }
    let reports = sweep.reports().into_iter().cloned().collect();
    Ok(RealCheck { ok, detail, reports })
}

fn criterion_8(audit: &mut Vec<EvaluationReport>) -> Outcome {
    let oxford = manifest("GPICE_OXFORD_MANIFEST");
    let nasa = manifest("GPICE_NASA_MANIFEST");
    if oxford.is_none() && nasa.is_none() {
        return Outcome::Skip("real datasets not available".into());
    }
    let mut ok = true;
    let mut details = Vec::new();
    let runs = [
        ("oxford", oxford, "GPICE_OXFORD_DIRECTION", (0.49, 1.0), (1.11, 1.5), false),
        ("nasa", nasa, "GPICE_NASA_DIRECTION", (2.48, 1.5), (6.55, 3.0), true),
    ];
    for (name, path, dir_var, gp_t, icdv_t, cliff) in runs {
        let Some(path) = path else {
            details.push(format!("{name}: not available"));
            continue;
        };
        match real_dataset(name, &path, direction(dir_var), gp_t, icdv_t, cliff) {
            Ok(check) => {
                ok &= check.ok;
                details.push(check.detail);
                audit.extend(check.reports);
            }
            Err(e) => {
                ok = false;
                details.push(format!("{name}: {e}"));
            }
        }
    }
    verdict(ok, details.join("; "))
}

fn criterion_9(reports: &[&EvaluationReport]) -> Outcome {
    let leaks: Vec<String> = reports
        .iter()
        .flat_map(|r| r.leakage().into_iter().map(move |c| format!("{}:{c}", r.label)))
        .collect();
    verdict(
        !reports.is_empty() && leaks.is_empty(),
        format!("{} reports audited, leaking folds {leaks:?}", reports.len()),
    )
}

fn main() {
    let mut results = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
    ];
    let synthetic = run_synthetic();
    results.push((6, criterion_6(&synthetic)));
    results.push((7, criterion_7(&synthetic)));
    let mut real_reports = Vec::new();
    results.push((8, criterion_8(&mut real_reports)));

    let mut audited: Vec<&EvaluationReport> = real_reports.iter().collect();
    if let Ok(s) = &synthetic {
        audited.extend(s.sweep.reports());
        audited.extend(s.n8.as_ref().ok());
    }
    results.push((9, criterion_9(&audited)));

    let mut failed = Vec::new();
    for (n, outcome) in &results {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed.push(*n);
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {n}: {tag} ({detail})");
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

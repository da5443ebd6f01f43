mod common;

use gpice::dataio::{CellRecord, Dataset};
use gpice::eval::{
    calibration_score, compare_baseline, leave_one_cell_out, leave_one_cell_out_icdv,
    leave_one_cell_out_prepared, rmspe, sweep_prepared, write_report_dir, EvalConfig, Method,
};
use gpice::features::{prepare_curves, ExtractionConfig};
use gpice::gp::FitOptions;
use gpice::synth::{generate_curve, OcvShape, Preset, Sigmoid, SynthConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn small_dataset(cells: usize, cycles: usize) -> Dataset {
    SynthConfig {
        cells,
        cycles,
        knee_cell: None,
        ..SynthConfig::preset(Preset::Oxford)
    }
    .generate()
    .unwrap()
}

fn quick_config() -> EvalConfig {
    EvalConfig {
        fit: FitOptions {
            restarts: 2,
            ..FitOptions::default()
        },
        ..EvalConfig::default()
    }
}

#[test]
fn every_fold_holds_out_exactly_one_cell() {
    let ds = small_dataset(3, 6);
    let report = leave_one_cell_out(&ds, &quick_config()).unwrap();
    assert_eq!(report.folds.len(), 3);
    assert!(report.leakage_free(), "{:?}", report.leakage());
    for fold in &report.folds {
        assert!(!fold.training_cells.contains(&fold.test_cell_id));
        assert_eq!(fold.training_cells.len(), 2);
        assert!(fold.predictions.iter().all(|p| p.cell_id == fold.test_cell_id));
        let tested: usize = fold.grids.iter().map(|g| g.test_size).sum();
        assert_eq!(tested, fold.predictions.len());
        assert_eq!(fold.predictions.len() + fold.test_excluded.len(), 6);
        assert!(fold.grids.iter().all(|g| g.train_size + g.train_excluded == 12));
    }
}

#[test]
fn two_cells_train_on_each_other() {
    let ds = small_dataset(2, 6);
    let report = leave_one_cell_out(&ds, &quick_config()).unwrap();
    let ids: Vec<&str> = report.folds.iter().map(|f| f.test_cell_id.as_str()).collect();
    assert_eq!(ids.len(), 2);
    assert!(report.folds[0].training_cells.contains(ids[1]));
    assert!(report.folds[1].training_cells.contains(ids[0]));
}

#[test]
fn single_cell_is_rejected() {
    let ds = small_dataset(1, 4);
    let err = leave_one_cell_out(&ds, &quick_config()).unwrap_err();
    assert!(matches!(err, gpice::Error::InsufficientData { need: 2, got: 1 }));
}

#[test]
fn model_cache_does_not_change_results() {
    let ds = small_dataset(3, 6);
    let on = leave_one_cell_out(&ds, &quick_config()).unwrap();
    let off = leave_one_cell_out(&ds, &EvalConfig { cache: false, ..quick_config() }).unwrap();
    let a: Vec<_> = on.predictions().collect();
    let b: Vec<_> = off.predictions().collect();
    assert_eq!(a, b);
    let grids_on: usize = on.folds.iter().map(|f| f.grids.len()).sum();
    let grids_off: usize = off.folds.iter().map(|f| f.grids.len()).sum();
    assert!(grids_on <= grids_off);
    assert_eq!(grids_off, off.num_predictions());
}

#[test]
fn evaluation_is_deterministic_across_thread_counts() {
    let ds = small_dataset(3, 5);
    let one = leave_one_cell_out(&ds, &EvalConfig { jobs: 1, ..quick_config() }).unwrap();
    let two = leave_one_cell_out(&ds, &EvalConfig { jobs: 2, ..quick_config() }).unwrap();
    assert_eq!(one.predictions().collect::<Vec<_>>(), two.predictions().collect::<Vec<_>>());
    assert_eq!(one.overall_rmspe.to_bits(), two.overall_rmspe.to_bits());
}

#[test]
fn pooled_metrics_are_recomputable_from_predictions() {
    let ds = small_dataset(3, 6);
    let report = leave_one_cell_out(&ds, &quick_config()).unwrap();
    let preds: Vec<_> = report.predictions().collect();
    // Independent pooled RMSPE over all predictions at once.
    let sq: f64 = preds.iter().map(|p| ((p.yhat - p.y) / p.y).powi(2)).sum();
    let want = 100.0 * (sq / preds.len() as f64).sqrt();
    assert!((report.overall_rmspe - want).abs() < 1e-12);
    let inside = preds.iter().filter(|p| (p.yhat - p.y).abs() < 2.0 * p.sigma).count();
    assert_eq!(report.cs_2, inside as f64 / preds.len() as f64);
    assert!(report.cs_067 <= report.cs_2);
    // Pooled is not the mean of per-cell values in general, but lies within
    // their range.
    let per: Vec<f64> = report.per_cell_rmspe.iter().map(|p| p.1).collect();
    let lo = per.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = per.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(report.overall_rmspe >= lo - 1e-12 && report.overall_rmspe <= hi + 1e-12);
}

#[test]
fn fixed_upper_voltage_uses_one_grid_per_fold() {
    let ds = small_dataset(3, 5);
    let config = EvalConfig {
        extraction: ExtractionConfig::with_v_h(3.5, 3.6, 4),
        ..quick_config()
    };
    let report = leave_one_cell_out(&ds, &config).unwrap();
    for fold in &report.folds {
        assert_eq!(fold.grids.len(), 1);
        assert_eq!(fold.grids[0].v_h, 3.6);
    }
    assert!(report.overall_rmspe < 5.0, "{}", report.overall_rmspe);
}

#[test]
fn empty_sweep_grid_is_an_error() {
    let ds = small_dataset(2, 3);
    let config = quick_config();
    let prepared = prepare_curves(&ds, &config.sg, config.direction).unwrap();
    assert!(sweep_prepared(&prepared, &[], &[4], &config, false).is_err());
    assert!(sweep_prepared(&prepared, &[(450.0, 3.5)], &[], &config, false).is_err());
}

#[test]
fn sweep_labels_and_rmspe_vs_n() {
    let ds = small_dataset(3, 4);
    let config = quick_config();
    let prepared = prepare_curves(&ds, &config.sg, config.direction).unwrap();
    let result = sweep_prepared(&prepared, &[(450.0, 3.5)], &[2, 4], &config, false).unwrap();
    let labels: Vec<String> = result.entries.iter().map(|e| e.label()).collect();
    assert_eq!(labels, ["config1_n2", "config1_n4"]);
    let by_n = result.rmspe_vs_n(1);
    assert_eq!(by_n.iter().map(|p| p.0).collect::<Vec<_>>(), [2, 4]);
    assert!(by_n.iter().all(|p| p.1.is_some()));

    let dir = tempfile::tempdir().unwrap();
    write_report_dir(dir.path(), &result.reports(), Some(&result), &config.snapshot()).unwrap();
    for f in ["summary.csv", "predictions.csv", "per_cell.csv", "config.snapshot", "sweep.csv", "rmspe_vs_n.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn run_without_any_usable_segment_fails() {
    // Every segment is excluded, so there is nothing to score even when
    // failing folds are tolerated.
    let ds = small_dataset(3, 4);
    let config = quick_config();
    let prepared = prepare_curves(&ds, &config.sg, config.direction).unwrap();
    let mut c = config.clone();
    c.extraction = ExtractionConfig::with_delta_t(3.7, 1e6, 4);
    let report = leave_one_cell_out_prepared(&prepared, &c, "long");
    assert!(report.is_err(), "no fold can predict, so there is nothing to score");
    c.keep_going = true;
    let report = leave_one_cell_out_prepared(&prepared, &c, "long");
    assert!(report.is_err());
}

/// Curves whose region above `v_l` is the same straight line for every
/// curve while the low-charge plateau and step move at random. Segment
/// times are then exactly proportional to capacity and the peaks carry
/// almost no information about it.
fn separation_dataset() -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cells = (0..5)
        .map(|c| {
            let q0 = rng.gen_range(0.95..1.05);
            let mut curves = Vec::new();
            let mut capacities = Vec::new();
            for k in 0..10 {
                let q = q0 * (1.0 - 0.015 * k as f64);
                let mut spec = common::spec(q, 0.001, 0.0, 100 * c + k);
                spec.cell_id = format!("sep{c}");
                spec.ocv = OcvShape {
                    v0: 3.2,
                    slope: 0.8,
                    steps: vec![
                        Sigmoid {
                            center: rng.gen_range(0.1..0.2),
                            width: rng.gen_range(0.01..0.03),
                            amplitude: -0.02,
                        },
                        Sigmoid {
                            center: rng.gen_range(0.1..0.2),
                            width: rng.gen_range(0.01..0.03),
                            amplitude: 0.1,
                        },
                    ],
                };
                let mut curve = generate_curve(&spec, 0, 1.0, 1.0).unwrap();
                curve.curve_id = format!("cyc{k:03}");
                curves.push(curve);
                capacities.push(q);
            }
            CellRecord {
                cell_id: format!("sep{c}"),
                curves,
                capacities,
            }
        })
        .collect();
    Dataset::new("separation", cells).unwrap()
}

#[test]
fn segment_times_beat_peaks_when_only_they_track_capacity() {
    let ds = separation_dataset();
    let config = EvalConfig {
        extraction: ExtractionConfig::with_delta_t(3.7, 900.0, 4),
        ..quick_config()
    };
    let result = compare_baseline(&ds, &[(900.0, 3.7)], &config).unwrap();
    let gp = result.entries[0].outcome.as_ref().unwrap();
    let base = result.baseline.as_ref().unwrap().as_ref().unwrap();
    assert_eq!(base.method, Method::IcDv);
    assert!(gp.leakage_free() && base.leakage_free());
    assert!(gp.overall_rmspe < 0.5, "gp-ice {}", gp.overall_rmspe);
    assert!(
        base.overall_rmspe > 3.0 * gp.overall_rmspe,
        "ic+dv {} vs gp-ice {}",
        base.overall_rmspe,
        gp.overall_rmspe
    );
}

#[test]
fn icdv_folds_hold_out_one_cell() {
    let ds = small_dataset(3, 5);
    let report = leave_one_cell_out_icdv(&ds, &quick_config()).unwrap();
    assert!(report.leakage_free());
    assert_eq!(report.num_predictions(), 15);
}

#[test]
fn calibration_of_a_correct_gaussian_is_nominal() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let triples: Vec<(f64, f64, f64)> = (0..200_000)
        .map(|_| {
            let yhat = rng.gen_range(0.5..1.5);
            let sigma = rng.gen_range(0.001..0.05);
            let z: f64 = rng.sample(StandardNormal);
            (yhat, sigma, yhat + sigma * z)
        })
        .collect();
    let cs2 = calibration_score(&triples, 2.0).unwrap();
    assert!((cs2 - 0.9545).abs() < 0.005, "{cs2}");
    let cs067 = calibration_score(&triples, 0.67).unwrap();
    assert!((cs067 - 0.4971).abs() < 0.005, "{cs067}");
}

proptest! {
    #[test]
    fn calibration_is_monotone_in_k(
        triples in prop::collection::vec((0.5f64..1.5, 0.001f64..0.1, 0.5f64..1.5), 1..50),
        k1 in 0.0f64..5.0,
        dk in 0.0f64..5.0,
    ) {
        let a = calibration_score(&triples, k1).unwrap();
        let b = calibration_score(&triples, k1 + dk).unwrap();
        prop_assert!(a <= b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn rmspe_is_scale_free_and_zero_when_exact(
        pairs in prop::collection::vec((0.1f64..2.0, 0.1f64..2.0), 1..50),
        c in 0.01f64..100.0,
    ) {
        let r = rmspe(&pairs).unwrap();
        let scaled: Vec<(f64, f64)> = pairs.iter().map(|(a, b)| (a * c, b * c)).collect();
        prop_assert!((rmspe(&scaled).unwrap() - r).abs() < 1e-9 * r.max(1.0));
        let exact: Vec<(f64, f64)> = pairs.iter().map(|(_, b)| (*b, *b)).collect();
        prop_assert_eq!(rmspe(&exact).unwrap(), 0.0);
    }
}

#[test]
fn rmspe_rejects_nonpositive_truth_and_empty_input() {
    assert!(matches!(rmspe(&[(1.0, 0.0)]), Err(gpice::Error::NonPositiveTruth(_))));
    assert!(rmspe(&[]).is_err());
    assert!(calibration_score(&[], 2.0).is_err());
}

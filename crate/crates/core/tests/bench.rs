use std::fs;

use bilevel_poison::bench::{
    cell_seed, emit_report, fmt_g, percent_change, run_experiment, Defense, ExperimentSpec, Stage, REPORT_COLUMNS,
    REPORT_FILES,
};
use bilevel_poison::regress::Learner;
use bilevel_poison::synth::uci_like_csv;
use proptest::prelude::*;

fn small_spec(dir: &std::path::Path) -> ExperimentSpec {
    let data = dir.join("data.csv");
    fs::write(&data, uci_like_csv(400, 1)).unwrap();
    ExperimentSpec {
        dataset: data,
        max_rows: Some(400),
        rates: vec![0.05, 0.1],
        seed: 4,
        out: dir.join("out"),
        ..ExperimentSpec::default()
    }
}

#[test]
fn grid_records_every_stage_and_defense() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small_spec(dir.path())).unwrap();
    assert_eq!(report.failures(), 0);
    for m in Learner::ALL {
        for rate in [0.05, 0.1] {
            let clean = report.record(m, rate, Stage::NoAttack).unwrap();
            let attacked = report.record(m, rate, Stage::Attacked).unwrap();
            assert!(attacked.validation_mse > clean.validation_mse, "{m} {rate}");
            assert!(attacked.poison_points > 0);
            for d in [Defense::Apg, Defense::Trim, Defense::ApgTrim] {
                assert!(report.defended(m, rate, d).is_some(), "{m} {rate} {d:?}");
            }
            let trim = report.defended(m, rate, Defense::Trim).unwrap();
            assert!(trim.mse < attacked.mse, "{m} {rate}");
        }
    }
    // 3 models x 2 rates x (no-attack, attacked, 3 defenses)
    assert_eq!(report.records.len(), 30);
}

#[test]
fn emitted_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let a = run_experiment(&spec).unwrap();
    let b = run_experiment(&spec).unwrap();
    let pa = emit_report(&a, dir.path().join("a")).unwrap();
    let pb = emit_report(&b, dir.path().join("b")).unwrap();
    assert_eq!(pa.len(), REPORT_FILES.len());
    for (x, y) in pa.iter().zip(&pb) {
        if x.file_name().unwrap() == "timing.csv" {
            continue;
        }
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
    let report = fs::read_to_string(dir.path().join("a/report.csv")).unwrap();
    assert_eq!(report.lines().next().unwrap(), REPORT_COLUMNS.join(","));
    let table = fs::read_to_string(dir.path().join("a/table1.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(2).unwrap().contains("281.46"));
}

#[test]
fn output_directory_does_not_change_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let moved = ExperimentSpec {
        out: dir.path().join("elsewhere"),
        ..spec.clone()
    };
    assert_eq!(spec.config_hash().unwrap(), moved.config_hash().unwrap());
    let reseeded = ExperimentSpec {
        seed: 5,
        ..spec.clone()
    };
    assert_ne!(spec.config_hash().unwrap(), reseeded.config_hash().unwrap());
}

#[test]
fn bad_specs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    assert!(run_experiment(&ExperimentSpec {
        rates: vec![],
        ..spec.clone()
    })
    .is_err());
    assert!(run_experiment(&ExperimentSpec {
        rates: vec![0.3],
        ..spec.clone()
    })
    .is_err());
    assert!(run_experiment(&ExperimentSpec {
        dataset: dir.path().join("missing.csv"),
        ..spec
    })
    .is_err());
}

#[test]
fn spec_round_trips_through_json() {
    let spec = ExperimentSpec::default();
    let json = serde_json::to_string(&spec).unwrap();
    let back: ExperimentSpec = serde_json::from_str(&json).unwrap();
    assert_eq!(back.config_hash().unwrap(), spec.config_hash().unwrap());
    assert!(serde_json::from_str::<ExperimentSpec>(r#"{"unknown_field": 1}"#).is_err());
}

#[test]
fn percent_change_is_relative_to_the_clean_prediction() {
    assert!((percent_change(150.0, 100.0).unwrap() - 50.0).abs() < 1e-12);
    assert!((percent_change(50.0, -100.0).unwrap() - 150.0).abs() < 1e-12);
    assert!(percent_change(1.0, 0.0).is_err());
}

#[test]
fn number_formatting() {
    assert_eq!(fmt_g(0.1), "0.1");
    assert_eq!(fmt_g(281.46), "281.46");
    assert_eq!(fmt_g(0.00012345678), "0.000123457");
    assert_eq!(fmt_g(1.5e-5), "1.5e-05");
    assert_eq!(fmt_g(1234567.0), "1.23457e+06");
    assert_eq!(fmt_g(0.0), "0");
}

proptest! {
    #[test]
    fn cell_seeds_depend_on_every_input(seed in 0u64..1_000_000, k in 1u32..25) {
        let rate = f64::from(k) / 100.0;
        let s = cell_seed(seed, Learner::Ridge, rate);
        prop_assert_eq!(s, cell_seed(seed, Learner::Ridge, rate));
        prop_assert_ne!(s, cell_seed(seed + 1, Learner::Ridge, rate));
        prop_assert_ne!(s, cell_seed(seed, Learner::Lasso, rate));
        prop_assert_ne!(s, cell_seed(seed, Learner::Ridge, rate + 0.01));
    }

    #[test]
    fn formatted_numbers_parse_back_to_six_digits(v in -1e9f64..1e9) {
        let parsed: f64 = fmt_g(v).parse().unwrap();
        prop_assert!((parsed - v).abs() <= 5e-6 * v.abs() + 1e-300);
    }
}

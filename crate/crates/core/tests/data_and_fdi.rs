use bilevel_poison::dataset::{normalize_split, read_csv, Dataset, Split, SplitMode, SplitSpec};
use bilevel_poison::fdi::{
    build_attack_vector, inject, revert, support_f1, AttackVector, FdiConfig, SelectionMode, SensorAccessSet,
};
use bilevel_poison::synth::uci_like_csv;
use bilevel_poison::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const SMALL: &str = "\
date,Appliances,T1,RH_1
2016-01-11 17:00:00,60,19.89,47.6
2016-01-11 17:10:00,60,19.89,46.7
2016-01-11 17:20:00,50,oops,46.2
2016-01-11 17:30:00,50,19.89,46.0
2016-01-11 17:40:00,60,19.79
2016-01-11 17:50:00,50,19.79,45.7
not-a-date,40,19.5,45.0
2016-01-11 18:10:00,230,20.1,48.1
";

#[test]
fn malformed_rows_are_counted_and_skipped() {
    let frame = read_csv(SMALL.as_bytes(), "Appliances").unwrap();
    assert_eq!(frame.len(), 5);
    assert_eq!(frame.rejected, 3);
    assert_eq!(frame.columns, ["Appliances", "T1", "RH_1"]);
    assert_eq!(frame.feature_columns(), ["T1", "RH_1"]);
    assert_eq!(frame.timestamps.len(), 5);
}

#[test]
fn missing_target_and_empty_files_are_errors() {
    assert!(matches!(
        read_csv(SMALL.as_bytes(), "Energy"),
        Err(Error::MissingTargetColumn(_))
    ));
    let junk = "Appliances,T1\nx,y\n";
    assert!(matches!(
        read_csv(junk.as_bytes(), "Appliances"),
        Err(Error::NoParseableRows { rejected: 1 })
    ));
}

#[test]
fn training_rows_are_scaled_to_the_unit_box() {
    let frame = read_csv(uci_like_csv(300, 2).as_bytes(), "Appliances").unwrap();
    let norm = normalize_split(&frame, &SplitSpec::default()).unwrap();
    let train = norm.train();
    assert_eq!(train.len(), 210);
    assert_eq!(norm.validation().len() + norm.test().len(), 90);
    for j in 0..train.dim() {
        let col = train.x.column(j);
        if norm.constant_columns.contains(&j) {
            continue;
        }
        assert!((col.min() - 0.0).abs() < 1e-15 && (col.max() - 1.0).abs() < 1e-15);
    }
    assert!(norm.x.iter().chain(norm.y.iter()).all(|v| (0.0..=1.0).contains(v)));
    // the synthetic file carries two identical random-variable columns
    let rv1 = norm.feature_columns.iter().position(|c| c == "rv1").unwrap();
    let rv2 = norm.feature_columns.iter().position(|c| c == "rv2").unwrap();
    assert_eq!(norm.x.column(rv1), norm.x.column(rv2));
}

#[test]
fn chronological_split_keeps_row_order() {
    let spec = SplitSpec {
        mode: SplitMode::Chronological,
        ..SplitSpec::default()
    };
    let labels = spec.assign(20).unwrap();
    assert!(labels[..14].iter().all(|s| *s == Split::Train));
    assert!(labels[14..17].iter().all(|s| *s == Split::Validation));
    assert!(labels[17..].iter().all(|s| *s == Split::Test));
    assert!(SplitSpec::default().assign(3).is_err());
}

#[test]
fn dataset_csv_round_trip() {
    let ds = Dataset::new(
        DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]),
        DVector::from_vec(vec![0.5, 0.6]),
    )
    .unwrap()
    .with_columns(vec!["a".into(), "b".into()], "y")
    .unwrap();
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), ds);
}

fn block(rows: usize, cols: usize) -> Dataset {
    let x = DMatrix::from_fn(rows, cols, |r, c| ((r * 31 + c * 17) % 97) as f64 / 97.0);
    Dataset::new(x, DVector::from_element(rows, 0.25)).unwrap()
}

#[test]
fn row_wise_attack_hits_whole_rows_of_reachable_sensors() {
    let data = block(40, 6);
    let access = SensorAccessSet::new([1, 4], 6).unwrap();
    let cfg = FdiConfig {
        rate: 0.1,
        seed: 5,
        ..FdiConfig::default()
    };
    let attack = build_attack_vector(&data, &access, &cfg).unwrap();
    assert_eq!(attack.support_rows().len(), 4);
    assert_eq!(attack.nnz(), 8);
    assert!(attack.entries().iter().all(|e| e.col == 1 || e.col == 4));
}

#[test]
fn sensor_names_resolve_against_columns() {
    let cols: Vec<String> = ["T1", "RH_1", "T2", "lights"].iter().map(|s| s.to_string()).collect();
    let t = SensorAccessSet::temperature(&cols).unwrap();
    assert_eq!(t.indices().collect::<Vec<_>>(), [0, 2]);
    assert!(SensorAccessSet::from_names(&cols, &["T9"]).is_err());
    assert!(SensorAccessSet::new([7], 4).is_err());
}

#[test]
fn attack_vector_csv_round_trip() {
    let data = block(20, 3);
    let cfg = FdiConfig {
        rate: 0.2,
        seed: 1,
        mode: SelectionMode::CellWise,
        ..FdiConfig::default()
    };
    let attack = build_attack_vector(&data, &SensorAccessSet::all(3).unwrap(), &cfg).unwrap();
    let cols: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
    let mut buf = Vec::new();
    attack.write_csv(&mut buf, &cols).unwrap();
    assert_eq!(AttackVector::read_csv(buf.as_slice(), 20, &cols).unwrap(), attack);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cell_wise_attack_has_the_requested_density(
        rows in 10usize..60,
        cols in 2usize..8,
        rate in 0.01f64..0.25,
        seed in 0u64..1000,
    ) {
        let data = block(rows, cols);
        let access = SensorAccessSet::all(cols).unwrap();
        let cfg = FdiConfig { rate, seed, mode: SelectionMode::CellWise, ..FdiConfig::default() };
        let cells = rows * cols;
        if rate * (cells as f64) < 1.0 {
            let too_small = matches!(build_attack_vector(&data, &access, &cfg), Err(Error::AttackTooSmall { .. }));
            prop_assert!(too_small);
            return Ok(());
        }
        let attack = build_attack_vector(&data, &access, &cfg).unwrap();
        prop_assert!(attack.nnz() <= cells);
        prop_assert!((attack.nnz() as f64 - rate * cells as f64).abs() <= 1.0);
        prop_assert!(attack.entries().iter().all(|e| (0.1..=0.5).contains(&e.delta.abs())));
        prop_assert_eq!(support_f1(&attack, &attack), 1.0);

        let attacked = inject(&data, &attack).unwrap();
        prop_assert_eq!(&attacked.y, &data.y);
        let back = revert(&attacked, &attack).unwrap();
        prop_assert!((&back.x - &data.x).amax() < 1e-12);
        let dense = attack.to_dense();
        prop_assert!((&attacked.x - &data.x - dense).amax() < 1e-12);
        prop_assert_eq!(build_attack_vector(&data, &access, &cfg).unwrap(), attack);
    }
}

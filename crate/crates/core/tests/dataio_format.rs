use amgc::dataio::{
    emit_report, gen_synthetic, read_feature_file, report_csv, write_feature_file, FeatureDataset,
    Record, ReportFormat, Split, SynthConfig,
};
use amgc::error::{Error, ParseErrorKind};
use amgc::loss::{Variant, VariantSpec};
use amgc::stats::{Shrinkage, StatsAccumulator};
use amgc::trainer::{run_scenario, OptimizerConfig, ResultReport, ScenarioConfig};
use proptest::prelude::*;

fn record_strategy(dim: usize) -> impl Strategy<Value = Record> {
    (
        0u32..50,
        any::<bool>(),
        prop::collection::vec(-1e6f32..1e6, dim),
    )
        .prop_map(|(label, test, feature)| Record {
            label,
            split: if test { Split::Test } else { Split::Train },
            feature,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_dataset_round_trips_through_a_file(
        (dim, records) in (1usize..9).prop_flat_map(|d| (Just(d), prop::collection::vec(record_strategy(d), 0..40)))
    ) {
        let data = FeatureDataset::new(dim, records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.efcf");
        write_feature_file(&data, &path).unwrap();
        prop_assert_eq!(read_feature_file(&path).unwrap(), data);
    }

    #[test]
    fn every_truncation_is_reported_with_its_offset(cut in 0usize..200) {
        let data = gen_synthetic(&tiny_synth(0.0), 1).unwrap();
        let bytes = data.to_bytes();
        let cut = cut.min(bytes.len() - 1);
        match FeatureDataset::from_bytes(&bytes[..cut]) {
            Err(Error::Parse { offset, kind }) => {
                prop_assert!(offset as usize <= cut);
                prop_assert!(matches!(kind, ParseErrorKind::Truncated | ParseErrorKind::BadMagic(_)));
            }
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }
}

fn tiny_synth(drift: f64) -> SynthConfig {
    SynthConfig {
        num_classes: 4,
        dim: 3,
        train_per_class: 5,
        test_per_class: 2,
        mean_dispersion: 3.0,
        covariance_scale: 1.0,
        drift,
        tasks: 2,
    }
}

#[test]
fn header_only_file_is_an_empty_dataset() {
    let data = FeatureDataset::new(7, Vec::new()).unwrap();
    let bytes = data.to_bytes();
    assert_eq!(bytes.len(), 4 + 4 + 4 + 8);
    let back = FeatureDataset::from_bytes(&bytes).unwrap();
    assert!(back.is_empty());
    assert_eq!(back.dim(), 7);
}

#[test]
fn mid_record_truncation_names_an_offset_inside_the_record() {
    let data = gen_synthetic(&tiny_synth(0.0), 2).unwrap();
    let bytes = data.to_bytes();
    let record_len = 4 + 1 + 4 * 3;
    let cut = 20 + 3 * record_len + 7;
    match FeatureDataset::from_bytes(&bytes[..cut]) {
        Err(Error::Parse {
            offset,
            kind: ParseErrorKind::Truncated,
        }) => {
            let start = 20 + 3 * record_len;
            assert!(
                (start..=cut).contains(&(offset as usize)),
                "offset {offset}"
            )
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn synthetic_covariance_matches_config() {
    let config = SynthConfig {
        num_classes: 2,
        dim: 4,
        train_per_class: 20_000,
        test_per_class: 1,
        mean_dispersion: 2.0,
        covariance_scale: 2.5,
        drift: 0.0,
        tasks: 1,
    };
    let data = gen_synthetic(&config, 3).unwrap();
    for label in 0..2 {
        let mut acc = StatsAccumulator::new(label, 4);
        acc.update(&data.features(label, Split::Train)).unwrap();
        let cov = acc.finalize(Shrinkage::Absolute(0.0)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 2.5 } else { 0.0 };
                assert!(
                    (cov.covariance()[(i, j)] - want).abs() <= 0.05 * 2.5,
                    "class {label} entry ({i},{j}) = {}",
                    cov.covariance()[(i, j)]
                );
            }
        }
    }
}

#[test]
fn separated_classes_without_drift_are_learnable() {
    let synth = SynthConfig {
        num_classes: 2,
        dim: 4,
        train_per_class: 200,
        test_per_class: 200,
        mean_dispersion: 20.0,
        covariance_scale: 0.5,
        drift: 0.0,
        tasks: 1,
    };
    // Draw until the two means are far apart, then check a trained head.
    let data = (0..)
        .map(|seed| gen_synthetic(&synth, seed).unwrap())
        .find(|d| {
            let m0 = mean(&d.features(0, Split::Train));
            let m1 = mean(&d.features(1, Split::Train));
            (m0 - m1).norm() > 10.0
        })
        .unwrap();
    let mut config = ScenarioConfig::new(1, 2, 4, VariantSpec::new(Variant::Amgc));
    config.optimizer = OptimizerConfig {
        epochs_initial: 20,
        steps_per_epoch: 5,
        ..OptimizerConfig::default()
    };
    let report = run_scenario(&config, &data).unwrap();
    assert!(report.la >= 99.0, "test accuracy {}", report.la);
}

fn mean(xs: &[nalgebra::DVector<f64>]) -> nalgebra::DVector<f64> {
    xs.iter()
        .fold(nalgebra::DVector::zeros(xs[0].len()), |a, x| a + x)
        / xs.len() as f64
}

#[test]
fn generation_is_byte_identical_per_seed() {
    let a = gen_synthetic(&tiny_synth(0.3), 11).unwrap().to_bytes();
    let b = gen_synthetic(&tiny_synth(0.3), 11).unwrap().to_bytes();
    let c = gen_synthetic(&tiny_synth(0.3), 12).unwrap().to_bytes();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn synth_config_json_rejects_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(&good, serde_json::to_string(&tiny_synth(0.1)).unwrap()).unwrap();
    assert_eq!(SynthConfig::from_json_file(&good).unwrap(), tiny_synth(0.1));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"num_classes": 4, "dim": 3, "bogus": 1}"#).unwrap();
    let err = SynthConfig::from_json_file(&bad).unwrap_err();
    assert_eq!(err.class(), amgc::ErrorClass::Config);
}

fn two_task_report() -> ResultReport {
    let data = gen_synthetic(&tiny_synth(0.2), 5).unwrap();
    let mut config = ScenarioConfig::new(2, 2, 3, VariantSpec::new(Variant::Dbgc));
    config.optimizer = OptimizerConfig {
        epochs_initial: 5,
        epochs_incremental: 5,
        steps_per_epoch: 2,
        ..OptimizerConfig::default()
    };
    run_scenario(&config, &data).unwrap()
}

#[test]
fn reports_have_expected_shape_and_round_trip() {
    let report = two_task_report();
    let csv = report_csv(&report).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "task_trained,task_1,task_2,seen_acc");
    assert!(lines[1].starts_with("1,") && lines[1].contains(",,"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    emit_report(&report, &path, ReportFormat::Json).unwrap();
    let back: ResultReport =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!((back.la - report.la).abs() <= 1e-12);
    assert!((back.aia - report.aia).abs() <= 1e-12);
    assert_eq!(back.variant, "dbgc");
}

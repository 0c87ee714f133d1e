use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{DatasetSchema, FieldKind, FieldSpec, Instance};
use crate::model::ModelConfig;
use crate::train::predict;

fn seven_field_data(rows: usize) -> Dataset {
    let names = ["Gender", "Age", "Occupation", "Zipcode", "ReleaseTime", "WatchTime", "Genre"];
    let schema = DatasetSchema::new(
        names
            .iter()
            .map(|n| FieldSpec {
                name: n.to_string(),
                kind: FieldKind::Categorical,
                vocab_size: Some(6),
            })
            .collect(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ds = Dataset::new(schema);
    for r in 0..rows {
        ds.push(Instance {
            categorical: (0..7).map(|_| rng.random_range(0..6)).collect(),
            numeric: vec![],
            label: (r % 3 == 0) as u8,
        })
        .unwrap();
    }
    ds
}

fn model(data: &Dataset) -> Model {
    let config = ModelConfig {
        embed_init_std: 0.3,
        ..ModelConfig::graphfm(7)
    };
    Model::new(config, data.schema().clone()).unwrap()
}

#[test]
fn record_has_one_matrix_per_layer_with_m_nonzeros_per_row() {
    let data = seven_field_data(20);
    let model = model(&data);
    let rec = explain_instance(&model, &data, 3, true).unwrap();
    assert_eq!(rec.instance, 3);
    assert_eq!(rec.fields.len(), 7);
    assert_eq!(rec.layers.len(), 3);
    for (layer, m) in rec.layers.iter().zip([7, 4, 2]) {
        assert_eq!(layer.m, m);
        assert_eq!(layer.weights.len(), 7);
        for row in &layer.weights {
            assert_eq!(row.len(), 7);
            assert_eq!(row.iter().filter(|&&w| w != 0.0).count(), m);
        }
        let heads = layer.attention.as_ref().unwrap();
        assert_eq!(heads.len(), 2);
        for row in &heads[0] {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn prediction_matches_the_evaluation_path() {
    let data = seven_field_data(50);
    let model = model(&data);
    let logits = predict(&model, &data).unwrap();
    let rows: Vec<usize> = (0..50).rev().collect();
    for rec in explain_rows(&model, &data, &rows, false).unwrap() {
        assert!((rec.logit - logits[rec.instance]).abs() < 1e-10);
        assert!((rec.prediction - sigmoid(logits[rec.instance])).abs() < 1e-10);
        assert_eq!(rec.label, data.labels()[rec.instance]);
    }
}

#[test]
fn exported_weights_are_the_forward_pass_tensors() {
    let data = seven_field_data(8);
    let model = model(&data);
    let batch = data.batch(&[5]);
    let mut tape = Tape::new(model.params());
    let fwd = model.forward(&mut tape, &batch).unwrap();
    let rec = explain_instance(&model, &data, 5, false).unwrap();
    for (trace, layer) in fwd.layers.iter().zip(&rec.layers) {
        let flat: Vec<f64> = layer.weights.concat();
        assert_eq!(flat, trace.masked.data());
        let scores = trace.scores.as_ref().unwrap().data();
        for (k, (&w, &kept)) in flat.iter().zip(&trace.mask.keep).enumerate() {
            assert_eq!(w, if kept { scores[k] } else { 0.0 });
        }
    }
}

#[test]
fn selection_frequency_counts() {
    let data = seven_field_data(300);
    let model = model(&data);
    let freq = selection_frequency(&model, &data).unwrap();
    assert_eq!(freq.len(), 3);
    assert!(freq[0].rates.iter().flatten().all(|&r| r == 1.0));
    for f in &freq {
        assert_eq!(f.instances, 300);
        for (counts, rates) in f.counts.iter().zip(&f.rates) {
            assert_eq!(counts.iter().sum::<u64>(), (f.m * 300) as u64);
            assert!((rates.iter().sum::<f64>() - f.m as f64).abs() < 1e-12);
            assert!(rates.iter().all(|r| (0.0..=1.0).contains(r)));
        }
    }
}

#[test]
fn ranked_pairs_symmetrize_and_skip_the_diagonal() {
    let f = SelectionFrequency {
        layer: 2,
        m: 2,
        instances: 10,
        counts: vec![],
        rates: vec![
            vec![1.0, 0.2, 0.9],
            vec![0.4, 1.0, 0.1],
            vec![0.7, 0.6, 1.0],
        ],
    };
    let ranked = f.ranked_pairs();
    assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![(0, 2), (1, 2), (0, 1)]);
    assert!((ranked[0].1 - 0.8).abs() < 1e-15);
}

#[test]
fn diagonal_report_averages() {
    let rec = ExplainRecord {
        instance: 0,
        fields: vec!["a".into(), "b".into()],
        logit: 0.0,
        prediction: 0.5,
        label: 0,
        layers: vec![LayerWeights {
            layer: 1,
            m: 2,
            weights: vec![vec![0.1, 0.5], vec![0.7, 0.3]],
            attention: None,
        }],
    };
    let rep = diagonal_report(&[rec]);
    assert!((rep[0].mean_diagonal - 0.2).abs() < 1e-15);
    assert!((rep[0].mean_off_diagonal - 0.6).abs() < 1e-15);
}

#[test]
fn mismatched_schema_is_rejected() {
    let data = seven_field_data(5);
    let other = DatasetSchema::new(vec![FieldSpec {
        name: "x".into(),
        kind: FieldKind::Categorical,
        vocab_size: Some(3),
    }])
    .unwrap();
    let m = Model::new(ModelConfig { layers: 1, neighbors: vec![1], ..ModelConfig::graphfm(1) }, other).unwrap();
    assert!(matches!(explain_instance(&m, &data, 0, false), Err(Error::SchemaMismatch(_))));
    assert!(matches!(selection_frequency(&m, &data), Err(Error::SchemaMismatch(_))));
    let fm = Model::new(ModelConfig::fm(4), data.schema().clone()).unwrap();
    assert!(matches!(explain_instance(&fm, &data, 0, false), Err(Error::Config(_))));
    assert!(explain_instance(&model(&data), &data, 5, false).is_err());
}

#[test]
fn exports_csv_and_json() {
    let data = seven_field_data(4);
    let model = model(&data);
    let recs = explain_rows(&model, &data, &[0, 2], false).unwrap();
    let freq = selection_frequency(&model, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_exports(dir.path(), &recs, Some(&freq)).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("instance2_layer3.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 8);
    assert!(lines[0].starts_with("field,Gender,Age"));
    assert!(lines[7].starts_with("Genre,"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("explain.json")).unwrap()).unwrap();
    assert_eq!(json["records"].as_array().unwrap().len(), 2);
    assert_eq!(json["diagonal"].as_array().unwrap().len(), 3);
    assert_eq!(json["selection_frequency"][1]["m"], 4);
}

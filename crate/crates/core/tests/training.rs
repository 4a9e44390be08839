use eqxai::data_synth::{generate, nearest_centroid_accuracy, DatasetKind, DatasetSpec};
use eqxai::model_zoo::{train, Model, ModelKind, TrainConfig, WidthConfig};

#[test]
fn all_cnn_learns_synthetic_ecg() {
    let data = generate(&DatasetSpec::new(DatasetKind::ecg_like(), 256, 256, 17)).unwrap();
    assert!(nearest_centroid_accuracy(&data) >= 0.9);
    let kind = ModelKind::AllCnn1d;
    let mut model = Model::build(kind, WidthConfig::for_dataset(kind, &data.spec.kind), 17).unwrap();
    let report = train(&mut model, &data.train, &data.test, &TrainConfig::default()).unwrap();
    let acc = report.test_accuracy.unwrap();
    assert!(acc >= 0.95, "test accuracy {acc}");
    assert!(report.checkpoints.len() >= 3);
}

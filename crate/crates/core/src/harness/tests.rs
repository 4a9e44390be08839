use super::*;
use crate::robustness_metrics::ReportRow;

fn row(method: &str, id: usize, value: f64, seed: u64) -> ReportRow {
    ReportRow {
        dataset: "ecg_like".into(),
        model: "all_cnn_1d".into(),
        method: method.into(),
        metric: MetricKind::Equiv,
        mode: "exact".into(),
        n_samp: 32,
        example_id: id,
        value,
        seed,
    }
}

#[test]
fn empty_method_list_is_rejected() {
    let text = "[methods]\nfeature = []\nexample = []\nconcept = []\n";
    let err = ExperimentConfig::from_toml(text).unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("empty")), "{err}");
}

#[test]
fn config_round_trips_and_rejects_bad_input() {
    let cfg = ExperimentConfig::for_dataset("point_clouds").unwrap();
    assert_eq!(cfg.methods.occlusion_window, 1);
    let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());

    for bad in [
        "bogus = 1",
        "[data]\ndataset = \"mnist\"",
        "[train]\nmodels = [\"deep_set\"]",
        "[methods]\nfeature = [\"lime\"]",
        "[methods]\nexample = [\"datamodels\"]",
        "[methods]\ntaps = [\"logits\"]",
        "[metrics]\nn_samp = 0",
        "[enforce]\nn_inv = [0, 4]",
        "[methods]\nshap_stdev = -1.0",
        "[data]\ndataset = \"motif_graphs\"",
        "[data]\ndataset = \"point_clouds\"",
    ] {
        assert!(matches!(ExperimentConfig::from_toml(bad), Err(Error::Config(_))), "accepted {bad:?}");
    }
    let graphs = ExperimentConfig::for_dataset("motif_graphs").unwrap();
    assert_eq!(graphs.methods.taps, vec!["inv".to_string()]);
    graphs.validate().unwrap();
}

#[test]
fn single_row_report_flags_a_degenerate_interval() {
    let text = render_report(&[row("saliency", 0, 0.5, 1)]);
    assert!(text.contains("0.500000 ± 0.000000"), "{text}");
    assert!(text.contains("n=1"), "{text}");
}

#[test]
fn drift_is_zero_for_a_repeated_seed_and_measured_across_seeds() {
    let a: Vec<ReportRow> = (0..4).map(|i| row("saliency", i, 0.9 + 0.01 * i as f64, 3)).collect();
    let mut rows = a.clone();
    rows.extend(a.iter().cloned());
    let d = drift(&rows);
    assert_eq!((d.same_seed, d.cross_seed, d.seeds), (0.0, 0.0, 1));

    rows[0].value += 0.25;
    assert!((drift(&rows).same_seed - 0.25).abs() < 1e-12);

    let mut mixed = a.clone();
    mixed.extend(a.iter().map(|r| ReportRow { seed: 4, value: r.value - 0.1, ..r.clone() }));
    let d = drift(&mixed);
    assert_eq!(d.seeds, 2);
    assert_eq!(d.same_seed, 0.0);
    assert!((d.cross_seed - 0.1).abs() < 1e-12);
    let text = render_report(&mixed);
    assert!(text.contains("seed 3") && text.contains("seed 4"), "{text}");
}

#[test]
fn quantiles_interpolate_linearly() {
    let rows: Vec<ReportRow> = [5.0, 1.0, 4.0, 2.0, 3.0].iter().enumerate().map(|(i, &v)| row("m", i, v, 0)).collect();
    let q = &quantile_rows(&rows)[0];
    assert_eq!((q.min, q.q1, q.median, q.q3, q.max), (1.0, 2.0, 3.0, 4.0, 5.0));
    let two: Vec<ReportRow> = [0.0, 1.0].iter().enumerate().map(|(i, &v)| row("m", i, v, 0)).collect();
    assert_eq!(quantile_rows(&two)[0].q1, 0.25);
}

#[test]
fn guarantees_follow_the_method_families() {
    use Expectation::*;
    assert_eq!(expectation("all_cnn_1d", "saliency", MetricKind::Equiv), Holds(0.999));
    assert_eq!(expectation("deep_set", "gradient_shap", MetricKind::Equiv), Fails(0.99));
    assert_eq!(expectation("bow_mlp", "tracin", MetricKind::Inv), Holds(1.0 - 1e-9));
    assert_eq!(expectation("graph_conv", "car_inv", MetricKind::Inv), Holds(0.999));
    assert_eq!(expectation("deep_set", "simplex_equiv", MetricKind::Inv), Open);
    assert_eq!(expectation("flatten_cnn_1d", "saliency", MetricKind::Equiv), Open);
    assert_eq!(expectation("all_cnn_1d", "cav_equiv+enforced(32)", MetricKind::Inv), Open);
    assert_eq!((symbol(1.0), symbol(0.97), symbol(0.5)), ('✓', '~', '✗'));
}

#[test]
fn correlation_is_empty_for_constant_columns() {
    let mut rows: Vec<ReportRow> = (0..5).map(|i| row("saliency", i, 1.0, 0)).collect();
    rows.extend((0..5).map(|i| ReportRow {
        metric: MetricKind::Sensitivity,
        value: i as f64,
        ..row("saliency", i, 0.0, 0)
    }));
    let c = correlation_rows(&rows).unwrap();
    assert_eq!(c.len(), 1);
    assert_eq!((c[0].n, c[0].pearson_r), (5, None));
    for (i, r) in rows[..5].iter_mut().enumerate() {
        r.value = 1.0 - 0.1 * i as f64;
    }
    assert!((correlation_rows(&rows).unwrap()[0].pearson_r.unwrap() + 1.0).abs() < 1e-12);
}

#[test]
fn task_seeds_differ_per_example_and_run() {
    let seeds: std::collections::HashSet<u64> = (0..2).flat_map(|s| (0..100).map(move |i| task_seed(s, i))).collect();
    assert_eq!(seeds.len(), 200);
}

#[test]
fn small_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::for_dataset("token_bags").unwrap();
    cfg.output_dir = dir.path().to_path_buf();
    cfg.data.n_train = 128;
    cfg.data.n_test = 4;
    cfg.train.epochs = 10;
    cfg.methods.feature = vec!["saliency".into(), "gradient_shap".into()];
    cfg.methods.example = vec!["influence_functions".into(), "representation_similarity".into()];
    cfg.methods.concept = vec!["cav".into()];
    cfg.methods.concept_set_size = 40;
    cfg.metrics.sensitivity = true;
    cfg.enforce.n_inv = vec![1, 2];
    let out = run(&cfg).unwrap();
    assert!(out.passed, "{}", render_report(&out.report.rows));
    assert_eq!(out.sweep.len(), 2);
    for f in ["config.toml", "report.csv", "summary.csv", "quantiles.csv", "scatter.csv", "sweep.csv", "sensitivity.csv", "correlation.csv", "verdicts.txt", "quantiles.svg", "scatter.svg", "sweep.svg"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let back = RobustnessReport::load(&dir.path().join("report.csv")).unwrap();
    assert_eq!(back, out.report);
    assert_eq!(read_sweep_csv(&dir.path().join("sweep.csv")).unwrap(), out.sweep);
    // 4 examples × (model + saliency + shap + influence + 2 rep_sim + 2 cav)
    assert_eq!(back.rows.len(), 4 * 8);
    assert!(back.rows.iter().all(|r| r.mode == "monte_carlo" && r.n_samp == DEFAULT_N_SAMP));
}

#[test]
fn unknown_enforcement_method_is_an_error() {
    let mut cfg = ExperimentConfig::for_dataset("token_bags").unwrap();
    cfg.data.n_train = 64;
    cfg.data.n_test = 2;
    cfg.train.epochs = 1;
    cfg.methods.feature = vec!["saliency".into()];
    cfg.methods.example.clear();
    cfg.methods.concept.clear();
    cfg.enforce.n_inv = vec![2];
    cfg.enforce.methods = vec!["simplex_inv".into()];
    let exp = Experiment::prepare(cfg).unwrap();
    assert!(matches!(exp.enforce_sweep(), Err(Error::Config(_))));
}

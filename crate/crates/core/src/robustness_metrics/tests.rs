use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::attribution::{Baseline, FeatureExplainer, FeatureMethod};
use crate::data_synth::DatasetKind;
use crate::model_zoo::{ModelKind, WidthConfig};
use crate::symmetry::{DomainShape, GroupKind};
use crate::tensor_engine::Tensor;

/// Returns the same explanation for every input.
struct Constant(Vec<f64>);

impl Explainer for Constant {
    fn name(&self) -> String {
        "constant".into()
    }
    fn output_action(&self) -> OutputAction {
        OutputAction::SameAsInput
    }
    fn explain(&self, x: &Signal) -> Result<Explanation> {
        Ok(Explanation::Feature(x.with_values(self.0.clone())?))
    }
}

/// `e(x) = x²` pointwise, equivariant by construction.
struct Square;

impl Explainer for Square {
    fn name(&self) -> String {
        "square".into()
    }
    fn output_action(&self) -> OutputAction {
        OutputAction::SameAsInput
    }
    fn explain(&self, x: &Signal) -> Result<Explanation> {
        Ok(Explanation::Feature(x.with_values(x.values().iter().map(|v| v * v).collect())?))
    }
}

/// Sorted values, invariant under any permutation action.
struct Sorted;

impl Explainer for Sorted {
    fn name(&self) -> String {
        "sorted".into()
    }
    fn output_action(&self) -> OutputAction {
        OutputAction::Trivial
    }
    fn explain(&self, x: &Signal) -> Result<Explanation> {
        let mut v = x.values().to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Explanation::Examples(v))
    }
}

/// Concept "first coordinate is positive".
struct FirstPositive;

impl Explainer for FirstPositive {
    fn name(&self) -> String {
        "first_positive".into()
    }
    fn output_action(&self) -> OutputAction {
        OutputAction::Trivial
    }
    fn explain(&self, x: &Signal) -> Result<Explanation> {
        Ok(Explanation::Concepts(vec![x.values()[0]]))
    }
}

fn shape(len: usize) -> DomainShape {
    DomainShape::new(vec![len], 1).unwrap()
}

fn cyclic(len: usize) -> SymmetryGroup {
    SymmetryGroup::new(GroupKind::Cyclic { len }, shape(len)).unwrap()
}

fn random_signal(len: usize, seed: u64) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Signal::new(shape(len), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn model(kind: ModelKind, seed: u64) -> Model {
    Model::build(kind, WidthConfig::for_dataset(kind, &DatasetKind::ecg_like()), seed).unwrap()
}

#[test]
fn similarity_examples() {
    let cos = SimilarityKind::Cosine;
    assert_eq!(similarity(cos, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    let a = [0.3, -1.2, 4.0];
    let a2: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
    assert!((similarity(cos, &a, &a2).unwrap() - 1.0).abs() < 1e-15);
    let acc = similarity(SimilarityKind::Accuracy, &[1.0, 0.0, 1.0, 0.0], &[1.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(acc, 0.75);
    assert_eq!(similarity(cos, &[0.0; 3], &[0.0; 3]).unwrap(), 1.0);
    assert_eq!(similarity(cos, &[0.0; 3], &a).unwrap(), 0.0);
    assert!(matches!(similarity(cos, &[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
}

#[test]
fn hoeffding_examples() {
    let b = hoeffding_bound(1000, 50, 0.02);
    assert!((b - 9.0799859524e-5).abs() < 1e-12, "{b}");
    assert!(b <= 1e-4);
    assert_eq!(hoeffding_bound(1000, 50, 0.0), 2.0);
    assert!((hoeffding_bound(1, 1, 2.0) - 2.0 * (-2.0f64).exp()).abs() < 1e-15);
    assert!((hoeffding_bound(1, 1, 2.0) - 0.2707).abs() < 1e-4);
    let t = hoeffding_deviation(7, 30, 1e-4);
    assert!((hoeffding_bound(7, 30, t) - 1e-4).abs() < 1e-16);
}

#[test]
fn identity_only_group_scores_one() {
    let group = SymmetryGroup::new(GroupKind::Cyclic { len: 1 }, DomainShape::new(vec![1], 4).unwrap()).unwrap();
    let x = Signal::new(group.acts_on().clone(), vec![0.1, -0.4, 2.0, 0.0]).unwrap();
    let e = Constant(vec![1.0, 2.0, 3.0, 4.0]);
    for mode in [EstimatorMode::Exact, EstimatorMode::MonteCarlo { n_samp: 5, seed: 1 }] {
        assert_eq!(invariance_score(&e, &group, &x, None, mode).unwrap().value, 1.0);
        assert_eq!(equivariance_score(&Square, &group, &x, None, OutputAction::SameAsInput, mode).unwrap().value, 1.0);
    }
}

#[test]
fn constant_explainer_is_invariant_but_not_equivariant() {
    let group = cyclic(2);
    let x = random_signal(2, 0);
    let e = Constant(vec![1.0, 2.0]);
    let inv = invariance_score(&e, &group, &x, None, EstimatorMode::Exact).unwrap();
    assert_eq!(inv.value, 1.0);
    assert_eq!(inv.n_elements, 2);
    assert_eq!(inv.hoeffding_t, 0.0);
    // Identity gives 1; the swap compares [1,2] with [2,1]: cos = 4/5.
    let eq = equivariance_score(&e, &group, &x, None, OutputAction::SameAsInput, EstimatorMode::Exact).unwrap();
    assert!((eq.value - 0.9).abs() < 1e-15, "{}", eq.value);
}

#[test]
fn synthetic_invariant_and_equivariant_explainers_score_one() {
    let group = cyclic(32);
    for seed in 0..4 {
        let x = random_signal(32, seed);
        let eq = equivariance_score(&Square, &group, &x, None, OutputAction::SameAsInput, EstimatorMode::Exact).unwrap();
        assert!((eq.value - 1.0).abs() < 1e-12);
        let inv = invariance_score(&Sorted, &group, &x, None, EstimatorMode::Exact).unwrap();
        assert!((inv.value - 1.0).abs() < 1e-12);
        // Equivariant but not invariant.
        assert!(invariance_score(&Square, &group, &x, None, EstimatorMode::Exact).unwrap().value < 0.99);
    }
}

#[test]
fn saliency_on_invariant_cnn_is_equivariant() {
    let m = model(ModelKind::AllCnn1d, 3);
    let e = FeatureExplainer::new(&m, FeatureMethod::Saliency, Baseline::Zero);
    let group = cyclic(32);
    for seed in 0..3 {
        let x = random_signal(32, seed);
        let s = equivariance_score(&e, &group, &x, None, OutputAction::SameAsInput, EstimatorMode::Exact).unwrap();
        assert!((s.value - 1.0).abs() <= 1e-7, "{}", s.value);
    }
}

#[test]
fn model_invariance_scores() {
    let group = cyclic(32);
    let inv = model(ModelKind::AllCnn1d, 1);
    let flat = model(ModelKind::FlattenCnn1d, 1);
    let mut broken = 0;
    for seed in 0..10 {
        let x = random_signal(32, seed);
        let s = model_invariance_score(&inv, &group, &x, EstimatorMode::Exact).unwrap();
        assert!((s.value - 1.0).abs() <= 1e-9);
        if model_invariance_score(&flat, &group, &x, EstimatorMode::Exact).unwrap().value < 1.0 {
            broken += 1;
        }
    }
    assert!(broken >= 5);
    let zeroed = flat
        .with_parameters(
            flat.parameters()
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.dims().to_vec())))
                .collect(),
        )
        .unwrap();
    let s = model_invariance_score(&zeroed, &group, &random_signal(32, 0), EstimatorMode::Exact).unwrap();
    assert_eq!(s.value, 1.0);
}

#[test]
fn categorical_explanations_use_accuracy_and_reject_equivariance() {
    let group = cyclic(4);
    let x = Signal::new(shape(4), vec![1.0, -1.0, -1.0, -1.0]).unwrap();
    let s = invariance_score(&FirstPositive, &group, &x, None, EstimatorMode::Exact).unwrap();
    assert_eq!(s.value, 0.25);
    let err = equivariance_score(&FirstPositive, &group, &x, None, OutputAction::SameAsInput, EstimatorMode::Exact);
    assert!(err.is_err());
}

#[test]
fn exact_mode_respects_the_enumeration_cap() {
    let group = SymmetryGroup::new(GroupKind::Symmetric { n: 12 }, shape(12)).unwrap();
    let x = random_signal(12, 0);
    assert!(matches!(
        invariance_score(&Sorted, &group, &x, None, EstimatorMode::Exact),
        Err(Error::OrderTooLarge { .. })
    ));
    let mc = invariance_score(&Sorted, &group, &x, None, EstimatorMode::MonteCarlo { n_samp: 40, seed: 2 }).unwrap();
    assert!((mc.value - 1.0).abs() < 1e-12);
    assert_eq!(mc.n_elements, 40);
    assert!((mc.hoeffding_t - hoeffding_deviation(1, 40, 1e-4)).abs() < 1e-15);
    assert_eq!(EstimatorMode::auto(&group, 40, 2), EstimatorMode::MonteCarlo { n_samp: 40, seed: 2 });
}

#[test]
fn monte_carlo_is_unbiased() {
    let m = model(ModelKind::FlattenCnn1d, 6);
    let e = FeatureExplainer::new(&m, FeatureMethod::Saliency, Baseline::Zero);
    let group = cyclic(32);
    let x = random_signal(32, 11);
    let exact = invariance_score(&e, &group, &x, None, EstimatorMode::Exact).unwrap().value;
    let mean = (0..100)
        .map(|seed| {
            invariance_score(&e, &group, &x, None, EstimatorMode::MonteCarlo { n_samp: 50, seed })
                .unwrap()
                .value
        })
        .sum::<f64>()
        / 100.0;
    assert!(exact < 0.99);
    assert!((mean - exact).abs() <= 0.005, "{mean} vs {exact}");
}

#[test]
fn hoeffding_bound_holds_empirically() {
    let group = cyclic(32);
    let x = random_signal(32, 5);
    let exact = invariance_score(&Square, &group, &x, None, EstimatorMode::Exact).unwrap().value;
    let (n_samp, t, trials) = (400, 0.1, 1000);
    let exceed = (0..trials)
        .filter(|&seed| {
            let mc = invariance_score(&Square, &group, &x, None, EstimatorMode::MonteCarlo { n_samp, seed }).unwrap();
            (mc.value - exact).abs() > t
        })
        .count();
    let bound = hoeffding_bound(1, n_samp, t);
    assert!((exceed as f64 / trials as f64) <= bound, "{exceed} exceedances vs bound {bound}");
}

#[test]
fn sensitivity_examples() {
    let x = random_signal(32, 1);
    assert_eq!(sensitivity_max(&Constant(vec![0.5; 32]), &x, 0.02, 20, 0).unwrap(), 0.0);
    // e(x) = x² moves by at most 2|x|ε + ε² per coordinate.
    let small = sensitivity_max(&Square, &x, 1e-6, 20, 0).unwrap();
    let large = sensitivity_max(&Square, &x, 0.02, 20, 0).unwrap();
    assert!(small < 1e-5 && small < large);
    let bound: f64 = x.values().iter().map(|v| (2.0 * v.abs() * 0.02 + 4e-4).powi(2)).sum::<f64>().sqrt();
    assert!(large <= bound);
    assert!(sensitivity_max(&Square, &x, 0.0, 20, 0).is_err());
    assert_eq!(sensitivity_max(&Square, &x, 0.02, 20, 3).unwrap(), sensitivity_max(&Square, &x, 0.02, 20, 3).unwrap());
}

#[test]
fn correlate_examples() {
    let a = [1.0, 2.0, 3.5, 7.0];
    let neg: Vec<f64> = a.iter().map(|v| -3.0 * v + 1.0).collect();
    assert!((correlate(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
    assert!((correlate(&a, &a).unwrap() - 1.0).abs() < 1e-15);
    assert!(matches!(correlate(&a, &[1.0; 4]), Err(Error::ZeroVariance(_))));
    assert!(correlate(&a[..2], &a[..2]).is_err());
    assert!(correlate(&a, &a[..3]).is_err());
}

#[test]
fn report_round_trips_and_summarizes() {
    let mut report = RobustnessReport::new();
    for (i, v) in [0.9, 1.0, 0.8, 0.7].into_iter().enumerate() {
        report.push(ReportRow {
            dataset: "ecg".into(),
            model: "all_cnn_1d".into(),
            method: "saliency".into(),
            metric: MetricKind::Equiv,
            mode: "exact".into(),
            n_samp: 32,
            example_id: 3 - i,
            value: v,
            seed: 0,
        });
    }
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("dataset,model,method,metric,mode,n_samp,example_id,value,seed\n"));
    assert!(text.contains(",equiv,exact,32,"));
    assert_eq!(RobustnessReport::read_csv(buf.as_slice()).unwrap(), report);
    assert_eq!(report.values("ecg", "all_cnn_1d", "saliency", MetricKind::Equiv), vec![0.7, 0.8, 1.0, 0.9]);
    let s = report.summary();
    assert_eq!(s.len(), 1);
    let sd = (((0.05f64).powi(2) + 0.05f64.powi(2) + 0.15f64.powi(2) + 0.15f64.powi(2)) / 3.0).sqrt();
    assert!((s[0].mean - 0.85).abs() < 1e-12);
    assert!((s[0].ci95 - 1.96 * sd / 2.0).abs() < 1e-12);
    assert_eq!((s[0].min, s[0].max, s[0].n), (0.7, 1.0, 4));
}

proptest! {
    #[test]
    fn similarity_is_bounded_and_reflexive(
        a in proptest::collection::vec(-1e3f64..1e3, 1..40),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.random_range(-1e3..1e3)).collect();
        let s = similarity(SimilarityKind::Cosine, &a, &b).unwrap();
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        let own = similarity(SimilarityKind::Cosine, &a, &a).unwrap();
        prop_assert!((own - 1.0).abs() <= 1e-12);
    }
}

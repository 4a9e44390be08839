//! Turns any explainer into an invariant one by averaging its explanations
//! over the orbit of the input.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainer::Explainer;
use crate::explanation::Explanation;
use crate::symmetry::{GroupElement, OutputAction, Signal, SymmetryGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EnforceMode {
    FullGroup,
    /// `n_inv` distinct elements. For enumerable groups these are the first
    /// `n_inv` entries of one seeded shuffle of the group, so samples for
    /// increasing `n_inv` are nested.
    SampledWithoutReplacement { n_inv: usize, seed: u64 },
}

/// `e_inv(x) = (1/n) Σᵢ e(ρ[Gᵢ]x)`, averaged in the input frame.
pub struct EnforcedExplainer<E> {
    base: E,
    group: SymmetryGroup,
    mode: EnforceMode,
    elements: Vec<GroupElement>,
    cache: Option<Mutex<HashMap<Vec<u64>, Explanation>>>,
}

/// Sampled enforcement; the whole group when `n_inv = |G|`.
pub fn enforce<E: Explainer>(base: E, group: SymmetryGroup, n_inv: usize, seed: u64) -> Result<EnforcedExplainer<E>> {
    EnforcedExplainer::new(base, group, EnforceMode::SampledWithoutReplacement { n_inv, seed })
}

impl<E: Explainer> EnforcedExplainer<E> {
    pub fn new(base: E, group: SymmetryGroup, mode: EnforceMode) -> Result<Self> {
        let elements = match mode {
            EnforceMode::FullGroup => group.enumerate()?,
            EnforceMode::SampledWithoutReplacement { n_inv, seed } => {
                if n_inv == 0 {
                    return Err(Error::InvalidArgument("n_inv must be at least 1".into()));
                }
                if group.is_enumerable() {
                    let mut all = group.enumerate()?;
                    if n_inv > all.len() {
                        return Err(Error::SampleTooLarge {
                            requested: n_inv,
                            order: all.len().to_string(),
                        });
                    }
                    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                    all.truncate(n_inv);
                    all
                } else {
                    group.sample(seed, n_inv, true)?
                }
            }
        };
        Ok(Self {
            base,
            group,
            mode,
            elements,
            cache: Some(Mutex::new(HashMap::new())),
        })
    }

    /// Disables memoization of base explanations.
    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    pub fn mode(&self) -> EnforceMode {
        self.mode
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn base(&self) -> &E {
        &self.base
    }

    fn base_explain(&self, x: &Signal) -> Result<Explanation> {
        let Some(cache) = &self.cache else {
            return self.base.explain(x);
        };
        let key = x.bit_key();
        if let Some(e) = cache.lock().expect("cache poisoned").get(&key) {
            return Ok(e.clone());
        }
        let e = self.base.explain(x)?;
        cache.lock().expect("cache poisoned").insert(key, e.clone());
        Ok(e)
    }
}

impl<E: Explainer> Explainer for EnforcedExplainer<E> {
    fn name(&self) -> String {
        format!("{}+enforced({})", self.base.name(), self.elements.len())
    }

    fn output_action(&self) -> OutputAction {
        OutputAction::Trivial
    }

    fn explain(&self, x: &Signal) -> Result<Explanation> {
        let parts: Vec<Explanation> = self
            .elements
            .par_iter()
            .map(|g| self.base_explain(&self.group.act(g, x)?))
            .collect::<Result<_>>()?;
        let first = &parts[0];
        let dim = first.as_slice().len();
        for p in &parts[1..] {
            if p.kind_name() != first.kind_name() || p.as_slice().len() != dim {
                return Err(Error::InvalidArgument(
                    "base explainer must produce explanations of one kind and dimension".into(),
                ));
            }
        }
        // Sorting each coordinate's terms makes the sum independent of the
        // element order, so the full-group average is exactly invariant.
        let n = parts.len() as f64;
        let mut column = Vec::with_capacity(parts.len());
        let mean = (0..dim)
            .map(|i| {
                column.clear();
                column.extend(parts.iter().map(|p| p.as_slice()[i]));
                column.sort_by(f64::total_cmp);
                column.iter().sum::<f64>() / n
            })
            .collect();
        first.with_values(mean)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::attribution::{Baseline, FeatureExplainer, FeatureMethod};
    use crate::data_synth::DatasetKind;
    use crate::model_zoo::{Model, ModelKind, WidthConfig};
    use crate::robustness_metrics::{invariance_score, EstimatorMode};
    use crate::symmetry::{DomainShape, GroupKind};

    fn shape() -> DomainShape {
        DomainShape::new(vec![32], 1).unwrap()
    }

    fn cyclic() -> SymmetryGroup {
        SymmetryGroup::new(GroupKind::Cyclic { len: 32 }, shape()).unwrap()
    }

    fn random_signal(seed: u64) -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Signal::new(shape(), (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn flatten_cnn() -> Model {
        let kind = ModelKind::FlattenCnn1d;
        Model::build(kind, WidthConfig::for_dataset(kind, &DatasetKind::ecg_like()), 2).unwrap()
    }

    /// `α·e₁ + e₂`.
    struct Combo<'a, A, B>(f64, &'a A, &'a B);

    impl<A: Explainer, B: Explainer> Explainer for Combo<'_, A, B> {
        fn name(&self) -> String {
            "combo".into()
        }
        fn output_action(&self) -> OutputAction {
            OutputAction::SameAsInput
        }
        fn explain(&self, x: &Signal) -> Result<Explanation> {
            let (a, b) = (self.1.explain(x)?, self.2.explain(x)?);
            let v = a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| self.0 * p + q).collect();
            a.with_values(v)
        }
    }

    #[test]
    fn full_group_average_is_exactly_invariant() {
        let m = flatten_cnn();
        let base = FeatureExplainer::new(&m, FeatureMethod::Saliency, Baseline::Zero);
        let group = cyclic();
        let e = EnforcedExplainer::new(&base, group.clone(), EnforceMode::FullGroup).unwrap();
        for seed in 0..3 {
            let x = random_signal(seed);
            let raw = invariance_score(&base, &group, &x, None, EstimatorMode::Exact).unwrap().value;
            assert!(raw < 0.99);
            let reference = e.explain(&x).unwrap();
            for g in group.enumerate().unwrap() {
                assert_eq!(e.explain(&group.act(&g, &x).unwrap()).unwrap(), reference);
            }
            let s = invariance_score(&e, &group, &x, None, EstimatorMode::Exact).unwrap().value;
            assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn cache_does_not_change_results() {
        let m = flatten_cnn();
        let base = FeatureExplainer::new(&m, FeatureMethod::InputXGradient, Baseline::Zero);
        let cached = enforce(&base, cyclic(), 5, 9).unwrap();
        let plain = enforce(&base, cyclic(), 5, 9).unwrap().without_cache();
        let x = random_signal(4);
        assert_eq!(cached.explain(&x).unwrap(), plain.explain(&x).unwrap());
        assert_eq!(cached.explain(&x).unwrap(), plain.explain(&x).unwrap());
    }

    #[test]
    fn single_identity_sample_reproduces_the_base() {
        let m = flatten_cnn();
        let base = FeatureExplainer::new(&m, FeatureMethod::Saliency, Baseline::Zero);
        let group = cyclic();
        let seed = (0..1000)
            .find(|&s| {
                let e = enforce(&base, group.clone(), 1, s).unwrap();
                e.elements()[0] == group.identity()
            })
            .unwrap();
        let e = enforce(&base, group, 1, seed).unwrap();
        let x = random_signal(1);
        assert_eq!(e.explain(&x).unwrap(), base.explain(&x).unwrap());
    }

    #[test]
    fn samples_are_nested_and_distinct() {
        let group = cyclic();
        let m = flatten_cnn();
        let base = FeatureExplainer::new(&m, FeatureMethod::Saliency, Baseline::Zero);
        let full = enforce(&base, group.clone(), 32, 7).unwrap();
        for n in [1, 2, 4, 8, 16] {
            let e = enforce(&base, group.clone(), n, 7).unwrap();
            assert_eq!(e.elements(), &full.elements()[..n]);
        }
        let mut keys: Vec<String> = full.elements().iter().map(|g| format!("{g:?}")).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 32);
    }

    #[test]
    fn aggregation_is_linear() {
        let m = flatten_cnn();
        let e1 = FeatureExplainer::new(&m, FeatureMethod::Saliency, Baseline::Zero);
        let e2 = FeatureExplainer::new(&m, FeatureMethod::InputXGradient, Baseline::Zero);
        let alpha = -1.7;
        let combo = Combo(alpha, &e1, &e2);
        let group = cyclic();
        let x = random_signal(3);
        for n in [3, 32] {
            let lhs = enforce(&combo, group.clone(), n, 5).unwrap().explain(&x).unwrap();
            let a = enforce(&e1, group.clone(), n, 5).unwrap().explain(&x).unwrap();
            let b = enforce(&e2, group.clone(), n, 5).unwrap().explain(&x).unwrap();
            for ((l, p), q) in lhs.as_slice().iter().zip(a.as_slice()).zip(b.as_slice()) {
                assert!((l - (alpha * p + q)).abs() <= 1e-12 * (1.0 + l.abs()));
            }
        }
    }

    #[test]
    fn oversized_samples_are_rejected() {
        let m = flatten_cnn();
        let base = FeatureExplainer::new(&m, FeatureMethod::Saliency, Baseline::Zero);
        assert!(matches!(enforce(&base, cyclic(), 33, 0), Err(Error::SampleTooLarge { .. })));
        assert!(enforce(&base, cyclic(), 0, 0).is_err());
    }

    #[test]
    fn concept_scores_are_averaged_before_thresholding() {
        struct FirstValue;
        impl Explainer for FirstValue {
            fn name(&self) -> String {
                "first".into()
            }
            fn output_action(&self) -> OutputAction {
                OutputAction::Trivial
            }
            fn explain(&self, x: &Signal) -> Result<Explanation> {
                Ok(Explanation::Concepts(vec![x.values()[0]]))
            }
        }
        let mut v = vec![-0.1; 32];
        v[0] = 10.0;
        let x = Signal::new(shape(), v).unwrap();
        let e = EnforcedExplainer::new(FirstValue, cyclic(), EnforceMode::FullGroup).unwrap();
        let out = e.explain(&x).unwrap();
        // A majority vote would say absent; the averaged score is positive.
        assert!((out.as_slice()[0] - (10.0 - 3.1) / 32.0).abs() < 1e-12);
        assert_eq!(out.presence(), Some(vec![true]));
    }
}

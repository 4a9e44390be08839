//! Training-example importance: influence functions and TracIn over the
//! output layer, SimplEx and representation similarity over a tap.

mod head;
mod simplex;

#[cfg(test)]
mod tests;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_synth::Sample;
use crate::error::{Error, Result};
use crate::explainer::Explainer;
use crate::explanation::Explanation;
use crate::model_zoo::{argmax, Checkpoint, Model, Tap};
use crate::symmetry::{OutputAction, Signal};

pub use head::{conjugate_gradient, LinearHead};
pub use simplex::{gram, simplex_weights, simplex_weights_with_gram, SimplexFit};

/// Training subset size used for example importance.
pub const DEFAULT_SUBSET_SIZE: usize = 100;
pub const DEFAULT_DAMPING: f64 = 1e-2;
pub const DEFAULT_SIMPLEX_EPOCHS: usize = 1000;
pub const DEFAULT_SIMPLEX_LR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSubset {
    examples: Vec<Signal>,
    labels: Vec<usize>,
}

impl TrainSubset {
    pub fn new(examples: Vec<(Signal, usize)>) -> Result<Self> {
        if examples.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "training subset needs at least 2 examples, got {}",
                examples.len()
            )));
        }
        let (examples, labels) = examples.into_iter().unzip();
        Ok(Self { examples, labels })
    }

    /// The first `n` samples.
    pub fn from_samples(samples: &[Sample], n: usize) -> Result<Self> {
        Self::new(samples.iter().take(n).map(|s| (s.x.clone(), s.label)).collect())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Signal] {
        &self.examples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Flattened tap activations for every example.
    pub fn representations(&self, model: &Model, tap: Tap) -> Result<Vec<Vec<f64>>> {
        self.examples
            .par_iter()
            .map(|x| Ok(model.representation(tap, x)?.into_data()))
            .collect()
    }

    pub fn penultimates(&self, model: &Model) -> Result<Vec<Vec<f64>>> {
        self.examples.par_iter().map(|x| model.penultimate(x)).collect()
    }

    /// Output-layer loss gradients for every example.
    pub fn head_gradients(&self, model: &Model) -> Result<Vec<Vec<f64>>> {
        let head = LinearHead::from_model(model)?;
        let reps = self.penultimates(model)?;
        reps.iter().zip(&self.labels).map(|(r, &y)| head.loss_gradient(r, y)).collect()
    }
}

/// `scoreₙ = ∇L(xⁿ, yⁿ)ᵀ (H + λI)⁻¹ ∇L(x, y)` over the output layer, with
/// `H` the Hessian of the mean training loss on `train_reps`.
pub fn influence_scores(
    head: &LinearHead,
    train_reps: &[Vec<f64>],
    train_labels: &[usize],
    rep_x: &[f64],
    y: usize,
    damping: f64,
) -> Result<Vec<f64>> {
    if !(damping > 0.0) {
        return Err(Error::InvalidArgument(format!("damping must be positive, got {damping}")));
    }
    let train_grads: Vec<Vec<f64>> = train_reps
        .iter()
        .zip(train_labels)
        .map(|(r, &l)| head.loss_gradient(r, l))
        .collect::<Result<_>>()?;
    let probs: Vec<Vec<f64>> = train_reps.iter().map(|r| head.probabilities(r)).collect::<Result<_>>()?;
    let solved = head.solve_damped(train_reps, &probs, &head.loss_gradient(rep_x, y)?, damping)?;
    Ok(train_grads.iter().map(|g| dot(g, &solved)).collect())
}

/// `scoreₙ = Σ_c lr_c · gₙ,c · g_c` for per-checkpoint training gradients
/// `gₙ,c` and test gradient `g_c`.
pub fn tracin_scores(terms: &[(f64, Vec<Vec<f64>>, Vec<f64>)]) -> Result<Vec<f64>> {
    let Some((_, first, _)) = terms.first() else {
        return Err(Error::InvalidArgument("TracIn needs at least one checkpoint".into()));
    };
    let mut scores = vec![0.0; first.len()];
    for (lr, train, test) in terms {
        if train.len() != scores.len() {
            return Err(Error::LengthMismatch {
                left: scores.len(),
                right: train.len(),
            });
        }
        for (s, g) in scores.iter_mut().zip(train) {
            *s += lr * dot(g, test);
        }
    }
    Ok(scores)
}

/// `scoreₙ = rep_xᵀ rep_train[n]`.
pub fn representation_similarity(rep_train: &[Vec<f64>], rep_x: &[f64]) -> Result<Vec<f64>> {
    rep_train
        .iter()
        .map(|r| {
            if r.len() != rep_x.len() {
                return Err(Error::LengthMismatch {
                    left: r.len(),
                    right: rep_x.len(),
                });
            }
            Ok(dot(r, rep_x))
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ExampleMethod {
    InfluenceFunctions { damping: f64 },
    TracIn,
    Simplex { tap: Tap, epochs: usize, lr: f64 },
    RepresentationSimilarity { tap: Tap },
}

impl ExampleMethod {
    pub fn name(&self) -> String {
        match self {
            ExampleMethod::InfluenceFunctions { .. } => "influence_functions".into(),
            ExampleMethod::TracIn => "tracin".into(),
            ExampleMethod::Simplex { tap, .. } => format!("simplex_{}", tap.name()),
            ExampleMethod::RepresentationSimilarity { tap } => format!("representation_similarity_{}", tap.name()),
        }
    }
}

pub struct InfluenceExplainer<'a> {
    model: &'a Model,
    head: LinearHead,
    train_reps: Vec<Vec<f64>>,
    train_labels: Vec<usize>,
    train_grads: Vec<Vec<f64>>,
    train_probs: Vec<Vec<f64>>,
    damping: f64,
}

impl<'a> InfluenceExplainer<'a> {
    pub fn new(model: &'a Model, subset: &TrainSubset, damping: f64) -> Result<Self> {
        if !(damping > 0.0) {
            return Err(Error::InvalidArgument(format!("damping must be positive, got {damping}")));
        }
        let head = LinearHead::from_model(model)?;
        let train_reps = subset.penultimates(model)?;
        let train_grads = train_reps
            .iter()
            .zip(subset.labels())
            .map(|(r, &y)| head.loss_gradient(r, y))
            .collect::<Result<_>>()?;
        let train_probs = train_reps.iter().map(|r| head.probabilities(r)).collect::<Result<_>>()?;
        Ok(Self {
            model,
            head,
            train_reps,
            train_labels: subset.labels().to_vec(),
            train_grads,
            train_probs,
            damping,
        })
    }

    pub fn scores(&self, x: &Signal, y: usize) -> Result<Vec<f64>> {
        let rep = self.model.penultimate(x)?;
        let g = self.head.loss_gradient(&rep, y)?;
        let solved = self.head.solve_damped(&self.train_reps, &self.train_probs, &g, self.damping)?;
        Ok(self.train_grads.iter().map(|t| dot(t, &solved)).collect())
    }

    pub fn train_labels(&self) -> &[usize] {
        &self.train_labels
    }
}

impl Explainer for InfluenceExplainer<'_> {
    fn name(&self) -> String {
        "influence_functions".into()
    }

    fn output_action(&self) -> OutputAction {
        OutputAction::Trivial
    }

    fn explain(&self, x: &Signal) -> Result<Explanation> {
        let y = argmax(&self.model.forward(x)?);
        Ok(Explanation::Examples(self.scores(x, y)?))
    }
}

pub struct TracInExplainer {
    /// (model at checkpoint, learning rate, training gradients).
    checkpoints: Vec<(Model, f64, Vec<Vec<f64>>)>,
}

impl TracInExplainer {
    /// The label of `x` is predicted by the last checkpoint.
    pub fn new(checkpoints: Vec<(Model, f64)>, subset: &TrainSubset) -> Result<Self> {
        let Some((first, _)) = checkpoints.first() else {
            return Err(Error::InvalidArgument("TracIn needs at least one checkpoint".into()));
        };
        let (kind, config) = (first.kind(), first.config().clone());
        let checkpoints = checkpoints
            .into_iter()
            .map(|(m, lr)| {
                if m.kind() != kind || *m.config() != config {
                    return Err(Error::InvalidArgument(format!(
                        "checkpoint of {} does not match {}",
                        m.kind(),
                        kind
                    )));
                }
                let grads = subset.head_gradients(&m)?;
                Ok((m, lr, grads))
            })
            .collect::<Result<_>>()?;
        Ok(Self { checkpoints })
    }

    /// From saved checkpoints of `model`, using each checkpoint's recorded
    /// learning rate.
    pub fn from_checkpoints(model: &Model, checkpoints: &[Checkpoint], subset: &TrainSubset) -> Result<Self> {
        let models = checkpoints
            .iter()
            .map(|c| Ok((model.at(c)?, c.optimizer_lr)))
            .collect::<Result<_>>()?;
        Self::new(models, subset)
    }

    pub fn scores(&self, x: &Signal, y: usize) -> Result<Vec<f64>> {
        let terms = self
            .checkpoints
            .iter()
            .map(|(m, lr, train)| {
                let head = LinearHead::from_model(m)?;
                let g = head.loss_gradient(&m.penultimate(x)?, y)?;
                Ok((*lr, train.clone(), g))
            })
            .collect::<Result<Vec<_>>>()?;
        tracin_scores(&terms)
    }
}

impl Explainer for TracInExplainer {
    fn name(&self) -> String {
        "tracin".into()
    }

    fn output_action(&self) -> OutputAction {
        OutputAction::Trivial
    }

    fn explain(&self, x: &Signal) -> Result<Explanation> {
        let last = &self.checkpoints[self.checkpoints.len() - 1].0;
        let y = argmax(&last.forward(x)?);
        Ok(Explanation::Examples(self.scores(x, y)?))
    }
}

pub struct SimplexExplainer<'a> {
    model: &'a Model,
    tap: Tap,
    train_reps: Vec<Vec<f64>>,
    gram: Vec<Vec<f64>>,
    epochs: usize,
    lr: f64,
}

impl<'a> SimplexExplainer<'a> {
    pub fn new(model: &'a Model, subset: &TrainSubset, tap: Tap, epochs: usize, lr: f64) -> Result<Self> {
        let train_reps = subset.representations(model, tap)?;
        Ok(Self {
            model,
            tap,
            gram: gram(&train_reps),
            train_reps,
            epochs,
            lr,
        })
    }

    pub fn fit(&self, x: &Signal) -> Result<SimplexFit> {
        let rep = self.model.representation(self.tap, x)?.into_data();
        simplex_weights_with_gram(&self.train_reps, &self.gram, &rep, self.epochs, self.lr)
    }
}

impl Explainer for SimplexExplainer<'_> {
    fn name(&self) -> String {
        format!("simplex_{}", self.tap.name())
    }

    fn output_action(&self) -> OutputAction {
        OutputAction::Trivial
    }

    fn explain(&self, x: &Signal) -> Result<Explanation> {
        Ok(Explanation::Examples(self.fit(x)?.weights))
    }
}

pub struct RepresentationSimilarityExplainer<'a> {
    model: &'a Model,
    tap: Tap,
    train_reps: Vec<Vec<f64>>,
}

impl<'a> RepresentationSimilarityExplainer<'a> {
    pub fn new(model: &'a Model, subset: &TrainSubset, tap: Tap) -> Result<Self> {
        Ok(Self {
            model,
            tap,
            train_reps: subset.representations(model, tap)?,
        })
    }
}

impl Explainer for RepresentationSimilarityExplainer<'_> {
    fn name(&self) -> String {
        format!("representation_similarity_{}", self.tap.name())
    }

    fn output_action(&self) -> OutputAction {
        OutputAction::Trivial
    }

    fn explain(&self, x: &Signal) -> Result<Explanation> {
        let rep = self.model.representation(self.tap, x)?.into_data();
        Ok(Explanation::Examples(representation_similarity(&self.train_reps, &rep)?))
    }
}

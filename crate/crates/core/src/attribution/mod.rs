//! Gradient- and perturbation-based feature attribution.
//!
//! A "feature" for the perturbation schemes is one domain point with all of
//! its channels; its score is written to every channel of that point.


use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::explainer::Explainer;
use crate::explanation::Explanation;
use crate::model_zoo::{argmax, Model};
use crate::symmetry::{OutputAction, Signal};

/// A model whose logits can be differentiated with respect to the input.
pub trait Differentiable: Sync {
    fn classes(&self) -> usize;

    fn logits(&self, x: &Signal) -> Result<Vec<f64>>;

    /// Logits and `∇ₓ logits[target]`, laid out like `x.values()`.
    fn logit_gradient(&self, x: &Signal, target: usize) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl Differentiable for Model {
    fn classes(&self) -> usize {
        Model::classes(self)
    }

    fn logits(&self, x: &Signal) -> Result<Vec<f64>> {
        self.forward(x)
    }

    fn logit_gradient(&self, x: &Signal, target: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        self.input_gradient(x, target)
    }
}

/// The reference signal `x̄` standing for feature absence.
#[derive(Debug, Clone)]
pub enum Baseline {
    Zero,
    Constant(f64),
    /// Fresh i.i.d. normal values, identical for every input given the seed.
    RandomNormal { stdev: f64, seed: u64 },
    /// Each point copied from a seeded random member of a reference batch.
    BatchShuffle { reference: Arc<Vec<Signal>>, seed: u64 },
    Fixed(Signal),
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Zero => "zero",
            Baseline::Constant(_) => "constant",
            Baseline::RandomNormal { .. } => "random_normal",
            Baseline::BatchShuffle { .. } => "batch_shuffle",
            Baseline::Fixed(_) => "fixed",
        }
    }

    /// Whether `ρ[g]x̄ = x̄` for every permutation representation.
    pub fn is_invariant(&self) -> bool {
        matches!(self, Baseline::Zero | Baseline::Constant(_))
    }

    pub fn realize(&self, x: &Signal) -> Result<Signal> {
        let n = x.values().len();
        match self {
            Baseline::Zero => x.with_values(vec![0.0; n]),
            Baseline::Constant(c) => x.with_values(vec![*c; n]),
            Baseline::RandomNormal { stdev, seed } => {
                let dist = Normal::new(0.0, *stdev)
                    .map_err(|e| Error::InvalidArgument(format!("baseline stdev: {e}")))?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                x.with_values((0..n).map(|_| dist.sample(&mut rng)).collect())
            }
            Baseline::BatchShuffle { reference, seed } => {
                if reference.is_empty() {
                    return Err(Error::InvalidArgument("batch_shuffle needs a non-empty reference batch".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let c = x.shape().channels();
                let mut v = Vec::with_capacity(n);
                for p in 0..x.shape().points() {
                    let donor = &reference[rng.random_range(0..reference.len())];
                    donor.check_shape(x.shape())?;
                    v.extend_from_slice(&donor.values()[p * c..(p + 1) * c]);
                }
                x.with_values(v)
            }
            Baseline::Fixed(b) => {
                b.check_shape(x.shape())?;
                x.with_values(b.values().to_vec())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// The model's predicted class at the explained input.
    Predicted,
    Class(usize),
}

impl Target {
    fn resolve<M: Differentiable + ?Sized>(self, model: &M, x: &Signal) -> Result<usize> {
        let t = match self {
            Target::Predicted => argmax(&model.logits(x)?),
            Target::Class(c) => c,
        };
        if t >= model.classes() {
            return Err(Error::InvalidArgument(format!(
                "target {t} ≥ class count {}",
                model.classes()
            )));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionResult {
    pub scores: Signal,
    pub target: usize,
    /// `|Σ scores − (f(x) − f(x̄))|` for path methods.
    pub completeness_gap: Option<f64>,
}

fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn finish(x: &Signal, scores: Vec<f64>, target: usize, gap: Option<f64>) -> Result<AttributionResult> {
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attribution scores".into()));
    }
    Ok(AttributionResult {
        scores: x.with_values(scores)?,
        target,
        completeness_gap: gap,
    })
}

/// `∇ₓ f_target(x)`.
pub fn saliency<M: Differentiable + ?Sized>(model: &M, x: &Signal, target: Target) -> Result<AttributionResult> {
    let t = target.resolve(model, x)?;
    let (_, grad) = model.logit_gradient(x, t)?;
    finish(x, grad, t, None)
}

/// `(x − x̄) ⊙ (1/N) Σₙ ∇ₓ f(x̄ + (n/N)(x − x̄))`, right-endpoint rule.
pub fn integrated_gradients<M: Differentiable + ?Sized>(
    model: &M,
    x: &Signal,
    baseline: &Baseline,
    target: Target,
    steps: usize,
) -> Result<AttributionResult> {
    if steps == 0 {
        return Err(Error::InvalidArgument("integrated gradients needs ≥ 1 step".into()));
    }
    let t = target.resolve(model, x)?;
    let xb = baseline.realize(x)?;
    let diff: Vec<f64> = x.values().iter().zip(xb.values()).map(|(a, b)| a - b).collect();
    let mut avg = vec![0.0; diff.len()];
    let mut f_x = 0.0;
    for n in 1..=steps {
        let alpha = n as f64 / steps as f64;
        let point: Vec<f64> = xb.values().iter().zip(&diff).map(|(b, d)| b + alpha * d).collect();
        let (logits, grad) = model.logit_gradient(&x.with_values(point)?, t)?;
        if n == steps {
            f_x = logits[t];
        }
        for (a, g) in avg.iter_mut().zip(grad) {
            *a += g;
        }
    }
    avg.iter_mut().for_each(|a| *a /= steps as f64);
    let scores = hadamard(&diff, &avg);
    let f_base = model.logits(&xb)?[t];
    let gap = (scores.iter().sum::<f64>() - (f_x - f_base)).abs();
    finish(x, scores, t, Some(gap))
}

/// `x ⊙ ∇ₓ f(x)`: the single-point path weighting at `t = 1`.
pub fn input_x_gradient<M: Differentiable + ?Sized>(model: &M, x: &Signal, target: Target) -> Result<AttributionResult> {
    let t = target.resolve(model, x)?;
    let (_, grad) = model.logit_gradient(x, t)?;
    finish(x, hadamard(x.values(), &grad), t, None)
}

/// Expected gradients over random normal baselines and uniform path points:
/// mean of `(x − x̄ₖ) ⊙ ∇ₓ f(x̄ₖ + αₖ(x − x̄ₖ))`. A `stdev` of `None` uses the
/// standard deviation of `x`.
pub fn gradient_shap<M: Differentiable + ?Sized>(
    model: &M,
    x: &Signal,
    stdev: Option<f64>,
    target: Target,
    n_baselines: usize,
    n_points: usize,
    seed: u64,
) -> Result<AttributionResult> {
    if n_baselines == 0 || n_points == 0 {
        return Err(Error::InvalidArgument("gradient shap needs ≥ 1 sample".into()));
    }
    let t = target.resolve(model, x)?;
    let v = x.values();
    let sd = stdev.unwrap_or_else(|| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    });
    let dist = Normal::new(0.0, sd).map_err(|e| Error::InvalidArgument(format!("stdev: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = (n_baselines * n_points) as f64;
    let mut scores = vec![0.0; v.len()];
    for _ in 0..n_baselines {
        let base: Vec<f64> = (0..v.len()).map(|_| dist.sample(&mut rng)).collect();
        for _ in 0..n_points {
            let alpha: f64 = rng.random();
            let point: Vec<f64> = base.iter().zip(v).map(|(b, a)| b + alpha * (a - b)).collect();
            let (_, grad) = model.logit_gradient(&x.with_values(point)?, t)?;
            for ((s, g), (a, b)) in scores.iter_mut().zip(grad).zip(v.iter().zip(&base)) {
                *s += (a - b) * g / total;
            }
        }
    }
    finish(x, scores, t, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Replace one point by the baseline.
    Ablation,
    /// Ablation against a batch-shuffled baseline.
    Permutation,
    /// Replace a centred window of the given width (per axis, circular) and
    /// average each point's score over the windows covering it.
    Occlusion { window: usize },
}

pub fn perturbation_attribution<M: Differentiable + ?Sized>(
    model: &M,
    x: &Signal,
    baseline: &Baseline,
    target: Target,
    scheme: Scheme,
) -> Result<AttributionResult> {
    if scheme == Scheme::Permutation && !matches!(baseline, Baseline::BatchShuffle { .. }) {
        return Err(Error::InvalidArgument("permutation scheme needs a batch_shuffle reference batch".into()));
    }
    let axes = x.shape().axes().to_vec();
    let window = match scheme {
        Scheme::Occlusion { window } => {
            if window == 0 || axes.iter().any(|&a| window > a) {
                return Err(Error::InvalidArgument(format!(
                    "occlusion window {window} must be in 1..={}",
                    axes.iter().min().copied().unwrap_or(0)
                )));
            }
            window
        }
        _ => 1,
    };
    let t = target.resolve(model, x)?;
    let xb = baseline.realize(x)?;
    let f_x = model.logits(x)?[t];
    let c = x.shape().channels();
    let points = x.shape().points();

    // strides of the row-major point index
    let mut strides = vec![1usize; axes.len()];
    for k in (0..axes.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * axes[k + 1];
    }
    let cover = |centre: usize| -> Vec<usize> {
        let mut out = vec![0usize];
        for (k, &extent) in axes.iter().enumerate() {
            let coord = (centre / strides[k]) % extent;
            let mut next = Vec::with_capacity(out.len() * window);
            for &base in &out {
                for o in 0..window {
                    let q = (coord + extent + o - window / 2) % extent;
                    next.push(base + q * strides[k]);
                }
            }
            out = next;
        }
        out
    };

    let mut point_scores = vec![0.0; points];
    let mut hits = vec![0usize; points];
    for centre in 0..points {
        let covered = cover(centre);
        let mut v = x.values().to_vec();
        for &p in &covered {
            v[p * c..(p + 1) * c].copy_from_slice(&xb.values()[p * c..(p + 1) * c]);
        }
        let delta = f_x - model.logits(&x.with_values(v)?)?[t];
        for &p in &covered {
            point_scores[p] += delta;
            hits[p] += 1;
        }
    }
    let scores = (0..points * c)
        .map(|i| point_scores[i / c] / hits[i / c] as f64)
        .collect();
    finish(x, scores, t, None)
}

/// Feature attribution method with its settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMethod {
    Saliency,
    IntegratedGradients { steps: usize },
    InputXGradient,
    GradientShap { n_baselines: usize, n_points: usize, seed: u64 },
    Ablation,
    Occlusion { window: usize },
    FeaturePermutation,
}

impl FeatureMethod {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureMethod::Saliency => "saliency",
            FeatureMethod::IntegratedGradients { .. } => "integrated_gradients",
            FeatureMethod::InputXGradient => "input_x_gradient",
            FeatureMethod::GradientShap { .. } => "gradient_shap",
            FeatureMethod::Ablation => "ablation",
            FeatureMethod::Occlusion { .. } => "occlusion",
            FeatureMethod::FeaturePermutation => "feature_permutation",
        }
    }
}

impl fmt::Display for FeatureMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A feature attribution method bound to a model, baseline and target.
pub struct FeatureExplainer<'a, M: Differentiable + ?Sized> {
    pub model: &'a M,
    pub method: FeatureMethod,
    pub baseline: Baseline,
    pub target: Target,
}

impl<'a, M: Differentiable + ?Sized> FeatureExplainer<'a, M> {
    pub fn new(model: &'a M, method: FeatureMethod, baseline: Baseline) -> Self {
        Self {
            model,
            method,
            baseline,
            target: Target::Predicted,
        }
    }

    pub fn attribute(&self, x: &Signal) -> Result<AttributionResult> {
        let (m, b, t) = (self.model, &self.baseline, self.target);
        match self.method {
            FeatureMethod::Saliency => saliency(m, x, t),
            FeatureMethod::IntegratedGradients { steps } => integrated_gradients(m, x, b, t, steps),
            FeatureMethod::InputXGradient => input_x_gradient(m, x, t),
            FeatureMethod::GradientShap {
                n_baselines,
                n_points,
                seed,
            } => {
                let stdev = match b {
                    Baseline::RandomNormal { stdev, .. } => Some(*stdev),
                    _ => None,
                };
                gradient_shap(m, x, stdev, t, n_baselines, n_points, seed)
            }
            FeatureMethod::Ablation => perturbation_attribution(m, x, b, t, Scheme::Ablation),
            FeatureMethod::Occlusion { window } => perturbation_attribution(m, x, b, t, Scheme::Occlusion { window }),
            FeatureMethod::FeaturePermutation => perturbation_attribution(m, x, b, t, Scheme::Permutation),
        }
    }
}

impl<M: Differentiable + ?Sized> Explainer for FeatureExplainer<'_, M> {
    fn name(&self) -> String {
        self.method.name().to_string()
    }

    fn output_action(&self) -> OutputAction {
        OutputAction::SameAsInput
    }

    fn explain(&self, x: &Signal) -> Result<Explanation> {
        Ok(Explanation::Feature(self.attribute(x)?.scores))
    }
}

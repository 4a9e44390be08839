//! Invariance and equivariance scores of explanations, model invariance,
//! Monte Carlo estimation and the sensitivity comparison metric.

mod report;

#[cfg(test)]
mod tests;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainer::Explainer;
use crate::explanation::Explanation;
use crate::model_zoo::Model;
use crate::symmetry::{act_on_explanation, GroupElement, OutputAction, Signal, SymmetryGroup};
use crate::tensor_engine::softmax;

pub use report::{summarize, MetricKind, ReportRow, RobustnessReport, SummaryRow};

/// Failure probability at which [`MetricEstimate::hoeffding_t`] is quoted.
pub const HOEFFDING_DELTA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Cosine,
    Accuracy,
}

impl SimilarityKind {
    /// Accuracy for categorical explanations, cosine otherwise.
    pub fn for_explanation(e: &Explanation) -> Self {
        if e.is_categorical() {
            SimilarityKind::Accuracy
        } else {
            SimilarityKind::Cosine
        }
    }
}

/// Cosine with `s(0, 0) = 1` and `s(0, b) = 0`; accuracy as the fraction of
/// equal entries.
pub fn similarity(kind: SimilarityKind, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    match kind {
        SimilarityKind::Cosine => {
            // Identical vectors score exactly 1 rather than 1 ± ulp.
            if a == b {
                return Ok(1.0);
            }
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok(match (na == 0.0, nb == 0.0) {
                (true, true) => 1.0,
                (true, false) | (false, true) => 0.0,
                _ => {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    (dot / (na * nb)).clamp(-1.0, 1.0)
                }
            })
        }
        SimilarityKind::Accuracy => {
            if a.is_empty() {
                return Ok(1.0);
            }
            let equal = a.iter().zip(b).filter(|(x, y)| x == y).count();
            Ok(equal as f64 / a.len() as f64)
        }
    }
}

/// Similarity of two explanations of the same kind. Concept explanations are
/// compared on thresholded presence.
pub fn explanation_similarity(kind: SimilarityKind, a: &Explanation, b: &Explanation) -> Result<f64> {
    if a.kind_name() != b.kind_name() {
        return Err(Error::InvalidArgument(format!(
            "cannot compare {} with {} explanations",
            a.kind_name(),
            b.kind_name()
        )));
    }
    match (kind, a.presence(), b.presence()) {
        (SimilarityKind::Accuracy, Some(pa), Some(pb)) => {
            let fa: Vec<f64> = pa.iter().map(|&p| f64::from(u8::from(p))).collect();
            let fb: Vec<f64> = pb.iter().map(|&p| f64::from(u8::from(p))).collect();
            similarity(kind, &fa, &fb)
        }
        _ => similarity(kind, a.as_slice(), b.as_slice()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Average over the whole enumerated group.
    Exact,
    /// Average over `n_samp` elements drawn uniformly with replacement.
    MonteCarlo { n_samp: usize, seed: u64 },
}

impl EstimatorMode {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorMode::Exact => "exact",
            EstimatorMode::MonteCarlo { .. } => "monte_carlo",
        }
    }

    /// Exact when the group is enumerable, otherwise Monte Carlo.
    pub fn auto(group: &SymmetryGroup, n_samp: usize, seed: u64) -> Self {
        if group.is_enumerable() {
            EstimatorMode::Exact
        } else {
            EstimatorMode::MonteCarlo { n_samp, seed }
        }
    }

    pub fn elements(&self, group: &SymmetryGroup) -> Result<Vec<GroupElement>> {
        match *self {
            EstimatorMode::Exact => group.enumerate(),
            EstimatorMode::MonteCarlo { n_samp, seed } => {
                if n_samp == 0 {
                    return Err(Error::InvalidArgument("Monte Carlo needs n_samp ≥ 1".into()));
                }
                group.sample(seed, n_samp, false)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricEstimate {
    pub value: f64,
    pub mode: EstimatorMode,
    /// Number of group elements averaged.
    pub n_elements: usize,
    /// Deviation `t` with `P(|estimate − exact| ≥ t) ≤ 1e-4` for this single
    /// estimate; zero for exact estimates.
    pub hoeffding_t: f64,
}

impl MetricEstimate {
    fn new(value: f64, mode: EstimatorMode, n_elements: usize) -> Self {
        let hoeffding_t = match mode {
            EstimatorMode::Exact => 0.0,
            EstimatorMode::MonteCarlo { n_samp, .. } => hoeffding_deviation(1, n_samp, HOEFFDING_DELTA),
        };
        Self {
            value,
            mode,
            n_elements,
            hoeffding_t,
        }
    }
}

/// `2·exp(−n_test·n_samp·t²/2)`: bound on the probability that the test-set
/// Monte Carlo mean deviates from the exact mean by at least `t`, for scores
/// in `[−1, 1]`.
pub fn hoeffding_bound(n_test: usize, n_samp: usize, t: f64) -> f64 {
    2.0 * (-(n_test as f64) * n_samp as f64 * t * t / 2.0).exp()
}

/// The `t` at which [`hoeffding_bound`] equals `delta`.
pub fn hoeffding_deviation(n_test: usize, n_samp: usize, delta: f64) -> f64 {
    (2.0 * (2.0 / delta).ln() / (n_test as f64 * n_samp as f64)).sqrt()
}

/// Mean of `f(g)` over the estimator's elements, summed in element order.
fn average<F>(group: &SymmetryGroup, mode: EstimatorMode, f: F) -> Result<MetricEstimate>
where
    F: Fn(&GroupElement) -> Result<f64> + Sync,
{
    let elements = mode.elements(group)?;
    let values: Vec<f64> = elements.par_iter().map(&f).collect::<Result<_>>()?;
    let value = values.iter().sum::<f64>() / values.len() as f64;
    Ok(MetricEstimate::new(value, mode, values.len()))
}

/// `(1/|G|) Σ_g s(e(ρ[g]x), e(x))`. `sim` defaults to the explanation's kind.
pub fn invariance_score<E: Explainer + ?Sized>(
    explainer: &E,
    group: &SymmetryGroup,
    x: &Signal,
    sim: Option<SimilarityKind>,
    mode: EstimatorMode,
) -> Result<MetricEstimate> {
    let reference = explainer.explain(x)?;
    let kind = sim.unwrap_or_else(|| SimilarityKind::for_explanation(&reference));
    average(group, mode, |g| {
        let moved = explainer.explain(&group.act(g, x)?)?;
        explanation_similarity(kind, &moved, &reference)
    })
}

/// `(1/|G|) Σ_g s(e(ρ[g]x), ρ'[g]e(x))`.
pub fn equivariance_score<E: Explainer + ?Sized>(
    explainer: &E,
    group: &SymmetryGroup,
    x: &Signal,
    sim: Option<SimilarityKind>,
    action: OutputAction,
    mode: EstimatorMode,
) -> Result<MetricEstimate> {
    let reference = explainer.explain(x)?;
    let kind = sim.unwrap_or_else(|| SimilarityKind::for_explanation(&reference));
    if kind == SimilarityKind::Accuracy && action != OutputAction::Trivial {
        return Err(Error::InvalidArgument(
            "categorical explanations are only scored for invariance".into(),
        ));
    }
    average(group, mode, |g| {
        let moved = explainer.explain(&group.act(g, x)?)?;
        let expected = act_on_explanation(group, g, &reference, action)?;
        explanation_similarity(kind, &moved, &expected)
    })
}

/// Mean cosine between softmax outputs at `ρ[g]x` and at `x`.
pub fn model_invariance_score(model: &Model, group: &SymmetryGroup, x: &Signal, mode: EstimatorMode) -> Result<MetricEstimate> {
    let reference = softmax(&model.forward(x)?);
    average(group, mode, |g| {
        let moved = softmax(&model.forward(&group.act(g, x)?)?);
        similarity(SimilarityKind::Cosine, &moved, &reference)
    })
}

/// Largest `‖e(x) − e(x')‖₂` over `n` uniform draws `x'` from the
/// `ε`-ball in `ℓ∞` around `x`.
pub fn sensitivity_max<E: Explainer + ?Sized>(
    explainer: &E,
    x: &Signal,
    epsilon: f64,
    n_perturbations: usize,
    seed: u64,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let reference = explainer.explain(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perturbed: Vec<Signal> = (0..n_perturbations)
        .map(|_| {
            let v = x.values().iter().map(|a| a + rng.random_range(-epsilon..=epsilon)).collect();
            x.with_values(v)
        })
        .collect::<Result<_>>()?;
    let distances: Vec<f64> = perturbed
        .par_iter()
        .map(|xp| {
            let e = explainer.explain(xp)?;
            let (a, b) = (reference.as_slice(), e.as_slice());
            if a.len() != b.len() {
                return Err(Error::LengthMismatch {
                    left: a.len(),
                    right: b.len(),
                });
            }
            Ok(a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
        })
        .collect::<Result<_>>()?;
    Ok(distances.into_iter().fold(0.0, f64::max))
}

/// Pearson correlation coefficient.
pub fn correlate(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 3 {
        return Err(Error::InvalidArgument(format!("correlation needs ≥ 3 pairs, got {}", a.len())));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 {
        return Err(Error::ZeroVariance("first"));
    }
    if sbb == 0.0 {
        return Err(Error::ZeroVariance("second"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean and 95% normal-approximation half-width over per-example values.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

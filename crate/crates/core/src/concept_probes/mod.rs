//! Concept classifiers over model representations: linear CAVs and kernel
//! CARs. Their thresholded decisions form concept-presence explanations.

mod svm;

#[cfg(test)]
mod tests;

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::data_synth::Sample;
use crate::error::{Error, Result};
use crate::explainer::Explainer;
use crate::explanation::Explanation;
use crate::model_zoo::{Model, Tap};
use crate::symmetry::{OutputAction, Signal};
use crate::tensor_engine::Tensor;

pub use svm::{rbf, SmoConfig, Svm};

/// Examples per concept, split evenly between present and absent.
pub const DEFAULT_CONCEPT_SET_SIZE: usize = 200;
pub const CAR_PCA_DIM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Cav,
    Car,
}

impl ProbeKind {
    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::Cav => "cav",
            ProbeKind::Car => "car",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cav" => Ok(ProbeKind::Cav),
            "car" => Ok(ProbeKind::Car),
            _ => Err(Error::InvalidArgument(format!("unknown concept probe `{name}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavConfig {
    pub lr: f64,
    /// Stop once the epoch loss fails to improve by `tol` five epochs running.
    pub tol: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for CavConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            tol: 1e-3,
            epochs: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CarConfig {
    /// Defaults to `1/(k·var)` over the `k` projected features.
    pub gamma: Option<f64>,
    pub smo: SmoConfig,
}

/// Mean and leading principal directions, fitted on concept training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `[k, d]`, one unit component per row.
    pub components: DMatrix<f64>,
}

impl Pca {
    /// With fewer samples than dimensions the directions come from the
    /// eigenvectors of the `n × n` Gram matrix, and directions of zero
    /// variance are dropped, so `dim()` can be below `k`.
    pub fn fit(xs: &[Vec<f64>], k: usize) -> Result<Self> {
        let d = xs[0].len();
        let n = xs.len();
        let k = k.min(d);
        let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
        let centred = DMatrix::from_fn(n, d, |i, j| xs[i][j] - mean[j]);
        let dual = n < d;
        let eig = if dual {
            SymmetricEigen::new(&centred * centred.transpose() / n as f64)
        } else {
            SymmetricEigen::new(centred.transpose() * &centred / n as f64)
        };
        let m = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
        for &idx in order.iter().take(k) {
            let mut v: Vec<f64> = if dual {
                if eig.eigenvalues[idx] <= 1e-12 * top {
                    break;
                }
                (centred.transpose() * eig.eigenvectors.column(idx)).iter().copied().collect()
            } else {
                eig.eigenvectors.column(idx).iter().copied().collect()
            };
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            // Fix the sign so the largest-magnitude entry is positive.
            let pivot = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
            let scale = if v[pivot] < 0.0 { -1.0 / norm } else { 1.0 / norm };
            v.iter_mut().for_each(|a| *a *= scale);
            rows.push(v);
        }
        if rows.is_empty() {
            return Err(Error::DegenerateData("representations have no variance".into()));
        }
        let components = DMatrix::from_fn(rows.len(), d, |r, j| rows[r][j]);
        Ok(Self { mean, components })
    }

    pub fn dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|r| (0..x.len()).map(|j| self.components[(r, j)] * (x[j] - self.mean[j])).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConceptClassifier {
    Cav {
        weights: Vec<f64>,
        bias: f64,
        train_accuracy: f64,
    },
    Car {
        pca: Pca,
        svm: Svm,
        train_accuracy: f64,
    },
}

impl ConceptClassifier {
    pub fn kind(&self) -> ProbeKind {
        match self {
            ConceptClassifier::Cav { .. } => ProbeKind::Cav,
            ConceptClassifier::Car { .. } => ProbeKind::Car,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ConceptClassifier::Cav { weights, .. } => weights.len(),
            ConceptClassifier::Car { pca, .. } => pca.mean.len(),
        }
    }

    pub fn train_accuracy(&self) -> f64 {
        match self {
            ConceptClassifier::Cav { train_accuracy, .. } | ConceptClassifier::Car { train_accuracy, .. } => *train_accuracy,
        }
    }

    /// Real-valued decision; the concept is present iff it is positive.
    pub fn decision(&self, rep: &[f64]) -> Result<f64> {
        if rep.len() != self.input_dim() {
            return Err(Error::DimMismatch {
                op: "concept classifier",
                detail: format!("representation of length {} for a {}-dim probe", rep.len(), self.input_dim()),
            });
        }
        Ok(match self {
            ConceptClassifier::Cav { weights, bias, .. } => weights.iter().zip(rep).map(|(w, x)| w * x).sum::<f64>() + bias,
            ConceptClassifier::Car { pca, svm, .. } => svm.decision(&pca.project(rep)),
        })
    }

    pub fn predict(&self, rep: &[f64]) -> Result<bool> {
        Ok(self.decision(rep)? > 0.0)
    }
}

fn check_training_set(reps: &[Vec<f64>], labels: &[bool]) -> Result<()> {
    if reps.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: reps.len(),
            right: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos < 2 || neg < 2 {
        return Err(Error::DegenerateData(format!(
            "concept set needs at least 2 examples per class, got {pos} present and {neg} absent"
        )));
    }
    let d = reps[0].len();
    if d == 0 || reps.iter().any(|r| r.len() != d) {
        return Err(Error::DegenerateData("representations must share a nonzero dimension".into()));
    }
    if reps.iter().all(|r| r == &reps[0]) {
        return Err(Error::DegenerateData("all representations are identical".into()));
    }
    Ok(())
}

fn accuracy_of(c: &ConceptClassifier, reps: &[Vec<f64>], labels: &[bool]) -> Result<f64> {
    let mut hits = 0;
    for (r, &l) in reps.iter().zip(labels) {
        if c.predict(r)? == l {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Logistic regression by per-example SGD over shuffled epochs.
pub fn fit_cav(reps: &[Vec<f64>], labels: &[bool], cfg: CavConfig) -> Result<ConceptClassifier> {
    check_training_set(reps, labels)?;
    let d = reps[0].len();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..reps.len()).collect();
    let (mut best, mut stale) = (f64::INFINITY, 0);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let y = if labels[i] { 1.0 } else { -1.0 };
            let z: f64 = w.iter().zip(&reps[i]).map(|(a, x)| a * x).sum::<f64>() + b;
            // log(1 + exp(−yz)), computed stably.
            let m = -y * z;
            total += if m > 0.0 { m + (-m).exp().ln_1p() } else { m.exp().ln_1p() };
            let g = -y / (1.0 + (y * z).exp());
            for (a, x) in w.iter_mut().zip(&reps[i]) {
                *a -= cfg.lr * g * x;
            }
            b -= cfg.lr * g;
        }
        let loss = total / reps.len() as f64;
        if loss > best - cfg.tol {
            stale += 1;
            if stale >= 5 {
                break;
            }
        } else {
            stale = 0;
        }
        best = best.min(loss);
    }
    let mut c = ConceptClassifier::Cav {
        weights: w,
        bias: b,
        train_accuracy: 0.0,
    };
    let acc = accuracy_of(&c, reps, labels)?;
    if let ConceptClassifier::Cav { train_accuracy, .. } = &mut c {
        *train_accuracy = acc;
    }
    Ok(c)
}

/// Default RBF width `1/(k·var)` over projected features.
pub fn default_gamma(projected: &[Vec<f64>]) -> f64 {
    let all: Vec<f64> = projected.iter().flatten().copied().collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
    let k = projected[0].len() as f64;
    if var > 0.0 {
        1.0 / (k * var)
    } else {
        1.0
    }
}

/// PCA to at most ten dimensions, then an RBF support vector classifier.
pub fn fit_car(reps: &[Vec<f64>], labels: &[bool], cfg: CarConfig) -> Result<ConceptClassifier> {
    check_training_set(reps, labels)?;
    let pca = Pca::fit(reps, CAR_PCA_DIM)?;
    let projected: Vec<Vec<f64>> = reps.iter().map(|r| pca.project(r)).collect();
    let gamma = cfg.gamma.unwrap_or_else(|| default_gamma(&projected));
    let svm = Svm::fit(&projected, labels, gamma, cfg.smo)?;
    let mut c = ConceptClassifier::Car {
        pca,
        svm,
        train_accuracy: 0.0,
    };
    let acc = accuracy_of(&c, reps, labels)?;
    if let ConceptClassifier::Car { train_accuracy, .. } = &mut c {
        *train_accuracy = acc;
    }
    Ok(c)
}

/// Thresholded decision of every classifier.
pub fn predict_concepts(classifiers: &[ConceptClassifier], rep: &[f64]) -> Result<Vec<bool>> {
    classifiers.iter().map(|c| c.predict(rep)).collect()
}

/// Balanced concept sets: for each concept, up to `size/2` samples where it
/// is present and as many where it is absent, in sample order.
pub fn concept_sets(samples: &[Sample], size: usize) -> Result<Vec<(Vec<Signal>, Vec<bool>)>> {
    let n_concepts = samples.first().map_or(0, |s| s.concepts.len());
    if n_concepts == 0 {
        return Err(Error::DegenerateData("samples carry no concepts".into()));
    }
    (0..n_concepts)
        .map(|c| {
            let half = size / 2;
            let pos = samples.iter().filter(|s| s.concepts[c]).take(half);
            let neg = samples.iter().filter(|s| !s.concepts[c]).take(half);
            let (xs, ys) = pos.chain(neg).map(|s| (s.x.clone(), s.concepts[c])).unzip();
            Ok((xs, ys))
        })
        .collect()
}

/// Concept classifiers on one tap of one model.
pub struct ConceptProbe<'a> {
    model: &'a Model,
    tap: Tap,
    classifiers: Vec<ConceptClassifier>,
}

impl<'a> ConceptProbe<'a> {
    pub fn new(model: &'a Model, tap: Tap, classifiers: Vec<ConceptClassifier>) -> Result<Self> {
        if classifiers.is_empty() {
            return Err(Error::InvalidArgument("a probe needs at least one concept".into()));
        }
        Ok(Self { model, tap, classifiers })
    }

    /// Fits one classifier per concept set on the model's `tap`.
    pub fn fit(
        model: &'a Model,
        tap: Tap,
        kind: ProbeKind,
        sets: &[(Vec<Signal>, Vec<bool>)],
        seed: u64,
    ) -> Result<Self> {
        let classifiers = sets
            .par_iter()
            .enumerate()
            .map(|(c, (xs, ys))| {
                let reps: Vec<Vec<f64>> = xs
                    .iter()
                    .map(|x| Ok(model.representation(tap, x)?.into_data()))
                    .collect::<Result<_>>()?;
                match kind {
                    ProbeKind::Cav => fit_cav(
                        &reps,
                        ys,
                        CavConfig {
                            seed: seed.wrapping_add(c as u64),
                            ..CavConfig::default()
                        },
                    ),
                    ProbeKind::Car => fit_car(&reps, ys, CarConfig::default()),
                }
                .map_err(|e| e.context(format!("concept {c}")))
            })
            .collect::<Result<_>>()?;
        Self::new(model, tap, classifiers)
    }

    pub fn tap(&self) -> Tap {
        self.tap
    }

    pub fn classifiers(&self) -> &[ConceptClassifier] {
        &self.classifiers
    }

    pub fn scores(&self, x: &Signal) -> Result<Vec<f64>> {
        let rep = self.model.representation(self.tap, x)?.into_data();
        self.classifiers.iter().map(|c| c.decision(&rep)).collect()
    }

    pub fn to_container(&self) -> Container {
        let mut out = Container::new("concept_probe")
            .with_meta("tap", self.tap.name())
            .with_meta("model", self.model.kind().name())
            .with_meta("concepts", self.classifiers.len());
        for (i, c) in self.classifiers.iter().enumerate() {
            out = out.with_meta(&format!("c{i}.kind"), c.kind().name());
            out = out.with_meta(&format!("c{i}.train_accuracy"), c.train_accuracy());
            match c {
                ConceptClassifier::Cav { weights, bias, .. } => {
                    out.push_tensor(format!("c{i}.weights"), Tensor::vector(weights.clone()));
                    out.push_tensor(format!("c{i}.bias"), Tensor::scalar(*bias));
                }
                ConceptClassifier::Car { pca, svm, .. } => {
                    out = out.with_meta(&format!("c{i}.gamma"), svm.gamma);
                    let (k, d) = pca.components.shape();
                    let rows: Vec<f64> = (0..k).flat_map(|r| (0..d).map(move |j| (r, j))).map(|(r, j)| pca.components[(r, j)]).collect();
                    out.push_tensor(format!("c{i}.pca_mean"), Tensor::vector(pca.mean.clone()));
                    out.push_tensor(format!("c{i}.pca_components"), Tensor::new(vec![k, d], rows).expect("component shape"));
                    let sv: Vec<f64> = svm.support.iter().flatten().copied().collect();
                    out.push_tensor(format!("c{i}.support"), Tensor::new(vec![svm.support.len(), k], sv).expect("support shape"));
                    out.push_tensor(format!("c{i}.coef"), Tensor::vector(svm.coef.clone()));
                    out.push_tensor(format!("c{i}.bias"), Tensor::scalar(svm.bias));
                }
            }
        }
        out
    }

    pub fn from_container(model: &'a Model, c: &Container) -> Result<Self> {
        if c.kind != "concept_probe" {
            return Err(Error::Format(format!("expected a concept probe, found `{}`", c.kind)));
        }
        let tap = Tap::from_name(c.meta("tap")?)?;
        if c.meta("model")? != model.kind().name() {
            return Err(Error::Format(format!(
                "probe was fitted on {}, not {}",
                c.meta("model")?,
                model.kind().name()
            )));
        }
        let n: usize = c.meta_parse("concepts")?;
        let classifiers = (0..n)
            .map(|i| {
                let t = |name: &str| c.tensor(&format!("c{i}.{name}"));
                let scalar = |name: &str| -> Result<f64> {
                    t(name)?.item().ok_or_else(|| Error::Format(format!("c{i}.{name} is not a scalar")))
                };
                let train_accuracy = c.meta_parse(&format!("c{i}.train_accuracy"))?;
                Ok(match ProbeKind::from_name(c.meta(&format!("c{i}.kind"))?)? {
                    ProbeKind::Cav => ConceptClassifier::Cav {
                        weights: t("weights")?.data().to_vec(),
                        bias: scalar("bias")?,
                        train_accuracy,
                    },
                    ProbeKind::Car => {
                        let comp = t("pca_components")?;
                        let (k, d) = match comp.dims() {
                            [k, d] => (*k, *d),
                            other => return Err(Error::Format(format!("component dims {other:?}"))),
                        };
                        let support = t("support")?;
                        ConceptClassifier::Car {
                            pca: Pca {
                                mean: t("pca_mean")?.data().to_vec(),
                                components: DMatrix::from_row_slice(k, d, comp.data()),
                            },
                            svm: Svm {
                                support: support.data().chunks(k.max(1)).map(<[f64]>::to_vec).collect(),
                                coef: t("coef")?.data().to_vec(),
                                bias: scalar("bias")?,
                                gamma: c.meta_parse(&format!("c{i}.gamma"))?,
                            },
                            train_accuracy,
                        }
                    }
                })
            })
            .collect::<Result<_>>()?;
        Self::new(model, tap, classifiers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(model: &'a Model, path: &Path) -> Result<Self> {
        Self::from_container(model, &Container::load(path)?)
    }
}

impl Explainer for ConceptProbe<'_> {
    fn name(&self) -> String {
        let kind = self.classifiers[0].kind().name();
        format!("{kind}_{}", self.tap.name())
    }

    fn output_action(&self) -> OutputAction {
        OutputAction::Trivial
    }

    /// Pre-threshold decisions; presence is their sign.
    fn explain(&self, x: &Signal) -> Result<Explanation> {
        Ok(Explanation::Concepts(self.scores(x)?))
    }
}

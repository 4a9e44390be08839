use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, Checkpoint, Model};
use crate::data_synth::Sample;
use crate::error::{Error, Result};
use crate::symmetry::{GroupKind, SymmetryGroup};
use crate::tensor_engine::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub checkpoint_every: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Replace each sample by a random group transform of itself once per
    /// epoch.
    pub augment: Option<GroupKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            lr: 1e-3,
            weight_decay: 1e-5,
            epochs: 30,
            checkpoint_every: 5,
            batch_size: 32,
            seed: 0,
            augment: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Initialisation first, then every `checkpoint_every` epochs and the last.
    pub checkpoints: Vec<Checkpoint>,
    pub final_train_loss: f64,
    pub test_accuracy: Option<f64>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

pub fn train(model: &mut Model, train: &[Sample], test: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if let Some(s) = train.iter().chain(test).find(|s| s.label >= model.classes()) {
        return Err(Error::InvalidArgument(format!(
            "label {} out of range for {} classes",
            s.label,
            model.classes()
        )));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) || cfg.batch_size == 0 || cfg.checkpoint_every == 0 {
        return Err(Error::InvalidArgument(format!("bad training config {cfg:?}")));
    }

    let snapshot = |m: &Model, epoch| Checkpoint {
        epoch,
        parameters: m.parameters().to_vec(),
        optimizer_lr: cfg.lr,
    };
    let mut checkpoints = vec![snapshot(model, 0)];
    let mut adam = Adam {
        m: model.parameters().iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
        v: model.parameters().iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
        step: 0,
    };
    let mut final_loss = f64::NAN;

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            let current = &*model;
            let per_example: Vec<(f64, Vec<Tensor>)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &train[i];
                    match cfg.augment {
                        Some(template) => {
                            let group = SymmetryGroup::for_signal(template, &s.x)?;
                            let seed = cfg.seed ^ ((epoch as u64) << 32) ^ i as u64;
                            let g = group.sample(seed, 1, false)?.remove(0);
                            current.loss_and_gradients(&group.act(&g, &s.x)?, s.label)
                        }
                        None => current.loss_and_gradients(&s.x, s.label),
                    }
                })
                .collect::<Result<_>>()?;

            let mut grads: Vec<Vec<f64>> = model.parameters().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            let scale = 1.0 / batch.len() as f64;
            for (loss, g) in &per_example {
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, loss: *loss });
                }
                epoch_loss += loss;
                for (acc, t) in grads.iter_mut().zip(g) {
                    for (a, v) in acc.iter_mut().zip(t.data()) {
                        *a += v * scale;
                    }
                }
            }
            let mut params = model.parameters().to_vec();
            adam.step += 1;
            for (k, (_, p)) in params.iter_mut().enumerate() {
                let p = p.data_mut();
                for j in 0..p.len() {
                    let g = grads[k][j] + cfg.weight_decay * p[j];
                    match cfg.optimizer {
                        Optimizer::Sgd => p[j] -= cfg.lr * g,
                        Optimizer::Adam => {
                            let m = &mut adam.m[k][j];
                            let v = &mut adam.v[k][j];
                            *m = BETA1 * *m + (1.0 - BETA1) * g;
                            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                            let mh = *m / (1.0 - BETA1.powi(adam.step));
                            let vh = *v / (1.0 - BETA2.powi(adam.step));
                            p[j] -= cfg.lr * mh / (vh.sqrt() + EPS);
                        }
                    }
                }
            }
            if params.iter().any(|(_, t)| !t.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    loss: f64::NAN,
                });
            }
            model.set_parameters(params)?;
        }
        final_loss = epoch_loss / train.len() as f64;
        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
            checkpoints.push(snapshot(model, epoch));
        }
    }

    let test_accuracy = if test.is_empty() {
        None
    } else {
        Some(accuracy(model, test)?)
    };
    Ok(TrainReport {
        checkpoints,
        final_train_loss: final_loss,
        test_accuracy,
    })
}

pub fn accuracy(model: &Model, samples: &[Sample]) -> Result<f64> {
    let correct: Vec<bool> = samples
        .par_iter()
        .map(|s| Ok(argmax(&model.forward(&s.x)?) == s.label))
        .collect::<Result<_>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / samples.len().max(1) as f64)
}

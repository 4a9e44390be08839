use crate::error::{Error, Result};
use crate::tensor_engine::softmax;

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexFit {
    /// Convex weights over the training rows.
    pub weights: Vec<f64>,
    /// `‖rep_x − Σ wₙ rep_train[n]‖` at the returned weights.
    pub residual: f64,
    /// False when the objective rose during the last tenth of the epochs.
    pub converged: bool,
}

/// Gram matrix `G[n][m] = rowₙ·rowₘ` of the training representations.
pub fn gram(rep_train: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rep_train
        .iter()
        .map(|a| rep_train.iter().map(|b| dot(a, b)).collect())
        .collect()
}

/// Four independent accumulators so the loop vectorizes; the summation
/// order is fixed, so results stay deterministic.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0; 4];
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

fn check(rep_train: &[Vec<f64>], rep_x: &[f64]) -> Result<()> {
    let d = rep_x.len();
    if d == 0 {
        return Err(Error::InvalidArgument("representation dimension must be at least 1".into()));
    }
    if rep_train.is_empty() {
        return Err(Error::InvalidArgument("no training representations".into()));
    }
    if let Some(r) = rep_train.iter().find(|r| r.len() != d) {
        return Err(Error::LengthMismatch {
            left: d,
            right: r.len(),
        });
    }
    Ok(())
}

/// Convex weights reconstructing `rep_x` from the rows of `rep_train`,
/// fitted by Adam on softmax logits started from uniform weights.
pub fn simplex_weights(rep_train: &[Vec<f64>], rep_x: &[f64], epochs: usize, lr: f64) -> Result<SimplexFit> {
    check(rep_train, rep_x)?;
    simplex_weights_with_gram(rep_train, &gram(rep_train), rep_x, epochs, lr)
}

/// [`simplex_weights`] with a precomputed [`gram`] matrix. The objective
/// `‖rep_x − Σ wₙ rowₙ‖²` is expanded as `xᵀx − 2wᵀb + wᵀGw` with
/// `bₙ = rowₙ·x`, so each epoch costs `O(n²)` whatever the dimension.
pub fn simplex_weights_with_gram(
    rep_train: &[Vec<f64>],
    gram: &[Vec<f64>],
    rep_x: &[f64],
    epochs: usize,
    lr: f64,
) -> Result<SimplexFit> {
    check(rep_train, rep_x)?;
    let n = rep_train.len();
    if gram.len() != n || gram.iter().any(|g| g.len() != n) {
        return Err(Error::LengthMismatch {
            left: n,
            right: gram.len(),
        });
    }
    let b: Vec<f64> = rep_train.iter().map(|row| dot(row, rep_x)).collect();
    let xx = dot(rep_x, rep_x);
    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut logits = vec![0.0; n];
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let tail_start = epochs - epochs / 10;
    let mut history = Vec::with_capacity(epochs / 10 + 1);
    let objective = |w: &[f64], gw: &[f64]| xx - 2.0 * dot(w, &b) + dot(w, gw);
    let (mut w, mut gw, mut grad) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for t in 1..=epochs {
        softmax_into(&logits, &mut w);
        for (g, row) in gw.iter_mut().zip(gram) {
            *g = dot(row, &w);
        }
        if t > tail_start {
            history.push(objective(&w, &gw));
        }
        // dL/dwₙ = 2((Gw)ₙ − bₙ), then through the softmax Jacobian.
        for ((gr, g), bn) in grad.iter_mut().zip(&gw).zip(&b) {
            *gr = 2.0 * (g - bn);
        }
        let wg = dot(&w, &grad);
        let (c1, c2) = (1.0 - beta1.powi(t as i32), 1.0 - beta2.powi(t as i32));
        for i in 0..n {
            let g = w[i] * (grad[i] - wg);
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            logits[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
    }
    let weights = softmax(&logits);
    let gw: Vec<f64> = gram.iter().map(|row| dot(row, &weights)).collect();
    history.push(objective(&weights, &gw));
    let mut r = rep_x.to_vec();
    for (wn, row) in weights.iter().zip(rep_train) {
        for (ri, xi) in r.iter_mut().zip(row) {
            *ri -= wn * xi;
        }
    }
    let residual = dot(&r, &r).sqrt();
    let scale = 1e-9 * (1.0 + xx);
    let converged = history.windows(2).all(|p| p[1] <= p[0] + scale);
    Ok(SimplexFit {
        weights,
        residual,
        converged,
    })
}

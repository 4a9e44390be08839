//! Soft-margin RBF support vector classifier trained by SMO with
//! second-order working-set selection.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoConfig {
    pub c_reg: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SmoConfig {
    fn default() -> Self {
        Self {
            c_reg: 1.0,
            tol: 1e-3,
            max_iter: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Svm {
    pub support: Vec<Vec<f64>>,
    /// `αᵢ yᵢ` for each support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).exp()
}

impl Svm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, c)| c * rbf(s, x, self.gamma))
            .sum::<f64>()
            + self.bias
    }

    pub fn fit(xs: &[Vec<f64>], labels: &[bool], gamma: f64, cfg: SmoConfig) -> Result<Self> {
        let n = xs.len();
        let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let k: Vec<Vec<f64>> = xs.iter().map(|a| xs.iter().map(|b| rbf(a, b, gamma)).collect()).collect();
        let c = cfg.c_reg;
        let mut alpha = vec![0.0; n];
        // G = Qα − e with Q_ij = yᵢyⱼK_ij.
        let mut grad = vec![-1.0; n];
        let up = |t: usize, a: &[f64]| (y[t] > 0.0 && a[t] < c) || (y[t] < 0.0 && a[t] > 0.0);
        let low = |t: usize, a: &[f64]| (y[t] > 0.0 && a[t] > 0.0) || (y[t] < 0.0 && a[t] < c);
        let mut iter = 0;
        loop {
            let mut i = usize::MAX;
            let mut gmax = f64::NEG_INFINITY;
            for t in 0..n {
                if up(t, &alpha) && -y[t] * grad[t] > gmax {
                    gmax = -y[t] * grad[t];
                    i = t;
                }
            }
            let mut gmin = f64::INFINITY;
            let mut j = usize::MAX;
            let mut best = f64::INFINITY;
            for t in 0..n {
                if !low(t, &alpha) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                if i != usize::MAX && v < gmax {
                    let b = gmax - v;
                    let a = (k[i][i] + k[t][t] - 2.0 * k[i][t]).max(1e-12);
                    let obj = -(b * b) / a;
                    if obj < best {
                        best = obj;
                        j = t;
                    }
                }
            }
            if i == usize::MAX || j == usize::MAX || gmax - gmin < cfg.tol {
                break;
            }
            if iter >= cfg.max_iter {
                return Err(Error::SmoNotConverged {
                    iterations: iter,
                    gap: gmax - gmin,
                });
            }
            iter += 1;

            let (ai, aj) = (alpha[i], alpha[j]);
            let quad = (k[i][i] + k[j][j] - 2.0 * k[i][j]).max(1e-12);
            if y[i] != y[j] {
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = ai - aj;
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 && alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                } else if diff <= 0.0 && alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 && alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                } else if diff <= 0.0 && alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let delta = (grad[i] - grad[j]) / quad;
                let sum = ai + aj;
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c && alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                } else if sum <= c && alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c && alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                } else if sum <= c && alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
            for t in 0..n {
                grad[t] += y[t] * (y[i] * k[t][i] * di + y[j] * k[t][j] * dj);
            }
        }

        // Bias from free vectors, else the midpoint of the feasible interval.
        let (mut sum, mut free) = (0.0, 0);
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in 0..n {
            let yg = y[t] * grad[t];
            let at_upper = alpha[t] >= c;
            let at_lower = alpha[t] <= 0.0;
            if at_upper || at_lower {
                if (at_upper && y[t] < 0.0) || (at_lower && y[t] > 0.0) {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                sum += yg;
                free += 1;
            }
        }
        let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };
        let bias = -rho;

        let (support, coef) = (0..n)
            .filter(|&t| alpha[t] > 0.0)
            .map(|t| (xs[t].clone(), alpha[t] * y[t]))
            .unzip();
        Ok(Self {
            support,
            coef,
            bias,
            gamma,
        })
    }
}

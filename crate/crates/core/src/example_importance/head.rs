use crate::error::{Error, Result};
use crate::model_zoo::Model;
use crate::tensor_engine::{softmax, Tensor};

/// The output layer `z = hᵀW + b` under softmax cross-entropy. Parameter
/// vectors are laid out as `W` row-major followed by `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    w: Vec<f64>,
    b: Vec<f64>,
    hidden: usize,
}

impl LinearHead {
    /// `w` is `[hidden, classes]`, `b` is `[classes]`.
    pub fn new(w: &Tensor, b: &Tensor) -> Result<Self> {
        let (hidden, classes) = match w.dims() {
            [h, k] => (*h, *k),
            d => {
                return Err(Error::DimMismatch {
                    op: "linear head",
                    detail: format!("weight dims {d:?}"),
                })
            }
        };
        if b.dims() != [classes] {
            return Err(Error::DimMismatch {
                op: "linear head",
                detail: format!("bias dims {:?} for {classes} classes", b.dims()),
            });
        }
        Ok(Self {
            w: w.data().to_vec(),
            b: b.data().to_vec(),
            hidden,
        })
    }

    pub fn from_model(model: &Model) -> Result<Self> {
        Self::new(model.parameter("out.w")?, model.parameter("out.b")?)
    }

    pub fn classes(&self) -> usize {
        self.b.len()
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn dim(&self) -> usize {
        (self.hidden + 1) * self.classes()
    }

    fn check(&self, rep: &[f64]) -> Result<()> {
        if rep.len() != self.hidden {
            return Err(Error::LengthMismatch {
                left: self.hidden,
                right: rep.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, rep: &[f64]) -> Result<Vec<f64>> {
        self.check(rep)?;
        let k = self.classes();
        let mut z = self.b.clone();
        for (i, h) in rep.iter().enumerate() {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc += h * self.w[i * k + c];
            }
        }
        Ok(z)
    }

    pub fn probabilities(&self, rep: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(rep)?))
    }

    pub fn loss(&self, rep: &[f64], y: usize) -> Result<f64> {
        let p = self.probabilities(rep)?;
        p.get(y)
            .map(|py| -py.ln())
            .ok_or_else(|| Error::InvalidArgument(format!("label {y} ≥ class count {}", self.classes())))
    }

    /// `∂L/∂W = h (p − e_y)ᵀ`, `∂L/∂b = p − e_y`.
    pub fn loss_gradient(&self, rep: &[f64], y: usize) -> Result<Vec<f64>> {
        let k = self.classes();
        if y >= k {
            return Err(Error::InvalidArgument(format!("label {y} ≥ class count {k}")));
        }
        let mut delta = self.probabilities(rep)?;
        delta[y] -= 1.0;
        let mut g = Vec::with_capacity(self.dim());
        for h in rep {
            g.extend(delta.iter().map(|d| h * d));
        }
        g.extend_from_slice(&delta);
        Ok(g)
    }

    /// `H v` for the Hessian of the mean loss over `reps`, given their
    /// softmax outputs `probs`.
    pub fn hessian_vector_product(&self, reps: &[Vec<f64>], probs: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        let k = self.classes();
        let n = reps.len() as f64;
        let mut out = vec![0.0; self.dim()];
        let mut u = vec![0.0; k];
        for (h, p) in reps.iter().zip(probs) {
            // u = J v, the change in logits.
            u.copy_from_slice(&v[self.hidden * k..]);
            for (i, hi) in h.iter().enumerate() {
                for c in 0..k {
                    u[c] += hi * v[i * k + c];
                }
            }
            // s = (diag(p) − p pᵀ) u
            let pu: f64 = p.iter().zip(&u).map(|(a, b)| a * b).sum();
            let s: Vec<f64> = p.iter().zip(&u).map(|(pc, uc)| pc * (uc - pu)).collect();
            for (i, hi) in h.iter().enumerate() {
                for c in 0..k {
                    out[i * k + c] += hi * s[c] / n;
                }
            }
            for c in 0..k {
                out[self.hidden * k + c] += s[c] / n;
            }
        }
        out
    }

    /// Solves `(H + λI) s = rhs` by conjugate gradients.
    pub fn solve_damped(&self, reps: &[Vec<f64>], probs: &[Vec<f64>], rhs: &[f64], damping: f64) -> Result<Vec<f64>> {
        conjugate_gradient(
            |v| {
                let mut hv = self.hessian_vector_product(reps, probs, v);
                for (o, vi) in hv.iter_mut().zip(v) {
                    *o += damping * vi;
                }
                hv
            },
            rhs,
            1e-10,
            20 * rhs.len().max(10),
        )
    }
}

/// Conjugate gradients for a symmetric positive-definite operator, stopping
/// when `‖r‖ ≤ tol·‖rhs‖`.
pub fn conjugate_gradient<F>(apply: F, rhs: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let target = tol * norm(rhs);
    let mut x = vec![0.0; rhs.len()];
    let mut r = rhs.to_vec();
    if norm(&r) <= target {
        return Ok(x);
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::InvalidArgument("operator is not positive definite".into()));
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_next = dot(&r, &r);
        if rr_next.sqrt() <= target {
            return Ok(x);
        }
        let beta = rr_next / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
    }
    Err(Error::CgNotConverged {
        iterations: max_iter,
        residual: rr.sqrt() / norm(rhs),
    })
}

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const LADDER: usize = 5;

/// Maximum relative error between the tape gradient of a scalar map and
/// central finite differences:
/// `max_i |analytic_i − fd_i| / (|fd_i| + 1e-8)`.
///
/// `step` is the largest of five steps tried, each a tenth of the last; see
/// the ladder below for how one is chosen.
pub fn finite_difference_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    finite_difference_check_coords(f, x, step, &coords)
}

/// As [`finite_difference_check`], restricted to the listed coordinates.
pub fn finite_difference_check_coords<F>(f: F, x: &Tensor, step: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(t.clone());
        let out = f(&mut tape, v)?;
        tape.value(out)
            .item()
            .ok_or_else(|| Error::NonScalarOutput(tape.dims(out).to_vec()))
    };

    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    let analytic = tape.backward(out)?.wrt(v);

    let base = eval(x)?;
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        let mut central = Vec::with_capacity(LADDER);
        let mut h = step;
        for _ in 0..LADDER {
            probe.data_mut()[i] = orig + h;
            let plus = eval(&probe)?;
            probe.data_mut()[i] = orig - h;
            let minus = eval(&probe)?;
            central.push((plus - minus) / (2.0 * h));
            h /= 10.0;
        }
        probe.data_mut()[i] = orig;
        // Truncation shrinks and roundoff grows down the ladder, and a pair
        // straddling a kink disagrees. The larger step of the most consistent
        // adjacent pair is off by about their difference plus its roundoff.
        let roundoff = |k: usize| f64::EPSILON * base.abs().max(1.0) / (step * 0.1f64.powi(k as i32));
        let best = (0..LADDER - 1)
            .min_by(|&a, &b| {
                let e = |k: usize| (central[k] - central[k + 1]).abs() + roundoff(k);
                e(a).total_cmp(&e(b))
            })
            .unwrap_or(0);
        let fd = central[best];
        let err = (analytic.data()[i] - fd).abs() / (fd.abs() + 1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

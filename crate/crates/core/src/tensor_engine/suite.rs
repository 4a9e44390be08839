//! Finite-difference checks of every primitive on random instances.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::finite_difference_check;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

fn rand_tensor(rng: &mut ChaCha8Rng, dims: Vec<usize>) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("matching length")
}

/// `Σ out ⊙ r` for a fixed random `r`, turning any op into a scalar map.
fn project(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let dims = tape.dims(v).to_vec();
    let r = tape.constant(rand_tensor(&mut rng, dims));
    let m = tape.mul(v, r)?;
    let n = tape.value(m).len();
    let flat = tape.reshape(m, vec![n])?;
    tape.sum_over_axis(flat, 0)
}

/// One random instance of each primitive, as a scalar map of its input.
type ScalarMap = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

/// Name, largest finite-difference step, and an instance generator.
type OpCase = (&'static str, f64, Box<dyn Fn(&mut ChaCha8Rng) -> (Tensor, ScalarMap)>);

fn op_cases() -> Vec<OpCase> {
    // Piecewise-linear ops are exact within a linear region, so a tiny step
    // avoids straddling kinks; smooth ops use 1e-3.
    let pl = 1e-6;
    let smooth = 1e-3;
    vec![
        ("add", smooth, Box::new(|rng| {
            let other = rand_tensor(rng, vec![4, 3]);
            (rand_tensor(rng, vec![4, 3]), Box::new(move |t: &mut Tape, x| {
                let o = t.constant(other.clone());
                let y = t.add(x, o)?;
                project(t, y, 1)
            }))
        })),
        ("sub", smooth, Box::new(|rng| {
            let other = rand_tensor(rng, vec![4, 3]);
            (rand_tensor(rng, vec![4, 3]), Box::new(move |t: &mut Tape, x| {
                let o = t.constant(other.clone());
                let y = t.sub(o, x)?;
                project(t, y, 2)
            }))
        })),
        ("mul", smooth, Box::new(|rng| {
            let other = rand_tensor(rng, vec![5]);
            (rand_tensor(rng, vec![5]), Box::new(move |t: &mut Tape, x| {
                let o = t.constant(other.clone());
                let y = t.mul(x, o)?;
                let y = t.mul(y, x)?;
                project(t, y, 3)
            }))
        })),
        ("scale", smooth, Box::new(|rng| {
            (rand_tensor(rng, vec![5]), Box::new(|t: &mut Tape, x| {
                let y = t.scale(x, -2.5);
                project(t, y, 4)
            }))
        })),
        ("matmul", smooth, Box::new(|rng| {
            let left = rand_tensor(rng, vec![3, 4]);
            let right = rand_tensor(rng, vec![2, 3]);
            (rand_tensor(rng, vec![4, 2]), Box::new(move |t: &mut Tape, x| {
                let l = t.constant(left.clone());
                let r = t.constant(right.clone());
                let y = t.matmul(l, x)?;
                let y = t.matmul(r, y)?;
                project(t, y, 5)
            }))
        })),
        ("circular_conv1d/input", smooth, Box::new(|rng| {
            let k = rand_tensor(rng, vec![3, 2, 3]);
            (rand_tensor(rng, vec![7, 2]), Box::new(move |t: &mut Tape, x| {
                let kv = t.constant(k.clone());
                let y = t.circular_conv1d(x, kv)?;
                project(t, y, 6)
            }))
        })),
        ("circular_conv1d/kernel", smooth, Box::new(|rng| {
            let inp = rand_tensor(rng, vec![6, 2]);
            (rand_tensor(rng, vec![3, 2, 3]), Box::new(move |t: &mut Tape, k| {
                let xv = t.constant(inp.clone());
                let y = t.circular_conv1d(xv, k)?;
                project(t, y, 7)
            }))
        })),
        ("circular_conv2d/input", smooth, Box::new(|rng| {
            let k = rand_tensor(rng, vec![2, 2, 3, 3]);
            (rand_tensor(rng, vec![4, 5, 2]), Box::new(move |t: &mut Tape, x| {
                let kv = t.constant(k.clone());
                let y = t.circular_conv2d(x, kv)?;
                project(t, y, 8)
            }))
        })),
        ("circular_conv2d/kernel", smooth, Box::new(|rng| {
            let inp = rand_tensor(rng, vec![4, 4, 2]);
            (rand_tensor(rng, vec![2, 2, 3, 3]), Box::new(move |t: &mut Tape, k| {
                let xv = t.constant(inp.clone());
                let y = t.circular_conv2d(xv, k)?;
                project(t, y, 9)
            }))
        })),
        ("relu", pl, Box::new(|rng| {
            (rand_tensor(rng, vec![9]), Box::new(|t: &mut Tape, x| {
                let y = t.relu(x);
                project(t, y, 10)
            }))
        })),
        ("leaky_relu", pl, Box::new(|rng| {
            (rand_tensor(rng, vec![9]), Box::new(|t: &mut Tape, x| {
                let y = t.leaky_relu(x);
                project(t, y, 11)
            }))
        })),
        ("tanh", smooth, Box::new(|rng| {
            (rand_tensor(rng, vec![9]), Box::new(|t: &mut Tape, x| {
                let y = t.tanh(x);
                project(t, y, 12)
            }))
        })),
        ("max_over_axis", pl, Box::new(|rng| {
            (rand_tensor(rng, vec![3, 5, 2]), Box::new(|t: &mut Tape, x| {
                let y = t.max_over_axis(x, 1)?;
                project(t, y, 13)
            }))
        })),
        ("mean_over_axis", smooth, Box::new(|rng| {
            (rand_tensor(rng, vec![3, 5, 2]), Box::new(|t: &mut Tape, x| {
                let y = t.mean_over_axis(x, 0)?;
                project(t, y, 14)
            }))
        })),
        ("sum_over_axis", smooth, Box::new(|rng| {
            (rand_tensor(rng, vec![3, 5, 2]), Box::new(|t: &mut Tape, x| {
                let y = t.sum_over_axis(x, 2)?;
                project(t, y, 15)
            }))
        })),
        ("gather_rows", smooth, Box::new(|rng| {
            let mut idx: Vec<usize> = (0..5).collect();
            idx.shuffle(rng);
            idx.push(idx[0]);
            (rand_tensor(rng, vec![5, 2]), Box::new(move |t: &mut Tape, x| {
                let y = t.gather_rows(x, idx.clone())?;
                project(t, y, 16)
            }))
        })),
        ("sub_max_over_set_axis", pl, Box::new(|rng| {
            (rand_tensor(rng, vec![6, 3]), Box::new(|t: &mut Tape, x| {
                let y = t.sub_max_over_set_axis(x)?;
                project(t, y, 17)
            }))
        })),
        ("softmax_cross_entropy", smooth, Box::new(|rng| {
            let target = rng.random_range(0..4);
            (rand_tensor(rng, vec![4]), Box::new(move |t: &mut Tape, x| {
                let y = t.scale(x, 3.0);
                t.softmax_cross_entropy(y, target)
            }))
        })),
        ("reshape", smooth, Box::new(|rng| {
            (rand_tensor(rng, vec![2, 6]), Box::new(|t: &mut Tape, x| {
                let y = t.reshape(x, vec![3, 4])?;
                project(t, y, 18)
            }))
        })),
        ("broadcast_rows", smooth, Box::new(|rng| {
            (rand_tensor(rng, vec![1, 4]), Box::new(|t: &mut Tape, x| {
                let y = t.broadcast_rows(x, 3)?;
                project(t, y, 19)
            }))
        })),
    ]
}

/// Worst relative gradient error of each primitive over the seeded instances.
pub fn primitive_gradient_errors(seeds: Range<u64>) -> Result<Vec<(&'static str, f64)>> {
    op_cases()
        .into_iter()
        .map(|(name, step, make)| {
            let mut worst: f64 = 0.0;
            for seed in seeds.clone() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (x, f) = make(&mut rng);
                worst = worst.max(finite_difference_check(|t, v| f(t, v), &x, step)?);
            }
            Ok((name, worst))
        })
        .collect()
}

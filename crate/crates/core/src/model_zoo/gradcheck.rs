use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Model;
use crate::error::Result;
use crate::symmetry::Signal;
use crate::tensor_engine::{finite_difference_check_coords, Tape, Tensor, Var};

/// Largest finite-difference step for model checks; see
/// [`finite_difference_check`](crate::tensor_engine::finite_difference_check).
pub const MODEL_FD_STEP: f64 = 1e-3;

impl Model {
    /// Worst relative error of the loss gradient with respect to the input
    /// and to the parameters, each checked on `n_coords` random coordinates.
    pub fn gradient_errors(&self, x: &Signal, label: usize, n_coords: usize, seed: u64) -> Result<(f64, f64)> {
        self.check_input(x)?;
        let shape = x.shape();
        let mut dims = shape.axes().to_vec();
        dims.push(shape.channels());
        let xt = Tensor::new(dims, x.values().to_vec())?;
        let adj = x.adjacency().map(|a| a.to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let input_loss = |tape: &mut Tape, v: Var| {
            let p = self.bind(tape, false);
            let fp = self.record_from(tape, &p, v, adj.as_deref())?;
            tape.softmax_cross_entropy(fp.logits, label)
        };
        let coords: Vec<usize> = (0..n_coords).map(|_| rng.random_range(0..xt.len())).collect();
        let input_err = finite_difference_check_coords(input_loss, &xt, MODEL_FD_STEP, &coords)?;

        let flat: Vec<f64> = self.parameters().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        let total = flat.len();
        let theta = Tensor::new(vec![total, 1], flat)?;
        let param_loss = |tape: &mut Tape, v: Var| {
            let mut vars = Vec::new();
            let mut offset = 0;
            for (_, t) in self.parameters() {
                let rows = tape.gather_rows(v, (offset..offset + t.len()).collect())?;
                vars.push(tape.reshape(rows, t.dims().to_vec())?);
                offset += t.len();
            }
            let p = self.bind_vars(vars);
            let input = tape.constant(xt.clone());
            let fp = self.record_from(tape, &p, input, adj.as_deref())?;
            tape.softmax_cross_entropy(fp.logits, label)
        };
        let coords: Vec<usize> = (0..n_coords).map(|_| rng.random_range(0..total)).collect();
        let param_err = finite_difference_check_coords(param_loss, &theta, MODEL_FD_STEP, &coords)?;
        Ok((input_err, param_err))
    }
}

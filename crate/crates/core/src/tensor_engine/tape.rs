use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Slope of `leaky_relu` for negative inputs.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Conv1d { input: Var, kernel: Var },
    Conv2d { input: Var, kernel: Var },
    Relu(Var),
    LeakyRelu(Var),
    Tanh(Var),
    MaxAxis { input: Var, argmax: Vec<usize> },
    MeanAxis { input: Var, axis: usize },
    SumAxis { input: Var, axis: usize },
    Gather { input: Var, index: Vec<usize> },
    SubMax { input: Var, argmax: Vec<usize> },
    SoftmaxCe { logits: Var, target: usize, probs: Vec<f64> },
    Reshape(Var),
    BroadcastRows { input: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive ops in evaluation order for one reverse pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints from one call to [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    dims: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero if `v` does not reach the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        let dims = self.dims[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(dims, g.clone()).expect("gradient matches node dims"),
            None => Tensor::zeros(dims),
        }
    }
}

/// Splits `dims` around `axis` into (outer, extent, inner) strides.
fn split_axis(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::DimMismatch { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that gradients flow into.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(mismatch(
                op,
                format!("{:?} vs {:?}", self.dims(a), self.dims(b)),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        self.same_dims(op, a, b)?;
        let data = self.value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.dims(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, node, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let t = Tensor::new(t.dims().to_vec(), t.data().iter().map(|x| c * x).collect())
            .expect("same dims");
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.dims(a), self.dims(b));
        let (m, k, n) = match (da, db) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(mismatch("matmul", format!("{da:?} × {db:?}"))),
        };
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let xv = x[i * k + p];
                if xv == 0.0 {
                    continue;
                }
                let yrow = &y[p * n..(p + 1) * n];
                for (o, &yv) in row.iter_mut().zip(yrow) {
                    *o += xv * yv;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Circular 1-d convolution with centred taps.
    ///
    /// `input: [T, C_in]`, `kernel: [C_out, C_in, K]` → `[T, C_out]` with
    /// `out[t][o] = Σ_c Σ_j kernel[o][c][j] · input[(t − j + ⌊K/2⌋) mod T][c]`.
    pub fn circular_conv1d(&mut self, input: Var, kernel: Var) -> Result<Var> {
        let (di, dk) = (self.dims(input).to_vec(), self.dims(kernel).to_vec());
        let (t_len, cin, cout, ks) = match (&di[..], &dk[..]) {
            ([t, c], [o, c2, k]) if c == c2 => (*t, *c, *o, *k),
            _ => return Err(mismatch("circular_conv1d", format!("input {di:?}, kernel {dk:?}"))),
        };
        if ks > t_len {
            return Err(mismatch(
                "circular_conv1d",
                format!("kernel size {ks} exceeds axis extent {t_len}"),
            ));
        }
        let half = ks / 2;
        let x = self.value(input).data();
        let w = self.value(kernel).data();
        let wt = taps_major(w, cout, cin, ks);
        let mut out = vec![0.0; t_len * cout];
        for t in 0..t_len {
            for j in 0..ks {
                let src = (t + t_len + half - j) % t_len;
                let xrow = &x[src * cin..(src + 1) * cin];
                for o in 0..cout {
                    let wrow = &wt[(j * cout + o) * cin..][..cin];
                    let acc = wrow.iter().zip(xrow).fold(0.0, |a, (wv, xv)| a + wv * xv);
                    out[t * cout + o] += acc;
                }
            }
        }
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(
            Tensor::new(vec![t_len, cout], out)?,
            Op::Conv1d { input, kernel },
            rg,
        ))
    }

    /// Circular 2-d convolution with centred taps.
    ///
    /// `input: [W, H, C_in]`, `kernel: [C_out, C_in, K, K]` → `[W, H, C_out]`.
    pub fn circular_conv2d(&mut self, input: Var, kernel: Var) -> Result<Var> {
        let (di, dk) = (self.dims(input).to_vec(), self.dims(kernel).to_vec());
        let (w_len, h_len, cin, cout, ks) = match (&di[..], &dk[..]) {
            ([w, h, c], [o, c2, k, k2]) if c == c2 && k == k2 => (*w, *h, *c, *o, *k),
            _ => return Err(mismatch("circular_conv2d", format!("input {di:?}, kernel {dk:?}"))),
        };
        if ks > w_len || ks > h_len {
            return Err(mismatch(
                "circular_conv2d",
                format!("kernel size {ks} exceeds axis extents {w_len}x{h_len}"),
            ));
        }
        let half = ks / 2;
        let x = self.value(input).data();
        let w = self.value(kernel).data();
        let wt = taps_major(w, cout, cin, ks * ks);
        let mut out = vec![0.0; w_len * h_len * cout];
        for u in 0..w_len {
            for v in 0..h_len {
                let obase = (u * h_len + v) * cout;
                for i in 0..ks {
                    let su = (u + w_len + half - i) % w_len;
                    for j in 0..ks {
                        let sv = (v + h_len + half - j) % h_len;
                        let xrow = &x[(su * h_len + sv) * cin..][..cin];
                        for o in 0..cout {
                            let wrow = &wt[((i * ks + j) * cout + o) * cin..][..cin];
                            let acc = wrow.iter().zip(xrow).fold(0.0, |a, (wv, xv)| a + wv * xv);
                            out[obase + o] += acc;
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(
            Tensor::new(vec![w_len, h_len, cout], out)?,
            Op::Conv2d { input, kernel },
            rg,
        ))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let t = Tensor::new(t.dims().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("same dims");
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { LEAKY_SLOPE * x }, Op::LeakyRelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        if axis >= self.dims(a).len() {
            return Err(mismatch(op, format!("axis {axis} out of range for {:?}", self.dims(a))));
        }
        Ok(())
    }

    fn reduced_dims(&self, a: Var, axis: usize) -> Vec<usize> {
        let mut d = self.dims(a).to_vec();
        d.remove(axis);
        d
    }

    /// Maximum along `axis`; ties route the gradient to the first maximal index.
    pub fn max_over_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("max_over_axis", a, axis)?;
        let (outer, n, inner) = split_axis(self.dims(a), axis);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * n * inner + i;
                for k in 1..n {
                    let idx = (o * n + k) * inner + i;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
        let t = Tensor::new(self.reduced_dims(a, axis), out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::MaxAxis { input: a, argmax }, rg))
    }

    fn reduce_sum(&self, a: Var, axis: usize) -> Vec<f64> {
        let (outer, n, inner) = split_axis(self.dims(a), axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x[base + i];
                }
            }
        }
        out
    }

    pub fn sum_over_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum_over_axis", a, axis)?;
        let out = self.reduce_sum(a, axis);
        let t = Tensor::new(self.reduced_dims(a, axis), out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::SumAxis { input: a, axis }, rg))
    }

    pub fn mean_over_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean_over_axis", a, axis)?;
        let n = self.dims(a)[axis] as f64;
        let out = self.reduce_sum(a, axis).into_iter().map(|v| v / n).collect();
        let t = Tensor::new(self.reduced_dims(a, axis), out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::MeanAxis { input: a, axis }, rg))
    }

    /// Gathers slices along axis 0: `out[r] = input[index[r]]`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let dims = self.dims(a).to_vec();
        if dims.is_empty() {
            return Err(mismatch("gather_rows", "scalar input".into()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= dims[0]) {
            return Err(mismatch("gather_rows", format!("index {bad} ≥ {}", dims[0])));
        }
        let row: usize = dims[1..].iter().product();
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * row);
        for &i in &index {
            out.extend_from_slice(&x[i * row..(i + 1) * row]);
        }
        let mut od = dims;
        od[0] = index.len();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(od, out)?, Op::Gather { input: a, index }, rg))
    }

    /// `x[s][f] − max_{s'} x[s'][f]` over the set axis of `[N, F]`.
    pub fn sub_max_over_set_axis(&mut self, a: Var) -> Result<Var> {
        let (n, f) = match self.dims(a) {
            [n, f] => (*n, *f),
            d => return Err(mismatch("sub_max_over_set_axis", format!("{d:?} is not [N, F]"))),
        };
        let x = self.value(a).data();
        let mut argmax = vec![0usize; f];
        for (j, am) in argmax.iter_mut().enumerate() {
            for s in 1..n {
                if x[s * f + j] > x[*am * f + j] {
                    *am = s;
                }
            }
        }
        let out = (0..n * f)
            .map(|idx| x[idx] - x[argmax[idx % f] * f + idx % f])
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![n, f], out)?, Op::SubMax { input: a, argmax }, rg))
    }

    /// Cross-entropy of `softmax(logits)` against a class index; scalar output.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if target >= z.len() {
            return Err(mismatch(
                "softmax_cross_entropy",
                format!("target {target} ≥ class count {}", z.len()),
            ));
        }
        let probs = softmax(z);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let loss = lse - z[target];
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                target,
                probs,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, dims: Vec<usize>) -> Result<Var> {
        let t = self.value(a).reshaped(dims)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Repeats a `[d]` or `[1, d]` tensor into `[rows, d]`.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let d = match self.dims(a) {
            [d] | [1, d] => *d,
            other => return Err(mismatch("broadcast_rows", format!("{other:?} is not a row"))),
        };
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(rows * d);
        for _ in 0..rows {
            out.extend_from_slice(x);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![rows, d], out)?, Op::BroadcastRows { input: a }, rg))
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_node = &self.nodes[output.0];
        if out_node.value.len() != 1 {
            return Err(Error::NonScalarOutput(out_node.value.dims().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            dims: self.nodes.iter().map(|n| n.value.dims().to_vec()).collect(),
            grads,
        })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if let Some(ga) = self.acc(grads, v) {
                        ga.iter_mut().zip(g).for_each(|(x, &y)| *x += sign * y);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if let Some(ga) = self.acc(grads, v) {
                        ga.iter_mut().zip(g).for_each(|(x, &y)| *x += sign * y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += c * y);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.dims(*a)[0], self.dims(*a)[1]);
                let n = self.dims(*b)[1];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..m {
                        let grow = &g[i * n..][..n];
                        for (p, gap) in ga[i * k..][..k].iter_mut().enumerate() {
                            let brow = &bv[p * n..][..n];
                            *gap += grow.iter().zip(brow).fold(0.0, |s, (gv, bw)| s + gv * bw);
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += x * g[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::Conv1d { input, kernel } => {
                let (t_len, cin) = (self.dims(*input)[0], self.dims(*input)[1]);
                let (cout, ks) = (self.dims(*kernel)[0], self.dims(*kernel)[2]);
                let half = ks / 2;
                let x = self.value(*input).data();
                let w = self.value(*kernel).data();
                if let Some(gx) = self.acc(grads, *input) {
                    let wt = taps_major(w, cout, cin, ks);
                    for t in 0..t_len {
                        for j in 0..ks {
                            let src = (t + t_len + half - j) % t_len;
                            let gxrow = &mut gx[src * cin..][..cin];
                            for o in 0..cout {
                                let go = g[t * cout + o];
                                let wrow = &wt[(j * cout + o) * cin..][..cin];
                                gxrow.iter_mut().zip(wrow).for_each(|(a, wv)| *a += go * wv);
                            }
                        }
                    }
                }
                if let Some(gw) = self.acc(grads, *kernel) {
                    let mut gwt = vec![0.0; w.len()];
                    for t in 0..t_len {
                        for j in 0..ks {
                            let src = (t + t_len + half - j) % t_len;
                            let xrow = &x[src * cin..][..cin];
                            for o in 0..cout {
                                let go = g[t * cout + o];
                                let grow = &mut gwt[(j * cout + o) * cin..][..cin];
                                grow.iter_mut().zip(xrow).for_each(|(a, xv)| *a += go * xv);
                            }
                        }
                    }
                    add_kernel_major(gw, &gwt, cout, cin, ks);
                }
            }
            Op::Conv2d { input, kernel } => {
                let d = self.dims(*input);
                let (w_len, h_len, cin) = (d[0], d[1], d[2]);
                let (cout, ks) = (self.dims(*kernel)[0], self.dims(*kernel)[2]);
                let half = ks / 2;
                let x = self.value(*input).data();
                let w = self.value(*kernel).data();
                let want_x = self.nodes[input.0].requires_grad;
                let want_w = self.nodes[kernel.0].requires_grad;
                let wt = taps_major(w, cout, cin, ks * ks);
                let mut gx = want_x.then(|| vec![0.0; x.len()]);
                let mut gwt = want_w.then(|| vec![0.0; w.len()]);
                for u in 0..w_len {
                    for v in 0..h_len {
                        let obase = (u * h_len + v) * cout;
                        for i in 0..ks {
                            let su = (u + w_len + half - i) % w_len;
                            for j in 0..ks {
                                let sv = (v + h_len + half - j) % h_len;
                                let xbase = (su * h_len + sv) * cin;
                                for o in 0..cout {
                                    let go = g[obase + o];
                                    if go == 0.0 {
                                        continue;
                                    }
                                    let wbase = ((i * ks + j) * cout + o) * cin;
                                    if let Some(gx) = gx.as_mut() {
                                        let row = &mut gx[xbase..][..cin];
                                        row.iter_mut().zip(&wt[wbase..][..cin]).for_each(|(a, wv)| *a += go * wv);
                                    }
                                    if let Some(gwt) = gwt.as_mut() {
                                        let row = &mut gwt[wbase..][..cin];
                                        row.iter_mut().zip(&x[xbase..][..cin]).for_each(|(a, xv)| *a += go * xv);
                                    }
                                }
                            }
                        }
                    }
                }
                if let (Some(src), Some(dst)) = (gx, self.acc(grads, *input)) {
                    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                }
                if let (Some(src), Some(dst)) = (gwt, self.acc(grads, *kernel)) {
                    add_kernel_major(dst, &src, cout, cin, ks * ks);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                }
            }
            Op::LeakyRelu(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += if x[i] > 0.0 { g[i] } else { LEAKY_SLOPE * g[i] };
                    }
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::MaxAxis { input, argmax } => {
                if let Some(ga) = self.acc(grads, *input) {
                    for (o, &src) in argmax.iter().enumerate() {
                        ga[src] += g[o];
                    }
                }
            }
            Op::MeanAxis { input, axis } | Op::SumAxis { input, axis } => {
                let (outer, n, inner) = split_axis(self.dims(*input), *axis);
                let scale = if matches!(node.op, Op::MeanAxis { .. }) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                if let Some(ga) = self.acc(grads, *input) {
                    for o in 0..outer {
                        for k in 0..n {
                            let base = (o * n + k) * inner;
                            for i in 0..inner {
                                ga[base + i] += scale * g[o * inner + i];
                            }
                        }
                    }
                }
            }
            Op::Gather { input, index } => {
                let row: usize = self.dims(*input)[1..].iter().product();
                if let Some(ga) = self.acc(grads, *input) {
                    for (r, &src) in index.iter().enumerate() {
                        for j in 0..row {
                            ga[src * row + j] += g[r * row + j];
                        }
                    }
                }
            }
            Op::SubMax { input, argmax } => {
                let f = argmax.len();
                let n = g.len() / f.max(1);
                if let Some(ga) = self.acc(grads, *input) {
                    for (j, &am) in argmax.iter().enumerate() {
                        let mut col = 0.0;
                        for s in 0..n {
                            ga[s * f + j] += g[s * f + j];
                            col += g[s * f + j];
                        }
                        ga[am * f + j] -= col;
                    }
                }
            }
            Op::SoftmaxCe {
                logits,
                target,
                probs,
            } => {
                if let Some(ga) = self.acc(grads, *logits) {
                    for (i, p) in probs.iter().enumerate() {
                        let y = if i == *target { 1.0 } else { 0.0 };
                        ga[i] += g[0] * (p - y);
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
            }
            Op::BroadcastRows { input } => {
                let d = self.value(*input).len();
                if let Some(ga) = self.acc(grads, *input) {
                    for (i, &gv) in g.iter().enumerate() {
                        ga[i % d] += gv;
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax.
/// Reorders a `[C_out, C_in, taps]` kernel to `[taps, C_out, C_in]` so the
/// channel loops in the convolutions run over contiguous memory.
fn taps_major(w: &[f64], cout: usize, cin: usize, taps: usize) -> Vec<f64> {
    let mut wt = vec![0.0; w.len()];
    for o in 0..cout {
        for c in 0..cin {
            for j in 0..taps {
                wt[(j * cout + o) * cin + c] = w[(o * cin + c) * taps + j];
            }
        }
    }
    wt
}

/// Adds a `[taps, C_out, C_in]` gradient into a `[C_out, C_in, taps]` one.
fn add_kernel_major(dst: &mut [f64], src: &[f64], cout: usize, cin: usize, taps: usize) {
    for o in 0..cout {
        for c in 0..cin {
            for j in 0..taps {
                dst[(o * cin + c) * taps + j] += src[(j * cout + o) * cin + c];
            }
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

//! Invariant and approximately invariant architectures with named layer taps.

mod checkpoint;
mod gradcheck;
mod train;


use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_synth::DatasetKind;
use crate::error::{Error, Result};
use crate::symmetry::{DomainShape, Signal};
use crate::tensor_engine::{softmax, Tape, Tensor, Var};

pub use checkpoint::Checkpoint;
pub use gradcheck::MODEL_FD_STEP;
pub use train::{accuracy, train, Optimizer, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    AllCnn1d,
    FlattenCnn1d,
    AllCnn2d,
    FlattenCnn2d,
    DeepSet,
    GraphConv,
    BowMlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::AllCnn1d,
        ModelKind::FlattenCnn1d,
        ModelKind::AllCnn2d,
        ModelKind::FlattenCnn2d,
        ModelKind::DeepSet,
        ModelKind::GraphConv,
        ModelKind::BowMlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::AllCnn1d => "all_cnn_1d",
            ModelKind::FlattenCnn1d => "flatten_cnn_1d",
            ModelKind::AllCnn2d => "all_cnn_2d",
            ModelKind::FlattenCnn2d => "flatten_cnn_2d",
            ModelKind::DeepSet => "deep_set",
            ModelKind::GraphConv => "graph_conv",
            ModelKind::BowMlp => "bow_mlp",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind `{name}`")))
    }

    /// Whether the architecture is invariant to its dataset's group.
    pub fn is_invariant(self) -> bool {
        !matches!(self, ModelKind::FlattenCnn1d | ModelKind::FlattenCnn2d)
    }

    fn spatial_axes(self) -> usize {
        match self {
            ModelKind::AllCnn2d | ModelKind::FlattenCnn2d => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthConfig {
    /// Widths of the three convolution / set / graph layers; `bow_mlp` uses
    /// only the first as its hidden width.
    pub widths: Vec<usize>,
    /// Width of the dense layers after pooling.
    pub dense: usize,
    pub classes: usize,
    pub channels: usize,
    /// Expected domain extents; empty when any size is accepted (graphs).
    pub domain: Vec<usize>,
    pub kernel: usize,
}

impl WidthConfig {
    /// Desk-scale widths for a model on a dataset.
    pub fn for_dataset(kind: ModelKind, data: &DatasetKind) -> Self {
        let widths = match kind {
            ModelKind::AllCnn1d | ModelKind::FlattenCnn1d => vec![8, 16, 32],
            ModelKind::AllCnn2d | ModelKind::FlattenCnn2d => vec![8, 16, 16],
            ModelKind::DeepSet => vec![32, 32, 32],
            ModelKind::GraphConv => vec![16, 16, 16],
            ModelKind::BowMlp => vec![32],
        };
        let dense = match kind {
            ModelKind::GraphConv => 16,
            _ => 32,
        };
        let domain = data
            .input_shape()
            .map(|s| s.axes().to_vec())
            .unwrap_or_default();
        Self {
            widths,
            dense,
            classes: data.classes(),
            channels: data.channels(),
            domain,
            kernel: 3,
        }
    }
}

/// Named representation taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tap {
    /// Last equivariant layer, before pooling.
    Equiv,
    /// First invariant dense layer, after pooling.
    Inv,
    Logits,
}

impl Tap {
    pub fn name(self) -> &'static str {
        match self {
            Tap::Equiv => "equiv",
            Tap::Inv => "inv",
            Tap::Logits => "logits",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "equiv" => Ok(Tap::Equiv),
            "inv" => Ok(Tap::Inv),
            "logits" => Ok(Tap::Logits),
            _ => Err(Error::InvalidArgument(format!("unknown tap `{name}`"))),
        }
    }
}

/// Nodes of one forward pass on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ForwardPass {
    pub input: Var,
    pub equiv: Var,
    pub inv: Var,
    /// Input to the output layer.
    pub penultimate: Var,
    pub logits: Var,
}

impl ForwardPass {
    pub fn tap(&self, tap: Tap) -> Var {
        match tap {
            Tap::Equiv => self.equiv,
            Tap::Inv => self.inv,
            Tap::Logits => self.logits,
        }
    }
}

/// Parameters bound to tape leaves, looked up by name.
pub struct BoundParams<'a> {
    names: &'a [(String, Tensor)],
    pub vars: Vec<Var>,
}

impl BoundParams<'_> {
    fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter `{name}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    kind: ModelKind,
    config: WidthConfig,
    params: Vec<(String, Tensor)>,
}

/// Parameter names, shapes and fan-in for each kind.
fn layout(kind: ModelKind, cfg: &WidthConfig) -> Result<Vec<(String, Vec<usize>, usize)>> {
    let w = &cfg.widths;
    let need = if kind == ModelKind::BowMlp { 1 } else { 3 };
    if w.len() < need
        || w.iter().any(|&v| v == 0)
        || cfg.dense == 0
        || cfg.classes == 0
        || cfg.channels == 0
        || cfg.kernel == 0
    {
        return Err(Error::InvalidArgument(format!(
            "width config for {kind} must be positive with {need} widths: {cfg:?}"
        )));
    }
    let axes = kind.spatial_axes();
    if !cfg.domain.is_empty() && cfg.domain.len() != axes {
        return Err(Error::InvalidArgument(format!(
            "{kind} needs a {axes}-axis domain, got {:?}",
            cfg.domain
        )));
    }
    let mut out = Vec::new();
    let dense = |out: &mut Vec<(String, Vec<usize>, usize)>, name: &str, i: usize, o: usize| {
        out.push((format!("{name}.w"), vec![i, o], i));
        out.push((format!("{name}.b"), vec![o], i));
    };
    let k = cfg.kernel;
    match kind {
        ModelKind::AllCnn1d | ModelKind::FlattenCnn1d | ModelKind::AllCnn2d | ModelKind::FlattenCnn2d => {
            let mut cin = cfg.channels;
            for (l, &cout) in w[..3].iter().enumerate() {
                let mut dims = vec![cout, cin, k];
                if axes == 2 {
                    dims.push(k);
                }
                let fan = cin * k.pow(axes as u32);
                out.push((format!("conv{}.w", l + 1), dims, fan));
                out.push((format!("conv{}.b", l + 1), vec![cout], fan));
                cin = cout;
            }
            let pooled = match kind {
                ModelKind::FlattenCnn1d | ModelKind::FlattenCnn2d => {
                    let dims = flatten_dims(kind, &cfg.domain)?;
                    dims.iter().product::<usize>() * w[2]
                }
                _ => w[2],
            };
            dense(&mut out, "fc1", pooled, cfg.dense);
            dense(&mut out, "fc2", cfg.dense, cfg.dense);
            dense(&mut out, "out", cfg.dense, cfg.classes);
        }
        ModelKind::DeepSet => {
            dense(&mut out, "set1", cfg.channels, w[0]);
            dense(&mut out, "set2", w[0], w[1]);
            dense(&mut out, "set3", w[1], w[2]);
            dense(&mut out, "fc1", w[2], cfg.dense);
            dense(&mut out, "out", cfg.dense, cfg.classes);
        }
        ModelKind::GraphConv => {
            let mut cin = cfg.channels;
            for (l, &cout) in w[..3].iter().enumerate() {
                out.push((format!("gc{}.self", l + 1), vec![cin, cout], 2 * cin));
                out.push((format!("gc{}.nbr", l + 1), vec![cin, cout], 2 * cin));
                out.push((format!("gc{}.b", l + 1), vec![cout], 2 * cin));
                cin = cout;
            }
            dense(&mut out, "fc1", w[2], cfg.dense);
            dense(&mut out, "out", cfg.dense, cfg.classes);
        }
        ModelKind::BowMlp => {
            dense(&mut out, "embed", cfg.channels, w[0]);
            dense(&mut out, "out", w[0], cfg.classes);
        }
    }
    Ok(out)
}

/// Spatial extents left after the max-pool stages of a flatten CNN.
fn flatten_dims(kind: ModelKind, domain: &[usize]) -> Result<Vec<usize>> {
    // 1-d: three 2× pools; 2-d: two 2× pools per axis
    let (pools, axes) = match kind {
        ModelKind::FlattenCnn1d => (3, 1),
        ModelKind::FlattenCnn2d => (2, 2),
        _ => unreachable!("only flatten kinds pool"),
    };
    let factor = 1usize << pools;
    if domain.len() != axes || domain.iter().any(|&d| d == 0 || d % factor != 0) {
        return Err(Error::InvalidArgument(format!(
            "{kind} needs a fixed {axes}-axis domain divisible by {factor}, got {domain:?}"
        )));
    }
    Ok(domain.iter().map(|d| d / factor).collect())
}

impl Model {
    pub fn build(kind: ModelKind, config: WidthConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout(kind, &config)?
            .into_iter()
            .map(|(name, dims, fan_in)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n = dims.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Ok((name, Tensor::new(dims, data)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            kind,
            config,
            params,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &WidthConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn parameters(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn parameter(&self, name: &str) -> Result<&Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter `{name}`")))
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Same architecture with replaced parameters; names and shapes must match.
    pub fn with_parameters(&self, params: Vec<(String, Tensor)>) -> Result<Self> {
        if params.len() != self.params.len()
            || params
                .iter()
                .zip(&self.params)
                .any(|((n1, t1), (n2, t2))| n1 != n2 || t1.dims() != t2.dims())
        {
            return Err(Error::InvalidArgument(format!(
                "parameters do not match the {} layout",
                self.kind
            )));
        }
        Ok(Self {
            kind: self.kind,
            config: self.config.clone(),
            params,
        })
    }

    pub fn set_parameters(&mut self, params: Vec<(String, Tensor)>) -> Result<()> {
        *self = self.with_parameters(params)?;
        Ok(())
    }

    pub fn check_input(&self, x: &Signal) -> Result<()> {
        let shape = x.shape();
        let axes_ok = if self.config.domain.is_empty() {
            shape.axes().len() == self.kind.spatial_axes()
        } else {
            shape.axes() == self.config.domain.as_slice()
        };
        if !axes_ok || shape.channels() != self.config.channels {
            let expected = if self.config.domain.is_empty() {
                format!("{}-axis domain with {} channels", self.kind.spatial_axes(), self.config.channels)
            } else {
                DomainShape::new(self.config.domain.clone(), self.config.channels)
                    .map(|s| s.to_string())
                    .unwrap_or_default()
            };
            return Err(Error::ShapeMismatch {
                expected,
                found: shape.to_string(),
            });
        }
        if self.kind == ModelKind::GraphConv && x.adjacency().is_none() {
            return Err(Error::InvalidArgument("graph_conv input needs an adjacency matrix".into()));
        }
        Ok(())
    }

    /// Places the parameters on the tape as leaves, trainable or constant.
    pub fn bind<'a>(&'a self, tape: &mut Tape, trainable: bool) -> BoundParams<'a> {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        BoundParams {
            names: &self.params,
            vars,
        }
    }

    /// Records a forward pass of `x`; the input leaf is differentiable when
    /// `input_grad` is set.
    pub fn record(&self, tape: &mut Tape, p: &BoundParams<'_>, x: &Signal, input_grad: bool) -> Result<ForwardPass> {
        self.check_input(x)?;
        let shape = x.shape();
        let mut dims = shape.axes().to_vec();
        dims.push(shape.channels());
        let t = Tensor::new(dims, x.values().to_vec())?;
        let input = if input_grad { tape.param(t) } else { tape.constant(t) };
        self.record_from(tape, p, input, x.adjacency())
    }

    /// Records a forward pass from an input node shaped `[axes..., channels]`.
    pub fn record_from(&self, tape: &mut Tape, p: &BoundParams<'_>, input: Var, adjacency: Option<&[f64]>) -> Result<ForwardPass> {
        match self.kind {
            ModelKind::AllCnn1d | ModelKind::AllCnn2d => self.record_all_cnn(tape, p, input),
            ModelKind::FlattenCnn1d | ModelKind::FlattenCnn2d => self.record_flatten_cnn(tape, p, input),
            ModelKind::DeepSet => self.record_deep_set(tape, p, input),
            ModelKind::GraphConv => {
                let n = tape.dims(input)[0];
                let adj = adjacency.ok_or_else(|| {
                    Error::InvalidArgument("graph_conv input needs an adjacency matrix".into())
                })?;
                let adj = tape.constant(Tensor::new(vec![n, n], adj.to_vec())?);
                self.record_graph_conv(tape, p, input, adj)
            }
            ModelKind::BowMlp => self.record_bow(tape, p, input),
        }
    }

    /// Binds parameters given as tape nodes, in parameter order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> BoundParams<'_> {
        BoundParams {
            names: &self.params,
            vars,
        }
    }

    fn conv(&self, tape: &mut Tape, p: &BoundParams<'_>, h: Var, layer: usize) -> Result<Var> {
        let w = p.get(&format!("conv{layer}.w"))?;
        let b = p.get(&format!("conv{layer}.b"))?;
        let out = if self.kind.spatial_axes() == 2 {
            tape.circular_conv2d(h, w)?
        } else {
            tape.circular_conv1d(h, w)?
        };
        add_row_bias(tape, out, b)
    }

    fn dense(&self, tape: &mut Tape, p: &BoundParams<'_>, h: Var, name: &str) -> Result<Var> {
        let w = p.get(&format!("{name}.w"))?;
        let b = p.get(&format!("{name}.b"))?;
        let z = tape.matmul(h, w)?;
        add_row_bias(tape, z, b)
    }

    fn head(&self, tape: &mut Tape, p: &BoundParams<'_>, input: Var, equiv: Var, pooled: Var) -> Result<ForwardPass> {
        let d = tape.dims(pooled).iter().product();
        let row = tape.reshape(pooled, vec![1, d])?;
        let z = self.dense(tape, p, row, "fc1")?;
        let inv = tape.leaky_relu(z);
        let z = self.dense(tape, p, inv, "fc2")?;
        let penultimate = tape.leaky_relu(z);
        let z = self.dense(tape, p, penultimate, "out")?;
        let logits = tape.reshape(z, vec![self.config.classes])?;
        let inv = flat(tape, inv)?;
        let penultimate = flat(tape, penultimate)?;
        Ok(ForwardPass {
            input,
            equiv,
            inv,
            penultimate,
            logits,
        })
    }

    fn record_all_cnn(&self, tape: &mut Tape, p: &BoundParams<'_>, input: Var) -> Result<ForwardPass> {
        let mut h = input;
        for layer in 1..=3 {
            let z = self.conv(tape, p, h, layer)?;
            h = tape.relu(z);
        }
        let equiv = h;
        let dims = tape.dims(h).to_vec();
        let points: usize = dims[..dims.len() - 1].iter().product();
        let rows = tape.reshape(h, vec![points, dims[dims.len() - 1]])?;
        let pooled = tape.mean_over_axis(rows, 0)?;
        self.head(tape, p, input, equiv, pooled)
    }

    fn record_flatten_cnn(&self, tape: &mut Tape, p: &BoundParams<'_>, input: Var) -> Result<ForwardPass> {
        let two_d = self.kind.spatial_axes() == 2;
        let pool = |tape: &mut Tape, h: Var| if two_d { max_pool_2d(tape, h) } else { max_pool_1d(tape, h) };
        let h = self.conv(tape, p, input, 1)?;
        let h = pool(tape, h)?;
        let z = self.conv(tape, p, h, 2)?;
        let h = tape.relu(z);
        let h = pool(tape, h)?;
        let z = self.conv(tape, p, h, 3)?;
        let equiv = tape.relu(z);
        let pooled = if two_d { equiv } else { max_pool_1d(tape, equiv)? };
        self.head(tape, p, input, equiv, pooled)
    }

    fn record_deep_set(&self, tape: &mut Tape, p: &BoundParams<'_>, input: Var) -> Result<ForwardPass> {
        let mut h = input;
        let mut equiv = input;
        for layer in 1..=3 {
            let centred = tape.sub_max_over_set_axis(h)?;
            let z = self.dense(tape, p, centred, &format!("set{layer}"))?;
            h = tape.tanh(z);
            if layer == 2 {
                equiv = h;
            }
        }
        let pooled = tape.max_over_axis(h, 0)?;
        let d = tape.dims(pooled)[0];
        let row = tape.reshape(pooled, vec![1, d])?;
        let z = self.dense(tape, p, row, "fc1")?;
        let inv = tape.tanh(z);
        let z = self.dense(tape, p, inv, "out")?;
        let logits = tape.reshape(z, vec![self.config.classes])?;
        let inv = flat(tape, inv)?;
        Ok(ForwardPass {
            input,
            equiv,
            inv,
            penultimate: inv,
            logits,
        })
    }

    fn record_graph_conv(&self, tape: &mut Tape, p: &BoundParams<'_>, input: Var, adj: Var) -> Result<ForwardPass> {
        let mut h = input;
        for layer in 1..=3 {
            let ws = p.get(&format!("gc{layer}.self"))?;
            let wn = p.get(&format!("gc{layer}.nbr"))?;
            let b = p.get(&format!("gc{layer}.b"))?;
            let own = tape.matmul(h, ws)?;
            let agg = tape.matmul(adj, h)?;
            let nbr = tape.matmul(agg, wn)?;
            let z = tape.add(own, nbr)?;
            let z = add_row_bias(tape, z, b)?;
            h = tape.relu(z);
        }
        let equiv = h;
        let pooled = tape.sum_over_axis(h, 0)?;
        let d = tape.dims(pooled)[0];
        let row = tape.reshape(pooled, vec![1, d])?;
        let z = self.dense(tape, p, row, "fc1")?;
        let inv = tape.relu(z);
        let z = self.dense(tape, p, inv, "out")?;
        let logits = tape.reshape(z, vec![self.config.classes])?;
        let inv = flat(tape, inv)?;
        Ok(ForwardPass {
            input,
            equiv,
            inv,
            penultimate: inv,
            logits,
        })
    }

    fn record_bow(&self, tape: &mut Tape, p: &BoundParams<'_>, input: Var) -> Result<ForwardPass> {
        // Σₜ onehot(xₜ)·E = Σₜ (onehot(xₜ)·E): the per-token projection is the
        // equivariant layer and the token sum the pooling.
        let e = p.get("embed.w")?;
        let b = p.get("embed.b")?;
        let equiv = tape.matmul(input, e)?;
        let pooled = tape.sum_over_axis(equiv, 0)?;
        let d = tape.dims(pooled)[0];
        let row = tape.reshape(pooled, vec![1, d])?;
        let z = add_row_bias(tape, row, b)?;
        let inv = tape.relu(z);
        let z = self.dense(tape, p, inv, "out")?;
        let logits = tape.reshape(z, vec![self.config.classes])?;
        let inv = flat(tape, inv)?;
        Ok(ForwardPass {
            input,
            equiv,
            inv,
            penultimate: inv,
            logits,
        })
    }

    pub fn forward(&self, x: &Signal) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let fp = self.record(&mut tape, &p, x, false)?;
        let logits = tape.value(fp.logits).data().to_vec();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(logits)
    }

    pub fn probabilities(&self, x: &Signal) -> Result<Vec<f64>> {
        Ok(softmax(&self.forward(x)?))
    }

    pub fn predict(&self, x: &Signal) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn representation(&self, tap: Tap, x: &Signal) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let fp = self.record(&mut tape, &p, x, false)?;
        Ok(tape.value(fp.tap(tap)).clone())
    }

    /// The equivariant tap as a signal over the input domain, so group
    /// actions apply to it. Fails for kinds whose tap is downsampled.
    pub fn equiv_signal(&self, x: &Signal) -> Result<Signal> {
        let t = self.representation(Tap::Equiv, x)?;
        let (axes, channels) = t.dims().split_at(t.dims().len() - 1);
        if axes != x.shape().axes() {
            return Err(Error::MissingTap {
                kind: self.kind.name(),
                tap: "equiv over the input domain",
            });
        }
        let mut s = Signal::new(DomainShape::new(axes.to_vec(), channels[0])?, t.into_data())?;
        if let Some(adj) = x.adjacency() {
            s = s.with_adjacency(adj.to_vec())?;
        }
        Ok(s)
    }

    /// Logits and the gradient of `logits[target]` with respect to the input.
    pub fn input_gradient(&self, x: &Signal, target: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if target >= self.config.classes {
            return Err(Error::InvalidArgument(format!(
                "target {target} ≥ class count {}",
                self.config.classes
            )));
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let fp = self.record(&mut tape, &p, x, true)?;
        let logits = tape.value(fp.logits).data().to_vec();
        let pick = tape.gather_rows(fp.logits, vec![target])?;
        let grads = tape.backward(pick)?;
        Ok((logits, grads.wrt(fp.input).into_data()))
    }

    /// Penultimate activations `h` such that `logits = h·W_out + b_out`.
    pub fn penultimate(&self, x: &Signal) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let fp = self.record(&mut tape, &p, x, false)?;
        Ok(tape.value(fp.penultimate).data().to_vec())
    }

    /// Cross-entropy loss and gradients for every parameter, in parameter order.
    pub fn loss_and_gradients(&self, x: &Signal, label: usize) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, true);
        let fp = self.record(&mut tape, &p, x, false)?;
        let loss = tape.softmax_cross_entropy(fp.logits, label)?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        Ok((value, p.vars.iter().map(|&v| grads.wrt(v)).collect()))
    }
}

fn flat(tape: &mut Tape, v: Var) -> Result<Var> {
    let n = tape.dims(v).iter().product();
    tape.reshape(v, vec![n])
}

/// Adds a `[d]` bias to every row of an `[..., d]` tensor.
fn add_row_bias(tape: &mut Tape, z: Var, b: Var) -> Result<Var> {
    let dims = tape.dims(z).to_vec();
    let d = dims[dims.len() - 1];
    let rows = dims[..dims.len() - 1].iter().product();
    let z2 = tape.reshape(z, vec![rows, d])?;
    let bb = tape.broadcast_rows(b, rows)?;
    let s = tape.add(z2, bb)?;
    tape.reshape(s, dims)
}

/// `[T, C] → [T/2, C]`, max over adjacent pairs.
fn max_pool_1d(tape: &mut Tape, h: Var) -> Result<Var> {
    let (t, c) = match tape.dims(h) {
        [t, c] => (*t, *c),
        d => return Err(Error::DimMismatch { op: "max_pool_1d", detail: format!("{d:?}") }),
    };
    let r = tape.reshape(h, vec![t / 2, 2, c])?;
    tape.max_over_axis(r, 1)
}

/// `[W, H, C] → [W/2, H/2, C]`, max over 2×2 blocks.
fn max_pool_2d(tape: &mut Tape, h: Var) -> Result<Var> {
    let (w, hh, c) = match tape.dims(h) {
        [w, h, c] => (*w, *h, *c),
        d => return Err(Error::DimMismatch { op: "max_pool_2d", detail: format!("{d:?}") }),
    };
    let r = tape.reshape(h, vec![w / 2, 2, hh, c])?;
    let m = tape.max_over_axis(r, 1)?;
    let r = tape.reshape(m, vec![w / 2, hh / 2, 2, c])?;
    tape.max_over_axis(r, 2)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

//! Deterministic synthetic datasets whose labels are exactly invariant under
//! the matching symmetry group.
//!
//! Every sample is drawn in a canonical pose from its latent parameters and
//! then placed by a random group element, so the label never depends on the
//! placement.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::symmetry::{DomainShape, ElementParams, GroupElement, GroupKind, Signal, SymmetryGroup};
use crate::tensor_engine::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    EcgLike { len: usize },
    ToyImages { side: usize, pad: usize },
    PointClouds { points: usize },
    TokenBags { len: usize, vocab: usize },
    MotifGraphs { max_nodes: usize },
}

pub const GRAPH_MIN_NODES: usize = 8;
pub const GRAPH_NODE_FEATURES: usize = 4;
const POSITIVE_TOKENS: std::ops::Range<usize> = 0..8;
const NEGATIVE_TOKENS: std::ops::Range<usize> = 8..16;

impl DatasetKind {
    pub fn ecg_like() -> Self {
        DatasetKind::EcgLike { len: 32 }
    }

    pub fn toy_images() -> Self {
        DatasetKind::ToyImages { side: 12, pad: 4 }
    }

    pub fn point_clouds() -> Self {
        DatasetKind::PointClouds { points: 32 }
    }

    pub fn token_bags() -> Self {
        DatasetKind::TokenBags { len: 16, vocab: 64 }
    }

    pub fn motif_graphs() -> Self {
        DatasetKind::MotifGraphs { max_nodes: 12 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::EcgLike { .. } => "ecg_like",
            DatasetKind::ToyImages { .. } => "toy_images",
            DatasetKind::PointClouds { .. } => "point_clouds",
            DatasetKind::TokenBags { .. } => "token_bags",
            DatasetKind::MotifGraphs { .. } => "motif_graphs",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "ecg_like" => Self::ecg_like(),
            "toy_images" => Self::toy_images(),
            "point_clouds" => Self::point_clouds(),
            "token_bags" => Self::token_bags(),
            "motif_graphs" => Self::motif_graphs(),
            other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
        })
    }

    pub fn classes(&self) -> usize {
        match self {
            DatasetKind::ToyImages { .. } | DatasetKind::PointClouds { .. } => 3,
            _ => 2,
        }
    }

    pub fn concept_names(&self) -> &'static [&'static str] {
        match self {
            DatasetKind::EcgLike { .. } => &["has_spike", "wide_bump", "high_amplitude"],
            DatasetKind::ToyImages { .. } => &["closed_contour", "has_cross", "bright"],
            DatasetKind::PointClouds { .. } => &["elongated", "has_corners", "large"],
            DatasetKind::TokenBags { .. } => &["many_positive", "any_negative", "repeated_token"],
            DatasetKind::MotifGraphs { .. } => &["has_triangle", "has_hub", "large"],
        }
    }

    /// Group under which labels are invariant. For graphs the node count
    /// varies, so use [`SymmetryGroup::for_signal`] with this template.
    pub fn group_kind(&self) -> GroupKind {
        match *self {
            DatasetKind::EcgLike { len } => GroupKind::Cyclic { len },
            DatasetKind::ToyImages { side, .. } => GroupKind::Cyclic2d {
                width: side,
                height: side,
            },
            DatasetKind::PointClouds { points } => GroupKind::Symmetric { n: points },
            DatasetKind::TokenBags { len, .. } => GroupKind::Symmetric { n: len },
            DatasetKind::MotifGraphs { max_nodes } => GroupKind::Symmetric { n: max_nodes },
        }
    }

    pub fn group_for(&self, x: &Signal) -> Result<SymmetryGroup> {
        SymmetryGroup::for_signal(self.group_kind(), x)
    }

    pub fn channels(&self) -> usize {
        match *self {
            DatasetKind::EcgLike { .. } | DatasetKind::ToyImages { .. } => 1,
            DatasetKind::PointClouds { .. } => 3,
            DatasetKind::TokenBags { vocab, .. } => vocab,
            DatasetKind::MotifGraphs { .. } => GRAPH_NODE_FEATURES,
        }
    }

    /// Fixed input shape, or `None` when the domain size varies per sample.
    pub fn input_shape(&self) -> Option<DomainShape> {
        let axes = match *self {
            DatasetKind::EcgLike { len } => vec![len],
            DatasetKind::ToyImages { side, .. } => vec![side, side],
            DatasetKind::PointClouds { points } => vec![points],
            DatasetKind::TokenBags { len, .. } => vec![len],
            DatasetKind::MotifGraphs { .. } => return None,
        };
        DomainShape::new(axes, self.channels()).ok()
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DatasetKind::EcgLike { len } => len >= 16,
            DatasetKind::ToyImages { side, pad } => side >= 2 * pad + 4,
            DatasetKind::PointClouds { points } => points >= 4,
            DatasetKind::TokenBags { len, vocab } => len >= 8 && vocab > NEGATIVE_TOKENS.end,
            DatasetKind::MotifGraphs { max_nodes } => max_nodes >= GRAPH_MIN_NODES,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("dataset extents too small: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_level: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, n_train: usize, n_test: usize, seed: u64) -> Self {
        Self {
            kind,
            n_train,
            n_test,
            noise_level: 0.05,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Signal,
    pub label: usize,
    pub concepts: Vec<bool>,
    /// Generative parameters of the canonical pose.
    pub latent: Vec<(String, f64)>,
    /// Group element that placed the canonical pose.
    pub placement: GroupElement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn concept_names(&self) -> &'static [&'static str] {
        self.spec.kind.concept_names()
    }

    pub fn classes(&self) -> usize {
        self.spec.kind.classes()
    }
}

/// A sample before placement.
#[derive(Debug, Clone)]
pub struct Canonical {
    pub x: Signal,
    pub label: usize,
    pub concepts: Vec<bool>,
    pub latent: Vec<(String, f64)>,
}

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.n_train == 0 || spec.n_test == 0 {
        return Err(Error::InvalidArgument("dataset sizes must be ≥ 1".into()));
    }
    if !(spec.noise_level >= 0.0 && spec.noise_level.is_finite()) {
        return Err(Error::InvalidArgument("noise level must be finite and ≥ 0".into()));
    }
    spec.kind.validate()?;
    let split = |s: Split, n: usize| -> Result<Vec<Sample>> {
        (0..n)
            .into_par_iter()
            .map(|i| render(spec, s, i).map(|(_, sample)| sample))
            .collect()
    };
    Ok(Dataset {
        spec: *spec,
        train: split(Split::Train, spec.n_train)?,
        test: split(Split::Test, spec.n_test)?,
    })
}

/// Draws sample `index` of a split: its canonical pose and the placed sample.
pub fn render(spec: &DatasetSpec, split: Split, index: usize) -> Result<(Canonical, Sample)> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, split, index));
    let label = index % spec.kind.classes();
    let canonical = match spec.kind {
        DatasetKind::EcgLike { len } => ecg(len, label, spec.noise_level, &mut rng)?,
        DatasetKind::ToyImages { side, pad } => image(side, pad, label, spec.noise_level, &mut rng)?,
        DatasetKind::PointClouds { points } => cloud(points, label, spec.noise_level, &mut rng)?,
        DatasetKind::TokenBags { len, vocab } => bag(len, vocab, label, &mut rng)?,
        DatasetKind::MotifGraphs { max_nodes } => graph(max_nodes, label, &mut rng)?,
    };
    let group = spec.kind.group_for(&canonical.x)?;
    let placement = random_element(&group, &mut rng)?;
    let x = group.act(&placement, &canonical.x)?;
    let sample = Sample {
        x,
        label: canonical.label,
        concepts: canonical.concepts.clone(),
        latent: canonical.latent.clone(),
        placement,
    };
    Ok((canonical, sample))
}

fn sample_seed(seed: u64, split: Split, index: usize) -> u64 {
    // splitmix64 finaliser over (seed, split, index)
    let tag = match split {
        Split::Train => 0x5452_4149_4e00_0000u64,
        Split::Test => 0x5445_5354_0000_0000u64,
    };
    let mut z = seed ^ tag ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn random_element(group: &SymmetryGroup, rng: &mut ChaCha8Rng) -> Result<GroupElement> {
    let s = match group.kind() {
        GroupKind::Cyclic { len } => format!("shift:{}", rng.random_range(0..len)),
        GroupKind::Cyclic2d { width, height } => format!(
            "shift2d:{},{}",
            rng.random_range(0..width),
            rng.random_range(0..height)
        ),
        GroupKind::Dihedral4 { .. } => format!(
            "d4:{},{}",
            rng.random_range(0..4),
            rng.random_range(0..2)
        ),
        GroupKind::Symmetric { n } => {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(rng);
            let parts: Vec<String> = p.iter().map(|i| i.to_string()).collect();
            format!("perm:{}", parts.join(","))
        }
    };
    group.parse_element(&s)
}

fn noise(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn ecg(len: usize, label: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Canonical> {
    let wide = rng.random_bool(0.5);
    let high = rng.random_bool(0.5);
    let width = if wide { 3.0 } else { 1.6 } * rng.random_range(0.9..1.1);
    let amp = if high { 1.0 } else { 0.6 } * rng.random_range(0.9..1.1);
    let spike_offset = rng.random_range(6..10);
    let centre = len / 2;
    let n = noise(sigma)?;
    let mut v = Vec::with_capacity(len);
    for t in 0..len {
        let d = t.abs_diff(centre).min(len - t.abs_diff(centre)) as f64;
        v.push(amp * (-d * d / (2.0 * width * width)).exp());
    }
    if label == 1 {
        let s = (centre + spike_offset) % len;
        v[s] += 1.0;
        v[(s + 1) % len] -= 0.5;
    }
    for value in &mut v {
        *value += n.sample(rng);
    }
    Ok(Canonical {
        x: Signal::new(DomainShape::new(vec![len], 1)?, v)?,
        label,
        concepts: vec![label == 1, wide, high],
        latent: vec![
            ("amplitude".into(), amp),
            ("width".into(), width),
            ("spike_offset".into(), if label == 1 { spike_offset as f64 } else { -1.0 }),
        ],
    })
}

fn image(side: usize, pad: usize, label: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Canonical> {
    const STAMP: usize = 4;
    let intensity = rng.random_range(0.6..1.0);
    let on = |i: usize, j: usize| match label {
        // plus
        0 => i == 1 || j == 1,
        // ring
        1 => i == 0 || j == 0 || i == STAMP - 1 || j == STAMP - 1,
        // diagonal
        _ => i == j,
    };
    let n = noise(sigma)?;
    let mut v = vec![0.0; side * side];
    for i in 0..STAMP {
        for j in 0..STAMP {
            if on(i, j) {
                v[(pad + i) * side + pad + j] = intensity;
            }
        }
    }
    for value in &mut v {
        *value += n.sample(rng);
    }
    Ok(Canonical {
        x: Signal::new(DomainShape::new(vec![side, side], 1)?, v)?,
        label,
        concepts: vec![label == 1, label == 0, intensity > 0.8],
        latent: vec![("intensity".into(), intensity)],
    })
}

fn cloud(points: usize, label: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Canonical> {
    let std: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let n = noise(sigma)?;
    let scale = rng.random_range(0.8..1.2);
    let unit = |rng: &mut ChaCha8Rng| loop {
        let p = [std.sample(rng), std.sample(rng), std.sample(rng)];
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if norm > 1e-6 {
            break [p[0] / norm, p[1] / norm, p[2] / norm];
        }
    };
    let dir = unit(rng);
    let mut v = Vec::with_capacity(points * 3);
    for _ in 0..points {
        let p = match label {
            0 => unit(rng).map(|c| c * scale),
            1 => {
                let face = rng.random_range(0..3);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                for (k, c) in p.iter_mut().enumerate() {
                    *c = if k == face { sign } else { rng.random_range(-1.0..1.0) } * scale * 0.8;
                }
                p
            }
            _ => {
                let t = rng.random_range(-1.5..1.5) * scale;
                dir.map(|c| c * t)
            }
        };
        v.extend(p.iter().map(|c| c + n.sample(rng)));
    }
    Ok(Canonical {
        x: Signal::new(DomainShape::new(vec![points], 3)?, v)?,
        label,
        concepts: vec![label == 2, label == 1, scale > 1.0],
        latent: vec![
            ("scale".into(), scale),
            ("dir_x".into(), dir[0]),
            ("dir_y".into(), dir[1]),
            ("dir_z".into(), dir[2]),
        ],
    })
}

fn bag(len: usize, vocab: usize, label: usize, rng: &mut ChaCha8Rng) -> Result<Canonical> {
    let strong = rng.random_range(3..7);
    let weak = rng.random_range(0..3);
    let (n_pos, n_neg) = if label == 1 { (strong, weak) } else { (weak, strong) };
    let mut tokens = Vec::with_capacity(len);
    tokens.extend((0..n_pos).map(|_| rng.random_range(POSITIVE_TOKENS)));
    tokens.extend((0..n_neg).map(|_| rng.random_range(NEGATIVE_TOKENS)));
    while tokens.len() < len {
        tokens.push(rng.random_range(NEGATIVE_TOKENS.end..vocab));
    }
    let mut v = vec![0.0; len * vocab];
    for (t, &tok) in tokens.iter().enumerate() {
        v[t * vocab + tok] = 1.0;
    }
    let mut sorted = tokens.clone();
    sorted.sort_unstable();
    let repeated = sorted.windows(2).any(|w| w[0] == w[1]);
    Ok(Canonical {
        x: Signal::new(DomainShape::new(vec![len], vocab)?, v)?,
        label,
        concepts: vec![n_pos >= 4, n_neg >= 1, repeated],
        latent: vec![("n_positive".into(), n_pos as f64), ("n_negative".into(), n_neg as f64)],
    })
}

fn graph(max_nodes: usize, label: usize, rng: &mut ChaCha8Rng) -> Result<Canonical> {
    let n = rng.random_range(GRAPH_MIN_NODES..=max_nodes);
    let mut adj = vec![0.0; n * n];
    let link = |adj: &mut Vec<f64>, a: usize, b: usize| {
        adj[a * n + b] = 1.0;
        adj[b * n + a] = 1.0;
    };
    for i in 1..n {
        let parent = rng.random_range(0..i);
        link(&mut adj, i, parent);
    }
    let dist = |adj: &[f64]| all_pairs_hops(adj, n);
    let extra = if label == 1 { rng.random_range(1..=2) } else { usize::from(rng.random_bool(0.5)) };
    for _ in 0..extra {
        let d = dist(&adj);
        // triangles close a path of length 2; odd distances ≥ 3 keep the
        // graph bipartite and so triangle-free
        let candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|&(a, b)| {
                let h = d[a * n + b];
                if label == 1 {
                    h == 2
                } else {
                    h >= 3 && h % 2 == 1
                }
            })
            .collect();
        if let Some(&(a, b)) = candidates.get(rng.random_range(0..candidates.len().max(1))) {
            link(&mut adj, a, b);
        }
    }
    let mut features = vec![0.0; n * GRAPH_NODE_FEATURES];
    for u in 0..n {
        features[u * GRAPH_NODE_FEATURES] = 1.0;
        features[u * GRAPH_NODE_FEATURES + 1 + rng.random_range(0..GRAPH_NODE_FEATURES - 1)] = 1.0;
    }
    let max_degree = (0..n)
        .map(|u| adj[u * n..(u + 1) * n].iter().sum::<f64>())
        .fold(0.0, f64::max);
    let triangles = triangle_count(&adj, n);
    let x = Signal::new(DomainShape::new(vec![n], GRAPH_NODE_FEATURES)?, features)?
        .with_adjacency(adj)?;
    Ok(Canonical {
        x,
        label,
        concepts: vec![triangles > 0, max_degree >= 4.0, n >= 10],
        latent: vec![("nodes".into(), n as f64), ("extra_edges".into(), extra as f64)],
    })
}

fn all_pairs_hops(adj: &[f64], n: usize) -> Vec<usize> {
    let mut d = vec![usize::MAX; n * n];
    for s in 0..n {
        d[s * n + s] = 0;
        let mut frontier = vec![s];
        let mut hops = 0;
        while !frontier.is_empty() {
            hops += 1;
            let mut next = Vec::new();
            for &u in &frontier {
                for v in 0..n {
                    if adj[u * n + v] > 0.0 && d[s * n + v] == usize::MAX {
                        d[s * n + v] = hops;
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
    }
    d
}

/// Number of triangles in an undirected 0/1 adjacency matrix.
pub fn triangle_count(adj: &[f64], n: usize) -> usize {
    let mut count = 0;
    for a in 0..n {
        for b in a + 1..n {
            if adj[a * n + b] == 0.0 {
                continue;
            }
            for c in b + 1..n {
                if adj[b * n + c] != 0.0 && adj[a * n + c] != 0.0 {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Group-invariant summary features of a sample, used by the nearest-centroid
/// sanity baseline.
pub fn invariant_features(kind: &DatasetKind, x: &Signal) -> Vec<f64> {
    let v = x.values();
    match kind {
        DatasetKind::EcgLike { len } => {
            // DFT magnitudes are shift invariant
            (0..=len / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (t, &val) in v.iter().enumerate() {
                        let a = 2.0 * std::f64::consts::PI * (k * t) as f64 / *len as f64;
                        re += val * a.cos();
                        im -= val * a.sin();
                    }
                    (re * re + im * im).sqrt()
                })
                .collect()
        }
        DatasetKind::ToyImages { .. } => {
            let mut s = v.to_vec();
            s.sort_by(|a, b| b.total_cmp(a));
            s.truncate(16);
            s
        }
        DatasetKind::PointClouds { .. } => {
            let mut norms: Vec<f64> = v
                .chunks(3)
                .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
                .collect();
            let mean = norms.iter().sum::<f64>() / norms.len() as f64;
            norms.iter_mut().for_each(|r| *r /= mean.max(1e-12));
            norms.sort_by(f64::total_cmp);
            norms
        }
        DatasetKind::TokenBags { vocab, .. } => {
            let mut counts = vec![0.0; *vocab];
            for row in v.chunks(*vocab) {
                for (c, r) in counts.iter_mut().zip(row) {
                    *c += r;
                }
            }
            counts
        }
        DatasetKind::MotifGraphs { .. } => {
            let n = x.shape().points();
            let adj = x.adjacency().unwrap_or(&[]);
            let edges = adj.iter().sum::<f64>() / 2.0;
            vec![
                triangle_count(adj, n) as f64,
                edges - n as f64 + 1.0,
            ]
        }
    }
}

/// Test accuracy of a nearest-centroid classifier on [`invariant_features`].
pub fn nearest_centroid_accuracy(data: &Dataset) -> f64 {
    let kind = data.spec.kind;
    let classes = kind.classes();
    let feats = |s: &Sample| invariant_features(&kind, &s.x);
    let dim = feats(&data.train[0]).len();
    let mut centroids = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for s in &data.train {
        for (c, f) in centroids[s.label].iter_mut().zip(feats(s)) {
            *c += f;
        }
        counts[s.label] += 1;
    }
    for (c, &k) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= k.max(1) as f64);
    }
    let correct = data
        .test
        .iter()
        .filter(|s| {
            let f = feats(s);
            let best = (0..classes)
                .min_by(|&a, &b| {
                    let da: f64 = f.iter().zip(&centroids[a]).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f64 = f.iter().zip(&centroids[b]).map(|(x, y)| (x - y).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap_or(0);
            best == s.label
        })
        .count();
    correct as f64 / data.test.len() as f64
}

pub fn save(data: &Dataset, path: &Path) -> Result<()> {
    let mut c = Container::new("dataset")
        .with_meta("dataset", data.spec.kind.name())
        .with_meta("n_train", data.train.len())
        .with_meta("n_test", data.test.len());
    for (split, samples) in [("train", &data.train), ("test", &data.test)] {
        for (i, s) in samples.iter().enumerate() {
            let shape = s.x.shape();
            let mut dims = shape.axes().to_vec();
            dims.push(shape.channels());
            let concepts: String = s.concepts.iter().map(|&b| if b { '1' } else { '0' }).collect();
            let latent: Vec<String> = s.latent.iter().map(|(k, v)| format!("{k}={v:e}")).collect();
            c.meta.push((
                format!("{split}.{i}"),
                format!("{} {} {} {}", s.label, concepts, s.placement, latent.join(",")),
            ));
            c.push_tensor(format!("{split}.{i}.x"), Tensor::new(dims, s.x.values().to_vec())?);
            if let Some(adj) = s.x.adjacency() {
                let n = shape.points();
                c.push_tensor(format!("{split}.{i}.adj"), Tensor::new(vec![n, n], adj.to_vec())?);
            }
        }
    }
    c.save(path)?;
    let manifest = serde_json::to_string_pretty(&data.spec)
        .map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path.with_extension("json"), manifest)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset> {
    let manifest = std::fs::read_to_string(path.with_extension("json"))?;
    let spec: DatasetSpec =
        serde_json::from_str(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let c = Container::load(path)?;
    if c.kind != "dataset" {
        return Err(Error::Format(format!("expected a dataset, found `{}`", c.kind)));
    }
    let read_split = |split: &str, n: usize| -> Result<Vec<Sample>> {
        (0..n)
            .map(|i| {
                let key = format!("{split}.{i}");
                let meta = c.meta(&key)?;
                let mut parts = meta.splitn(4, ' ');
                let mut next = || {
                    parts
                        .next()
                        .ok_or_else(|| Error::Format(format!("truncated entry `{key}`")))
                };
                let label: usize = next()?
                    .parse()
                    .map_err(|_| Error::Format(format!("bad label in `{key}`")))?;
                let concepts = next()?.chars().map(|ch| ch == '1').collect();
                let placement = next()?.to_string();
                let latent = next()
                    .unwrap_or("")
                    .split(',')
                    .filter(|kv| !kv.is_empty())
                    .map(|kv| {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| Error::Format(format!("bad latent in `{key}`")))?;
                        let v = v
                            .parse()
                            .map_err(|_| Error::Format(format!("bad latent in `{key}`")))?;
                        Ok((k.to_string(), v))
                    })
                    .collect::<Result<_>>()?;
                let t = c.tensor(&format!("{key}.x"))?;
                let (axes, channels) = t.dims().split_at(t.dims().len() - 1);
                let mut x = Signal::new(DomainShape::new(axes.to_vec(), channels[0])?, t.data().to_vec())?;
                if let Ok(adj) = c.tensor(&format!("{key}.adj")) {
                    x = x.with_adjacency(adj.data().to_vec())?;
                }
                let placement = spec.kind.group_for(&x)?.parse_element(&placement)?;
                Ok(Sample {
                    x,
                    label,
                    concepts,
                    latent,
                    placement,
                })
            })
            .collect()
    };
    let n_train = c.meta_parse("n_train")?;
    let n_test = c.meta_parse("n_test")?;
    Ok(Dataset {
        spec,
        train: read_split("train", n_train)?,
        test: read_split("test", n_test)?,
    })
}

/// Placement element of a sample, as a permutation when the group is
/// symmetric.
pub fn placement_permutation(s: &Sample) -> Option<&[usize]> {
    match s.placement.params() {
        ElementParams::Permutation(p) => Some(p),
        _ => None,
    }
}

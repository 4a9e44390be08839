use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::signal::{DomainShape, Signal};
use crate::error::{Error, Result};

/// Default cap on the group order for exact enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 4096;

/// The finite groups in scope, with the extents they act on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupKind {
    /// Cyclic translations `Z/TZ` of a 1-d axis.
    Cyclic { len: usize },
    /// Cyclic translations `(Z/WZ) × (Z/HZ)` of a 2-d grid.
    Cyclic2d { width: usize, height: usize },
    /// Quarter-turn rotations and reflections of a square grid.
    Dihedral4 { side: usize },
    /// All permutations of `n` set elements or graph nodes.
    Symmetric { n: usize },
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKind::Cyclic { len } => write!(f, "cyclic({len})"),
            GroupKind::Cyclic2d { width, height } => write!(f, "cyclic2d({width},{height})"),
            GroupKind::Dihedral4 { side } => write!(f, "dihedral4({side})"),
            GroupKind::Symmetric { n } => write!(f, "symmetric({n})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ElementParams {
    Shift(usize),
    Shift2d(usize, usize),
    Dihedral { quarter_turns: u8, reflect: bool },
    /// `perm[i] = g(i)`; the action sends the value at point `i` to `perm[i]`.
    Permutation(Vec<usize>),
}

/// A group element tagged with the group it belongs to. Params are always
/// canonical: shifts reduced, permutations bijective.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupElement {
    group: GroupKind,
    params: ElementParams,
}

impl GroupElement {
    pub fn group(&self) -> GroupKind {
        self.group
    }

    pub fn params(&self) -> &ElementParams {
        &self.params
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.params {
            ElementParams::Shift(s) => write!(f, "shift:{s}"),
            ElementParams::Shift2d(a, b) => write!(f, "shift2d:{a},{b}"),
            ElementParams::Dihedral {
                quarter_turns,
                reflect,
            } => write!(f, "d4:{quarter_turns},{}", u8::from(*reflect)),
            ElementParams::Permutation(p) => {
                let parts: Vec<String> = p.iter().map(|i| i.to_string()).collect();
                write!(f, "perm:{}", parts.join(","))
            }
        }
    }
}

/// Order of a group, exact when it fits in `u128`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupOrder {
    Finite(u128),
    /// Too large to represent; only produced by `symmetric(n)` for large `n`.
    Huge,
}

impl GroupOrder {
    pub fn at_most(self, cap: usize) -> bool {
        matches!(self, GroupOrder::Finite(o) if o <= cap as u128)
    }
}

impl fmt::Display for GroupOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupOrder::Finite(o) => write!(f, "{o}"),
            GroupOrder::Huge => write!(f, "> 2^128"),
        }
    }
}

/// A finite symmetry group together with the domain its permutation
/// representation acts on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetryGroup {
    kind: GroupKind,
    acts_on: DomainShape,
    enumeration_cap: usize,
}

impl SymmetryGroup {
    pub fn new(kind: GroupKind, acts_on: DomainShape) -> Result<Self> {
        let axes = acts_on.axes();
        let ok = match kind {
            GroupKind::Cyclic { len } => axes == [len] && len >= 1,
            GroupKind::Cyclic2d { width, height } => axes == [width, height],
            GroupKind::Dihedral4 { side } => axes == [side, side],
            GroupKind::Symmetric { n } => axes == [n],
        };
        if !ok {
            return Err(Error::InvalidGroup(format!(
                "{kind} cannot act on domain {acts_on}"
            )));
        }
        Ok(Self {
            kind,
            acts_on,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        })
    }

    /// Builds the group of the given kind acting on the signal's own domain,
    /// taking extents from the signal. Used for graphs of varying size.
    pub fn for_signal(template: GroupKind, x: &Signal) -> Result<Self> {
        let axes = x.shape().axes();
        let kind = match (template, axes) {
            (GroupKind::Cyclic { .. }, [t]) => GroupKind::Cyclic { len: *t },
            (GroupKind::Cyclic2d { .. }, [w, h]) => GroupKind::Cyclic2d {
                width: *w,
                height: *h,
            },
            (GroupKind::Dihedral4 { .. }, [w, _]) => GroupKind::Dihedral4 { side: *w },
            (GroupKind::Symmetric { .. }, [n]) => GroupKind::Symmetric { n: *n },
            _ => {
                return Err(Error::InvalidGroup(format!(
                    "{template} cannot act on domain {}",
                    x.shape()
                )))
            }
        };
        Self::new(kind, x.shape().clone())
    }

    pub fn with_enumeration_cap(mut self, cap: usize) -> Self {
        self.enumeration_cap = cap;
        self
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn acts_on(&self) -> &DomainShape {
        &self.acts_on
    }

    pub fn order(&self) -> GroupOrder {
        match self.kind {
            GroupKind::Cyclic { len } => GroupOrder::Finite(len as u128),
            GroupKind::Cyclic2d { width, height } => GroupOrder::Finite((width * height) as u128),
            GroupKind::Dihedral4 { .. } => GroupOrder::Finite(8),
            GroupKind::Symmetric { n } => {
                let mut acc: u128 = 1;
                for k in 2..=n as u128 {
                    match acc.checked_mul(k) {
                        Some(v) => acc = v,
                        None => return GroupOrder::Huge,
                    }
                }
                GroupOrder::Finite(acc)
            }
        }
    }

    pub fn is_enumerable(&self) -> bool {
        self.order().at_most(self.enumeration_cap)
    }

    fn order_label(&self) -> String {
        match (self.kind, self.order()) {
            (GroupKind::Symmetric { n }, _) => format!("{n}!"),
            (_, o) => o.to_string(),
        }
    }

    fn element(&self, params: ElementParams) -> GroupElement {
        GroupElement {
            group: self.kind,
            params,
        }
    }

    pub fn identity(&self) -> GroupElement {
        let params = match self.kind {
            GroupKind::Cyclic { .. } => ElementParams::Shift(0),
            GroupKind::Cyclic2d { .. } => ElementParams::Shift2d(0, 0),
            GroupKind::Dihedral4 { .. } => ElementParams::Dihedral {
                quarter_turns: 0,
                reflect: false,
            },
            GroupKind::Symmetric { n } => ElementParams::Permutation((0..n).collect()),
        };
        self.element(params)
    }

    /// Checks that `g` is a canonical element of this group.
    pub fn check_member(&self, g: &GroupElement) -> Result<()> {
        if g.group != self.kind {
            return Err(Error::GroupMismatch {
                expected: self.kind.to_string(),
                found: g.group.to_string(),
            });
        }
        let ok = match (self.kind, &g.params) {
            (GroupKind::Cyclic { len }, ElementParams::Shift(s)) => *s < len,
            (GroupKind::Cyclic2d { width, height }, ElementParams::Shift2d(a, b)) => {
                *a < width && *b < height
            }
            (GroupKind::Dihedral4 { .. }, ElementParams::Dihedral { quarter_turns, .. }) => {
                *quarter_turns < 4
            }
            (GroupKind::Symmetric { n }, ElementParams::Permutation(p)) => is_bijection(p, n),
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidElement(format!("{g} is not in {}", self.kind)))
        }
    }

    /// Group composition `g1 ∘ g2` (apply `g2` first).
    pub fn compose(&self, g1: &GroupElement, g2: &GroupElement) -> Result<GroupElement> {
        self.check_member(g1)?;
        self.check_member(g2)?;
        let params = match (self.kind, &g1.params, &g2.params) {
            (GroupKind::Cyclic { len }, ElementParams::Shift(a), ElementParams::Shift(b)) => {
                ElementParams::Shift((a + b) % len)
            }
            (
                GroupKind::Cyclic2d { width, height },
                ElementParams::Shift2d(a1, b1),
                ElementParams::Shift2d(a2, b2),
            ) => ElementParams::Shift2d((a1 + a2) % width, (b1 + b2) % height),
            (
                GroupKind::Dihedral4 { .. },
                ElementParams::Dihedral {
                    quarter_turns: r1,
                    reflect: s1,
                },
                ElementParams::Dihedral {
                    quarter_turns: r2,
                    reflect: s2,
                },
            ) => {
                // F R = R⁻¹ F, so R^r1 F^s1 R^r2 F^s2 = R^(r1 ± r2) F^(s1+s2).
                let r2 = if *s1 { (4 - r2) % 4 } else { *r2 };
                ElementParams::Dihedral {
                    quarter_turns: (r1 + r2) % 4,
                    reflect: s1 ^ s2,
                }
            }
            (GroupKind::Symmetric { .. }, ElementParams::Permutation(p1), ElementParams::Permutation(p2)) => {
                ElementParams::Permutation(p2.iter().map(|&i| p1[i]).collect())
            }
            _ => unreachable!("membership checked above"),
        };
        Ok(self.element(params))
    }

    pub fn inverse(&self, g: &GroupElement) -> Result<GroupElement> {
        self.check_member(g)?;
        let params = match (self.kind, &g.params) {
            (GroupKind::Cyclic { len }, ElementParams::Shift(s)) => {
                ElementParams::Shift((len - s) % len)
            }
            (GroupKind::Cyclic2d { width, height }, ElementParams::Shift2d(a, b)) => {
                ElementParams::Shift2d((width - a) % width, (height - b) % height)
            }
            (
                GroupKind::Dihedral4 { .. },
                ElementParams::Dihedral {
                    quarter_turns,
                    reflect,
                },
            ) => {
                if *reflect {
                    // Reflections are involutions.
                    g.params.clone()
                } else {
                    ElementParams::Dihedral {
                        quarter_turns: (4 - quarter_turns) % 4,
                        reflect: false,
                    }
                }
            }
            (GroupKind::Symmetric { .. }, ElementParams::Permutation(p)) => {
                ElementParams::Permutation(invert_permutation(p))
            }
            _ => unreachable!("membership checked above"),
        };
        Ok(self.element(params))
    }

    /// All elements, identity first.
    pub fn enumerate(&self) -> Result<Vec<GroupElement>> {
        if !self.is_enumerable() {
            return Err(Error::OrderTooLarge {
                order: self.order_label(),
                cap: self.enumeration_cap,
            });
        }
        let out = match self.kind {
            GroupKind::Cyclic { len } => (0..len).map(|s| self.element(ElementParams::Shift(s))).collect(),
            GroupKind::Cyclic2d { width, height } => (0..width)
                .flat_map(|a| (0..height).map(move |b| (a, b)))
                .map(|(a, b)| self.element(ElementParams::Shift2d(a, b)))
                .collect(),
            GroupKind::Dihedral4 { .. } => [false, true]
                .into_iter()
                .flat_map(|reflect| {
                    (0..4u8).map(move |quarter_turns| ElementParams::Dihedral {
                        quarter_turns,
                        reflect,
                    })
                })
                .map(|p| self.element(p))
                .collect(),
            GroupKind::Symmetric { n } => {
                let mut perm: Vec<usize> = (0..n).collect();
                let mut out = vec![self.element(ElementParams::Permutation(perm.clone()))];
                while next_permutation(&mut perm) {
                    out.push(self.element(ElementParams::Permutation(perm.clone())));
                }
                out
            }
        };
        Ok(out)
    }

    fn random_element<R: Rng>(&self, rng: &mut R) -> GroupElement {
        let params = match self.kind {
            GroupKind::Cyclic { len } => ElementParams::Shift(rng.random_range(0..len)),
            GroupKind::Cyclic2d { width, height } => {
                ElementParams::Shift2d(rng.random_range(0..width), rng.random_range(0..height))
            }
            GroupKind::Dihedral4 { .. } => ElementParams::Dihedral {
                quarter_turns: rng.random_range(0..4u8),
                reflect: rng.random_bool(0.5),
            },
            GroupKind::Symmetric { n } => {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(rng);
                ElementParams::Permutation(p)
            }
        };
        self.element(params)
    }

    /// Draws `n` elements: i.i.d. uniform, or a uniform `n`-subset when
    /// `without_replacement` is set. Deterministic given `seed`.
    pub fn sample(&self, seed: u64, n: usize, without_replacement: bool) -> Result<Vec<GroupElement>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if !without_replacement {
            return Ok((0..n).map(|_| self.random_element(&mut rng)).collect());
        }
        let order = self.order();
        if let GroupOrder::Finite(o) = order {
            if n as u128 > o {
                return Err(Error::SampleTooLarge {
                    requested: n,
                    order: self.order_label(),
                });
            }
        }
        if self.is_enumerable() {
            let mut all = self.enumerate()?;
            let (chosen, _) = all.partial_shuffle(&mut rng, n);
            return Ok(chosen.to_vec());
        }
        let mut seen = HashSet::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let g = self.random_element(&mut rng);
            if seen.insert(g.params.clone()) {
                out.push(g);
            }
        }
        Ok(out)
    }

    /// For each output domain point `p`, the input point whose channel
    /// vector lands at `p`: `(ρ[g]x)(p) = x(src[p])`.
    pub fn source_map(&self, g: &GroupElement) -> Result<Vec<usize>> {
        self.check_member(g)?;
        let map = match (self.kind, &g.params) {
            (GroupKind::Cyclic { len }, ElementParams::Shift(s)) => {
                (0..len).map(|t| (t + len - s) % len).collect()
            }
            (GroupKind::Cyclic2d { width, height }, ElementParams::Shift2d(a, b)) => {
                let mut map = Vec::with_capacity(width * height);
                for u in 0..width {
                    for v in 0..height {
                        let su = (u + width - a) % width;
                        let sv = (v + height - b) % height;
                        map.push(su * height + sv);
                    }
                }
                map
            }
            (
                GroupKind::Dihedral4 { side },
                ElementParams::Dihedral {
                    quarter_turns,
                    reflect,
                },
            ) => {
                let n = side;
                let mut idx: Vec<usize> = (0..n * n).collect();
                let apply = |idx: &Vec<usize>, m: &dyn Fn(usize, usize) -> (usize, usize)| {
                    let mut out = vec![0; n * n];
                    for i in 0..n {
                        for j in 0..n {
                            let (si, sj) = m(i, j);
                            out[i * n + j] = idx[si * n + sj];
                        }
                    }
                    out
                };
                if *reflect {
                    idx = apply(&idx, &|i, j| (i, n - 1 - j));
                }
                for _ in 0..*quarter_turns {
                    idx = apply(&idx, &|i, j| (n - 1 - j, i));
                }
                idx
            }
            (GroupKind::Symmetric { .. }, ElementParams::Permutation(p)) => invert_permutation(p),
            _ => unreachable!("membership checked above"),
        };
        Ok(map)
    }

    /// The permutation representation `ρ[g]x`. Channels move with their point;
    /// an attached adjacency matrix is permuted on both indices.
    pub fn act(&self, g: &GroupElement, x: &Signal) -> Result<Signal> {
        x.check_shape(&self.acts_on)?;
        let src = self.source_map(g)?;
        permute_signal(x, &src)
    }

    /// Acts on an arbitrary signal defined over the same domain, regardless of
    /// its channel count (e.g. an equivariant feature map).
    pub fn act_on_domain(&self, g: &GroupElement, x: &Signal) -> Result<Signal> {
        if x.shape().axes() != self.acts_on.axes() {
            return Err(Error::ShapeMismatch {
                expected: self.acts_on.to_string(),
                found: x.shape().to_string(),
            });
        }
        let src = self.source_map(g)?;
        permute_signal(x, &src)
    }

    pub fn parse_element(&self, s: &str) -> Result<GroupElement> {
        let (tag, body) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidElement(format!("missing tag in `{s}`")))?;
        let nums = |body: &str| -> Result<Vec<usize>> {
            body.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::InvalidElement(format!("bad integer `{t}` in `{s}`")))
                })
                .collect()
        };
        let params = match (tag, self.kind) {
            ("shift", GroupKind::Cyclic { len }) => {
                let v = nums(body)?;
                match v[..] {
                    [a] => ElementParams::Shift(a % len),
                    _ => return Err(Error::InvalidElement(s.into())),
                }
            }
            ("shift2d", GroupKind::Cyclic2d { width, height }) => match nums(body)?[..] {
                [a, b] => ElementParams::Shift2d(a % width, b % height),
                _ => return Err(Error::InvalidElement(s.into())),
            },
            ("d4", GroupKind::Dihedral4 { .. }) => match nums(body)?[..] {
                [r, f] if f <= 1 => ElementParams::Dihedral {
                    quarter_turns: (r % 4) as u8,
                    reflect: f == 1,
                },
                _ => return Err(Error::InvalidElement(s.into())),
            },
            ("perm", GroupKind::Symmetric { .. }) => ElementParams::Permutation(nums(body)?),
            _ => {
                return Err(Error::GroupMismatch {
                    expected: self.kind.to_string(),
                    found: s.to_string(),
                })
            }
        };
        let g = self.element(params);
        self.check_member(&g)?;
        Ok(g)
    }
}

fn permute_signal(x: &Signal, src: &[usize]) -> Result<Signal> {
    let c = x.shape().channels();
    let mut values = Vec::with_capacity(x.values().len());
    for &s in src {
        values.extend_from_slice(x.point(s));
    }
    let out = Signal::new(x.shape().clone(), values)?;
    match x.adjacency() {
        None => Ok(out),
        Some(adj) => {
            let n = src.len();
            debug_assert_eq!(c * n, x.values().len());
            let mut permuted = vec![0.0; n * n];
            for u in 0..n {
                for v in 0..n {
                    permuted[u * n + v] = adj[src[u] * n + src[v]];
                }
            }
            out.with_adjacency(permuted)
        }
    }
}

fn is_bijection(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &i in p {
        if i >= n || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

pub(crate) fn invert_permutation(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &pi) in p.iter().enumerate() {
        inv[pi] = i;
    }
    inv
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

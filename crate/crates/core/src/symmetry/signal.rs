use std::fmt;

use crate::error::{Error, Result};

/// Extents of a finite domain plus the channel count carried at each point.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DomainShape {
    axes: Vec<usize>,
    channels: usize,
}

impl DomainShape {
    pub fn new(axes: Vec<usize>, channels: usize) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|&a| a == 0) {
            return Err(Error::InvalidArgument(format!(
                "domain axes must be non-empty and positive, got {axes:?}"
            )));
        }
        if channels == 0 {
            return Err(Error::InvalidArgument("channel count must be ≥ 1".into()));
        }
        Ok(Self { axes, channels })
    }

    pub fn axes(&self) -> &[usize] {
        &self.axes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of domain points.
    pub fn points(&self) -> usize {
        self.axes.iter().product()
    }

    /// Total number of scalar values (`points × channels`).
    pub fn len(&self) -> usize {
        self.points() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for DomainShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let axes: Vec<String> = self.axes.iter().map(|a| a.to_string()).collect();
        write!(f, "[{}]x{}", axes.join("x"), self.channels)
    }
}

/// A real-valued field over a finite domain, laid out domain-major
/// (`values[point * channels + channel]`).
///
/// Graph signals additionally carry a dense `points × points` adjacency
/// matrix that is permuted together with the node features.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    shape: DomainShape,
    values: Vec<f64>,
    adjacency: Option<Vec<f64>>,
}

impl Signal {
    pub fn new(shape: DomainShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {shape}", shape.len()),
                found: format!("{} values", values.len()),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("signal value at index {i}")));
        }
        Ok(Self {
            shape,
            values,
            adjacency: None,
        })
    }

    pub fn zeros(shape: DomainShape) -> Self {
        let n = shape.len();
        Self {
            shape,
            values: vec![0.0; n],
            adjacency: None,
        }
    }

    /// Attach an adjacency matrix; only valid on single-axis (node) domains.
    pub fn with_adjacency(mut self, adjacency: Vec<f64>) -> Result<Self> {
        if self.shape.axes().len() != 1 {
            return Err(Error::InvalidArgument(
                "adjacency requires a single node axis".into(),
            ));
        }
        let n = self.shape.points();
        if adjacency.len() != n * n {
            return Err(Error::ShapeMismatch {
                expected: format!("{} adjacency entries", n * n),
                found: adjacency.len().to_string(),
            });
        }
        self.adjacency = Some(adjacency);
        Ok(self)
    }

    pub fn shape(&self) -> &DomainShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn adjacency(&self) -> Option<&[f64]> {
        self.adjacency.as_deref()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same shape and adjacency, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        let mut out = Signal::new(self.shape.clone(), values)?;
        out.adjacency = self.adjacency.clone();
        Ok(out)
    }

    /// Channel vector at a domain point.
    pub fn point(&self, p: usize) -> &[f64] {
        let c = self.shape.channels();
        &self.values[p * c..(p + 1) * c]
    }

    pub fn check_shape(&self, expected: &DomainShape) -> Result<()> {
        if &self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.to_string(),
                found: self.shape.to_string(),
            });
        }
        Ok(())
    }

    /// Bitwise key over values and adjacency, for memoization.
    pub fn bit_key(&self) -> Vec<u64> {
        let mut key: Vec<u64> = self.shape.axes().iter().map(|&a| a as u64).collect();
        key.push(self.shape.channels() as u64);
        key.extend(self.values.iter().map(|v| v.to_bits()));
        if let Some(adj) = &self.adjacency {
            key.extend(adj.iter().map(|v| v.to_bits()));
        }
        key
    }
}

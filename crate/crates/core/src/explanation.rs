use crate::error::{Error, Result};
use crate::symmetry::Signal;

/// The three explanation families: feature attributions shaped like the
/// input, per-training-example importance, and per-concept presence.
#[derive(Debug, Clone, PartialEq)]
pub enum Explanation {
    Feature(Signal),
    Examples(Vec<f64>),
    /// Pre-threshold concept decision scores; a concept is present iff its
    /// score is strictly positive.
    Concepts(Vec<f64>),
}

impl Explanation {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Explanation::Feature(_) => "feature attribution",
            Explanation::Examples(_) => "example importance",
            Explanation::Concepts(_) => "concept presence",
        }
    }

    /// Concept explanation from a binary presence vector.
    pub fn concepts_from_presence(presence: &[bool]) -> Self {
        Explanation::Concepts(presence.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect())
    }

    /// Real coordinates: attribution values, importance scores or concept scores.
    pub fn as_slice(&self) -> &[f64] {
        match self {
            Explanation::Feature(s) => s.values(),
            Explanation::Examples(v) | Explanation::Concepts(v) => v,
        }
    }

    pub fn presence(&self) -> Option<Vec<bool>> {
        match self {
            Explanation::Concepts(v) => Some(v.iter().map(|&s| s > 0.0).collect()),
            _ => None,
        }
    }

    /// Same kind (and shape) with new real coordinates.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.as_slice().len() {
            return Err(Error::LengthMismatch {
                left: self.as_slice().len(),
                right: values.len(),
            });
        }
        Ok(match self {
            Explanation::Feature(s) => Explanation::Feature(s.with_values(values)?),
            Explanation::Examples(_) => Explanation::Examples(values),
            Explanation::Concepts(_) => Explanation::Concepts(values),
        })
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Explanation::Concepts(_))
    }
}

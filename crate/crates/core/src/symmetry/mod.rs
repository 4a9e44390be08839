//! Finite symmetry groups, their permutation representations, and their
//! actions on signals and explanations.

mod group;
mod signal;

pub use group::{
    ElementParams, GroupElement, GroupKind, GroupOrder, SymmetryGroup, DEFAULT_ENUMERATION_CAP,
};
pub use signal::{DomainShape, Signal};

use crate::error::{Error, Result};
use crate::explanation::Explanation;

/// How the group acts on the explanation space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputAction {
    /// `ρ' = ρ`, for feature attributions.
    SameAsInput,
    /// `ρ' = id`, for example and concept explanations.
    Trivial,
}

impl OutputAction {
    pub fn name(self) -> &'static str {
        match self {
            OutputAction::SameAsInput => "same_as_input",
            OutputAction::Trivial => "trivial",
        }
    }
}

/// `ρ'[g] e`.
pub fn act_on_explanation(
    group: &SymmetryGroup,
    g: &GroupElement,
    e: &Explanation,
    mode: OutputAction,
) -> Result<Explanation> {
    match (mode, e) {
        (OutputAction::SameAsInput, Explanation::Feature(s)) => {
            Ok(Explanation::Feature(group.act_on_domain(g, s)?))
        }
        (OutputAction::SameAsInput, other) => Err(Error::ActionMismatch {
            action: mode.name(),
            kind: other.kind_name(),
        }),
        (OutputAction::Trivial, other) => {
            group.check_member(g)?;
            Ok(other.clone())
        }
    }
}

#[cfg(test)]
mod tests;

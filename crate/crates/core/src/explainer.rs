use crate::error::Result;
use crate::explanation::Explanation;
use crate::symmetry::{OutputAction, Signal};

/// Anything that maps an input signal to an explanation.
pub trait Explainer: Sync {
    fn name(&self) -> String;

    /// How the group acts on this explainer's outputs.
    fn output_action(&self) -> OutputAction;

    fn explain(&self, x: &Signal) -> Result<Explanation>;
}

impl<E: Explainer + ?Sized> Explainer for &E {
    fn name(&self) -> String {
        (**self).name()
    }

    fn output_action(&self) -> OutputAction {
        (**self).output_action()
    }

    fn explain(&self, x: &Signal) -> Result<Explanation> {
        (**self).explain(x)
    }
}

impl<E: Explainer + ?Sized> Explainer for Box<E> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn output_action(&self) -> OutputAction {
        (**self).output_action()
    }

    fn explain(&self, x: &Signal) -> Result<Explanation> {
        (**self).explain(x)
    }
}

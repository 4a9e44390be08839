use std::path::Path;

use super::{Model, ModelKind, WidthConfig};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::tensor_engine::Tensor;

/// A parameter snapshot taken during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub parameters: Vec<(String, Tensor)>,
    pub optimizer_lr: f64,
}

fn join(v: &[usize]) -> String {
    if v.is_empty() {
        return "-".into();
    }
    v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

fn split(s: &str) -> Result<Vec<usize>> {
    if s == "-" {
        return Ok(vec![]);
    }
    s.split(',')
        .map(|t| t.parse().map_err(|_| Error::Format(format!("bad list `{s}`"))))
        .collect()
}

impl Model {
    pub fn to_container(&self, epoch: usize, lr: f64) -> Container {
        let cfg = self.config();
        let mut c = Container::new(self.kind().name())
            .with_meta("epoch", epoch)
            .with_meta("lr", format!("{lr:e}"))
            .with_meta("widths", join(&cfg.widths))
            .with_meta("dense", cfg.dense)
            .with_meta("classes", cfg.classes)
            .with_meta("channels", cfg.channels)
            .with_meta("domain", join(&cfg.domain))
            .with_meta("kernel", cfg.kernel);
        for (name, t) in self.parameters() {
            c.push_tensor(name.clone(), t.clone());
        }
        c
    }

    /// Rebuilds a model and its checkpoint metadata from a container.
    pub fn from_container(c: &Container) -> Result<(Model, Checkpoint)> {
        let kind = ModelKind::from_name(&c.kind)?;
        let config = WidthConfig {
            widths: split(c.meta("widths")?)?,
            dense: c.meta_parse("dense")?,
            classes: c.meta_parse("classes")?,
            channels: c.meta_parse("channels")?,
            domain: split(c.meta("domain")?)?,
            kernel: c.meta_parse("kernel")?,
        };
        let template = Model::build(kind, config, 0)?;
        let model = template.with_parameters(c.tensors.clone())?;
        let ckpt = Checkpoint {
            epoch: c.meta_parse("epoch")?,
            parameters: c.tensors.clone(),
            optimizer_lr: c.meta_parse("lr")?,
        };
        Ok((model, ckpt))
    }

    pub fn save(&self, path: &Path, epoch: usize, lr: f64) -> Result<()> {
        self.to_container(epoch, lr).save(path)
    }

    pub fn load(path: &Path) -> Result<(Model, Checkpoint)> {
        Self::from_container(&Container::load(path)?)
    }

    /// The model with a checkpoint's parameters.
    pub fn at(&self, ckpt: &Checkpoint) -> Result<Model> {
        self.with_parameters(ckpt.parameters.clone())
    }
}

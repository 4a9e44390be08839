use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::FeatureMethod;
use crate::concept_probes::{ProbeKind, DEFAULT_CONCEPT_SET_SIZE};
use crate::data_synth::{DatasetKind, DatasetSpec};
use crate::error::{Error, Result};
use crate::example_importance::{DEFAULT_DAMPING, DEFAULT_SIMPLEX_EPOCHS, DEFAULT_SIMPLEX_LR, DEFAULT_SUBSET_SIZE};
use crate::model_zoo::{ModelKind, Optimizer, Tap, TrainConfig};
use crate::symmetry::GroupKind;

pub const DEFAULT_N_TEST: usize = 256;
pub const DEFAULT_N_SAMP: usize = 50;

/// A full experiment, read from TOML. Every field has a default, so an empty
/// file describes the default ECG run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub train: TrainSection,
    pub methods: MethodsConfig,
    pub metrics: MetricsConfig,
    pub enforce: EnforceConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: String,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Empty means every architecture that fits the dataset.
    pub models: Vec<String>,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub checkpoint_every: usize,
    /// Train on randomly transformed copies of each sample.
    pub augment: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodsConfig {
    pub feature: Vec<String>,
    pub example: Vec<String>,
    pub concept: Vec<String>,
    /// Taps used by representation-based example methods and concept probes.
    pub taps: Vec<String>,
    pub ig_steps: usize,
    pub shap_baselines: usize,
    pub shap_points: usize,
    /// Standard deviation of the gradient-shap noise baselines; unset uses
    /// each input's own standard deviation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shap_stdev: Option<f64>,
    pub occlusion_window: usize,
    pub subset_size: usize,
    pub damping: f64,
    pub simplex_epochs: usize,
    pub simplex_lr: f64,
    pub concept_set_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeChoice {
    /// Exact on enumerable groups, Monte Carlo otherwise.
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub mode: ModeChoice,
    pub n_samp: usize,
    pub model_invariance: bool,
    pub sensitivity: bool,
    pub sensitivity_epsilon: f64,
    pub sensitivity_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnforceConfig {
    /// Sample sizes of the sweep; empty disables it.
    pub n_inv: Vec<usize>,
    pub seed: u64,
    /// Explainer names to wrap, e.g. `cav_equiv`.
    pub methods: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub svg: bool,
    /// Fail the run when a guaranteed property is violated.
    pub assert: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("eqxai-out"),
            data: DataConfig::default(),
            train: TrainSection::default(),
            methods: MethodsConfig::default(),
            metrics: MetricsConfig::default(),
            enforce: EnforceConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: "ecg_like".into(),
            n_train: 512,
            n_test: DEFAULT_N_TEST,
            noise_level: 0.05,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            models: vec![],
            optimizer: t.optimizer,
            lr: t.lr,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            batch_size: t.batch_size,
            checkpoint_every: t.checkpoint_every,
            augment: false,
        }
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for MethodsConfig {
    fn default() -> Self {
        Self {
            feature: strings(&["saliency", "integrated_gradients", "gradient_shap", "ablation", "occlusion"]),
            example: strings(&["influence_functions", "tracin", "simplex", "representation_similarity"]),
            concept: strings(&["cav", "car"]),
            taps: strings(&["inv", "equiv"]),
            ig_steps: 64,
            shap_baselines: 8,
            shap_points: 8,
            shap_stdev: None,
            occlusion_window: 3,
            subset_size: DEFAULT_SUBSET_SIZE,
            damping: DEFAULT_DAMPING,
            simplex_epochs: DEFAULT_SIMPLEX_EPOCHS,
            simplex_lr: DEFAULT_SIMPLEX_LR,
            concept_set_size: DEFAULT_CONCEPT_SET_SIZE,
        }
    }
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            mode: ModeChoice::Auto,
            n_samp: DEFAULT_N_SAMP,
            model_invariance: true,
            sensitivity: false,
            sensitivity_epsilon: 0.02,
            sensitivity_samples: 10,
        }
    }
}

impl Default for EnforceConfig {
    fn default() -> Self {
        Self {
            n_inv: vec![],
            seed: 0,
            methods: strings(&["cav_equiv"]),
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { svg: true, assert: true }
    }
}

pub const FEATURE_METHODS: [&str; 7] = [
    "saliency",
    "integrated_gradients",
    "input_x_gradient",
    "gradient_shap",
    "ablation",
    "occlusion",
    "feature_permutation",
];
pub const EXAMPLE_METHODS: [&str; 4] = ["influence_functions", "tracin", "simplex", "representation_similarity"];

/// Whether the domain has a neighbourhood structure that windows respect.
fn is_grid(data: &DatasetKind) -> bool {
    matches!(data.group_kind(), GroupKind::Cyclic { .. } | GroupKind::Cyclic2d { .. })
}

/// Architectures that accept a dataset's inputs.
pub fn models_for(data: &DatasetKind) -> &'static [ModelKind] {
    match data {
        DatasetKind::EcgLike { .. } => &[ModelKind::AllCnn1d, ModelKind::FlattenCnn1d],
        DatasetKind::ToyImages { .. } => &[ModelKind::AllCnn2d, ModelKind::FlattenCnn2d],
        DatasetKind::PointClouds { .. } => &[ModelKind::DeepSet],
        DatasetKind::TokenBags { .. } => &[ModelKind::BowMlp],
        DatasetKind::MotifGraphs { .. } => &[ModelKind::GraphConv],
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Defaults for one dataset. Unordered domains occlude single points;
    /// graphs vary in size, so they also skip the equivariant tap.
    pub fn for_dataset(name: &str) -> Result<Self> {
        let kind = DatasetKind::from_name(name)?;
        let mut cfg = Self::default();
        cfg.data.dataset = name.to_string();
        cfg.output_dir = PathBuf::from(format!("eqxai-out/{name}"));
        if !is_grid(&kind) {
            cfg.methods.occlusion_window = 1;
        }
        if kind.input_shape().is_none() {
            cfg.methods.taps = strings(&["inv"]);
            cfg.enforce.methods = strings(&["cav_inv"]);
        }
        Ok(cfg)
    }

    pub fn dataset_kind(&self) -> Result<DatasetKind> {
        DatasetKind::from_name(&self.data.dataset)
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let mut spec = DatasetSpec::new(self.dataset_kind()?, self.data.n_train, self.data.n_test, self.seed);
        spec.noise_level = self.data.noise_level;
        Ok(spec)
    }

    pub fn model_kinds(&self) -> Result<Vec<ModelKind>> {
        let data = self.dataset_kind()?;
        if self.train.models.is_empty() {
            return Ok(models_for(&data).to_vec());
        }
        self.train
            .models
            .iter()
            .map(|m| {
                let kind = ModelKind::from_name(m).map_err(|_| Error::Config(format!("unknown model `{m}`")))?;
                if !models_for(&data).contains(&kind) {
                    return Err(Error::Config(format!("model `{m}` does not accept {} inputs", data.name())));
                }
                Ok(kind)
            })
            .collect()
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            optimizer: self.train.optimizer,
            lr: self.train.lr,
            weight_decay: self.train.weight_decay,
            epochs: self.train.epochs,
            checkpoint_every: self.train.checkpoint_every,
            batch_size: self.train.batch_size,
            seed: self.seed,
            augment: self.train.augment.then(|| self.dataset_kind().map(|d| d.group_kind())).transpose()?,
        })
    }

    pub fn feature_methods(&self) -> Result<Vec<FeatureMethod>> {
        let m = &self.methods;
        self.methods
            .feature
            .iter()
            .map(|name| {
                Ok(match name.as_str() {
                    "saliency" => FeatureMethod::Saliency,
                    "integrated_gradients" => FeatureMethod::IntegratedGradients { steps: m.ig_steps },
                    "input_x_gradient" => FeatureMethod::InputXGradient,
                    "gradient_shap" => FeatureMethod::GradientShap {
                        n_baselines: m.shap_baselines,
                        n_points: m.shap_points,
                        seed: self.seed,
                    },
                    "ablation" => FeatureMethod::Ablation,
                    "occlusion" => FeatureMethod::Occlusion {
                        window: m.occlusion_window,
                    },
                    "feature_permutation" => FeatureMethod::FeaturePermutation,
                    other => return Err(Error::Config(format!("unknown feature method `{other}`"))),
                })
            })
            .collect()
    }

    pub fn taps(&self) -> Result<Vec<Tap>> {
        self.methods
            .taps
            .iter()
            .map(|t| match Tap::from_name(t) {
                Ok(tap @ (Tap::Inv | Tap::Equiv)) => Ok(tap),
                _ => Err(Error::Config(format!("unknown tap `{t}`; use inv or equiv"))),
            })
            .collect()
    }

    pub fn probe_kinds(&self) -> Result<Vec<ProbeKind>> {
        self.methods
            .concept
            .iter()
            .map(|c| ProbeKind::from_name(c).map_err(|_| Error::Config(format!("unknown concept probe `{c}`"))))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let data = self.dataset_kind()?;
        self.model_kinds()?;
        self.feature_methods()?;
        self.probe_kinds()?;
        let taps = self.taps()?;
        let m = &self.methods;
        if m.feature.is_empty() && m.example.is_empty() && m.concept.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        if let Some(bad) = m.example.iter().find(|e| !EXAMPLE_METHODS.contains(&e.as_str())) {
            return Err(Error::Config(format!("unknown example method `{bad}`")));
        }
        let needs_taps = !m.concept.is_empty() || m.example.iter().any(|e| e == "simplex" || e == "representation_similarity");
        if needs_taps && taps.is_empty() {
            return Err(Error::Config("representation methods need at least one tap".into()));
        }
        if data.input_shape().is_none() {
            if taps.contains(&Tap::Equiv) {
                return Err(Error::Config(format!("{} inputs vary in size; the equiv tap is not comparable", data.name())));
            }
            if m.feature.iter().any(|f| f == "feature_permutation") {
                return Err(Error::Config(format!("{} inputs vary in size; feature_permutation needs a fixed shape", data.name())));
            }
        }
        if !is_grid(&data) && m.occlusion_window != 1 && m.feature.iter().any(|f| f == "occlusion") {
            return Err(Error::Config(format!(
                "{} points are unordered; occlusion windows must be 1",
                data.name()
            )));
        }
        if m.shap_stdev.is_some_and(|s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Config("shap_stdev must be positive".into()));
        }
        if self.data.n_train < 2 || self.data.n_test < 1 {
            return Err(Error::Config("need n_train ≥ 2 and n_test ≥ 1".into()));
        }
        if self.metrics.mode != ModeChoice::Exact && self.metrics.n_samp == 0 {
            return Err(Error::Config("n_samp must be ≥ 1 for Monte Carlo".into()));
        }
        if self.metrics.sensitivity && (self.metrics.sensitivity_samples == 0 || !(self.metrics.sensitivity_epsilon > 0.0)) {
            return Err(Error::Config("sensitivity needs samples ≥ 1 and epsilon > 0".into()));
        }
        if self.enforce.n_inv.contains(&0) {
            return Err(Error::Config("enforcement sample sizes must be ≥ 1".into()));
        }
        if !self.enforce.n_inv.is_empty() && self.enforce.methods.is_empty() {
            return Err(Error::Config("enforcement sweep has no methods".into()));
        }
        Ok(())
    }
}

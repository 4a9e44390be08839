//! Experiment orchestration: data, training, the method × metric grid and
//! the files a run leaves behind.

mod config;
mod output;
mod svg;
mod verdict;

#[cfg(test)]
mod tests;

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

pub use config::{
    models_for, DataConfig, EnforceConfig, ExperimentConfig, MethodsConfig, MetricsConfig, ModeChoice, OutputConfig,
    TrainSection, DEFAULT_N_SAMP, DEFAULT_N_TEST, EXAMPLE_METHODS, FEATURE_METHODS,
};
pub use output::{
    correlation_rows, quantile_rows, read_sweep_csv, scatter_rows, write_rows_csv, CorrelationRow, QuantileRow,
    ScatterRow, SweepRow,
};
pub use svg::{boxplot_svg, scatter_svg, sweep_svg};
pub use verdict::{drift, expectation, render_report, symbol, verdicts, Drift, Expectation, Verdict};

use crate::attribution::{Baseline, FeatureExplainer, FeatureMethod};
use crate::concept_probes::{concept_sets, ConceptProbe};
use crate::data_synth::{generate, Dataset};
use crate::error::{Error, Result};
use crate::example_importance::{
    InfluenceExplainer, RepresentationSimilarityExplainer, SimplexExplainer, TracInExplainer, TrainSubset,
};
use crate::explainer::Explainer;
use crate::invariance_enforcer::{EnforceMode, EnforcedExplainer};
use crate::model_zoo::{train, Checkpoint, Model, WidthConfig};
use crate::robustness_metrics::{
    equivariance_score, invariance_score, mean_ci, model_invariance_score, sensitivity_max, EstimatorMode,
    MetricEstimate, MetricKind, ReportRow, RobustnessReport,
};
use crate::symmetry::{OutputAction, Signal, SymmetryGroup};

/// Caps the rayon pool at `EQXAI_THREADS` workers when the variable is set.
/// Has no effect once the global pool exists.
pub fn init_threads() -> Result<()> {
    match std::env::var("EQXAI_THREADS") {
        Ok(v) => {
            let n: usize = v
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("EQXAI_THREADS must be a positive integer, got `{v}`")))?;
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(())
        }
        Err(_) => Ok(()),
    }
}

/// Per-task seed derived from the run seed and an example index.
pub fn task_seed(seed: u64, id: usize) -> u64 {
    let mut z = seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub checkpoints: Vec<Checkpoint>,
    pub test_accuracy: f64,
}

/// An explainer in the grid with the metric it is scored by.
pub struct Entry<'a> {
    pub explainer: Box<dyn Explainer + 'a>,
    pub metric: MetricKind,
}

impl Entry<'_> {
    pub fn name(&self) -> String {
        self.explainer.name()
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub models: Vec<TrainedModel>,
}

impl Experiment {
    /// Validates the config, generates the data and trains every model.
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dataset = generate(&config.dataset_spec()?)?;
        let tc = config.train_config()?;
        let models = config
            .model_kinds()?
            .into_iter()
            .map(|kind| {
                let mut model = Model::build(kind, WidthConfig::for_dataset(kind, &dataset.spec.kind), config.seed)?;
                let report = train(&mut model, &dataset.train, &dataset.test, &tc).map_err(|e| e.context(format!("training {kind}")))?;
                Ok(TrainedModel {
                    model,
                    checkpoints: report.checkpoints,
                    test_accuracy: report.test_accuracy.unwrap_or(f64::NAN),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, dataset, models })
    }

    pub fn save_models(&self, dir: &Path) -> Result<()> {
        for m in &self.models {
            let sub = dir.join(m.model.kind().name());
            std::fs::create_dir_all(&sub).map_err(|e| Error::from(e).context(sub.display().to_string()))?;
            for c in &m.checkpoints {
                m.model.at(c)?.save(&sub.join(format!("epoch_{:03}.eqx", c.epoch)), c.epoch, c.optimizer_lr)?;
            }
        }
        Ok(())
    }

    fn test_inputs(&self) -> Vec<&Signal> {
        self.dataset.test.iter().map(|s| &s.x).collect()
    }

    fn mode_for(&self, group: &SymmetryGroup, id: usize) -> EstimatorMode {
        let n_samp = self.config.metrics.n_samp;
        let seed = task_seed(self.config.seed, id);
        match self.config.metrics.mode {
            ModeChoice::Auto => EstimatorMode::auto(group, n_samp, seed),
            ModeChoice::Exact => EstimatorMode::Exact,
            ModeChoice::MonteCarlo => EstimatorMode::MonteCarlo { n_samp, seed },
        }
    }

    fn row(&self, model: &Model, method: &str, metric: MetricKind, id: usize, est: &MetricEstimate) -> ReportRow {
        ReportRow {
            dataset: self.dataset.spec.kind.name().to_string(),
            model: model.kind().name().to_string(),
            method: method.to_string(),
            metric,
            mode: est.mode.name().to_string(),
            n_samp: est.n_elements,
            example_id: id,
            value: est.value,
            seed: self.config.seed,
        }
    }

    fn baseline_for(&self, method: FeatureMethod) -> Baseline {
        match method {
            FeatureMethod::GradientShap { .. } => match self.config.methods.shap_stdev {
                Some(stdev) => Baseline::RandomNormal {
                    stdev,
                    seed: self.config.seed,
                },
                None => Baseline::Zero,
            },
            FeatureMethod::FeaturePermutation => Baseline::BatchShuffle {
                reference: Arc::new(self.dataset.train.iter().map(|s| s.x.clone()).collect()),
                seed: self.config.seed,
            },
            _ => Baseline::Zero,
        }
    }

    /// Every configured explainer for one trained model, in config order.
    pub fn roster<'a>(&'a self, trained: &'a TrainedModel) -> Result<Vec<Entry<'a>>> {
        let cfg = &self.config;
        let m = &cfg.methods;
        let model = &trained.model;
        let mut out: Vec<Entry<'a>> = Vec::new();
        for method in cfg.feature_methods()? {
            out.push(Entry {
                explainer: Box::new(FeatureExplainer::new(model, method, self.baseline_for(method))),
                metric: MetricKind::Equiv,
            });
        }
        let taps = cfg.taps()?;
        if !m.example.is_empty() {
            let subset = TrainSubset::from_samples(&self.dataset.train, m.subset_size)?;
            for name in &m.example {
                let inv = |e: Box<dyn Explainer + 'a>| Entry {
                    explainer: e,
                    metric: MetricKind::Inv,
                };
                match name.as_str() {
                    "influence_functions" => out.push(inv(Box::new(InfluenceExplainer::new(model, &subset, m.damping)?))),
                    "tracin" => out.push(inv(Box::new(TracInExplainer::from_checkpoints(model, &trained.checkpoints, &subset)?))),
                    "simplex" => {
                        for &tap in &taps {
                            out.push(inv(Box::new(SimplexExplainer::new(model, &subset, tap, m.simplex_epochs, m.simplex_lr)?)));
                        }
                    }
                    "representation_similarity" => {
                        for &tap in &taps {
                            out.push(inv(Box::new(RepresentationSimilarityExplainer::new(model, &subset, tap)?)));
                        }
                    }
                    other => return Err(Error::Config(format!("unknown example method `{other}`"))),
                }
            }
        }
        let kinds = cfg.probe_kinds()?;
        if !kinds.is_empty() {
            let sets = concept_sets(&self.dataset.train, m.concept_set_size)?;
            for kind in kinds {
                for &tap in &taps {
                    let probe = ConceptProbe::fit(model, tap, kind, &sets, cfg.seed)
                        .map_err(|e| e.context(format!("{}: fitting {}_{}", model.kind(), kind.name(), tap.name())))?;
                    out.push(Entry {
                        explainer: Box::new(probe),
                        metric: MetricKind::Inv,
                    });
                }
            }
        }
        Ok(out)
    }

    fn score(&self, entry: &Entry<'_>, x: &Signal, id: usize) -> Result<MetricEstimate> {
        let group = self.dataset.spec.kind.group_for(x)?;
        let mode = self.mode_for(&group, id);
        match entry.metric {
            MetricKind::Equiv => {
                equivariance_score(&entry.explainer, &group, x, None, entry.explainer.output_action(), mode)
            }
            _ => invariance_score(&entry.explainer, &group, x, None, mode),
        }
    }

    /// Per-example rows for every (model, method) cell, plus model
    /// invariance when enabled.
    pub fn evaluate(&self) -> Result<RobustnessReport> {
        let xs = self.test_inputs();
        let mut report = RobustnessReport::new();
        for trained in &self.models {
            let model = &trained.model;
            if self.config.metrics.model_invariance {
                let rows: Vec<ReportRow> = xs
                    .par_iter()
                    .enumerate()
                    .map(|(id, x)| {
                        let group = self.dataset.spec.kind.group_for(x)?;
                        let est = model_invariance_score(model, &group, x, self.mode_for(&group, id))
                            .map_err(|e| e.context(format!("{}/model on test example {id}", model.kind())))?;
                        Ok(self.row(model, "model", MetricKind::ModelInv, id, &est))
                    })
                    .collect::<Result<_>>()?;
                report.extend(rows);
            }
            for entry in self.roster(trained)? {
                let name = entry.name();
                let rows: Vec<ReportRow> = xs
                    .par_iter()
                    .enumerate()
                    .map(|(id, x)| {
                        let est = self
                            .score(&entry, x, id)
                            .map_err(|e| e.context(format!("{}/{name} on test example {id}", model.kind())))?;
                        Ok(self.row(model, &name, entry.metric, id, &est))
                    })
                    .collect::<Result<_>>()?;
                report.extend(rows);
            }
        }
        Ok(report)
    }

    /// Max-sensitivity rows for every feature method.
    pub fn sensitivity(&self) -> Result<RobustnessReport> {
        let xs = self.test_inputs();
        let cfg = &self.config.metrics;
        let mut report = RobustnessReport::new();
        for trained in &self.models {
            let model = &trained.model;
            for method in self.config.feature_methods()? {
                let explainer = FeatureExplainer::new(model, method, self.baseline_for(method));
                let rows: Vec<ReportRow> = xs
                    .par_iter()
                    .enumerate()
                    .map(|(id, x)| {
                        let seed = task_seed(self.config.seed, id);
                        let value = sensitivity_max(&explainer, x, cfg.sensitivity_epsilon, cfg.sensitivity_samples, seed)
                            .map_err(|e| e.context(format!("{}/{method} sensitivity on test example {id}", model.kind())))?;
                        Ok(ReportRow {
                            dataset: self.dataset.spec.kind.name().to_string(),
                            model: model.kind().name().to_string(),
                            method: method.name().to_string(),
                            metric: MetricKind::Sensitivity,
                            mode: "max".into(),
                            n_samp: cfg.sensitivity_samples,
                            example_id: id,
                            value,
                            seed: self.config.seed,
                        })
                    })
                    .collect::<Result<_>>()?;
                report.extend(rows);
            }
        }
        Ok(report)
    }

    /// Mean invariance of each configured method wrapped by the enforcer,
    /// for every sample size of the sweep.
    pub fn enforce_sweep(&self) -> Result<Vec<SweepRow>> {
        let enforce = &self.config.enforce;
        let xs = self.test_inputs();
        let mut out = Vec::new();
        for trained in &self.models {
            let model = &trained.model;
            let roster = self.roster(trained)?;
            for wanted in &enforce.methods {
                let entry = roster
                    .iter()
                    .find(|e| &e.name() == wanted)
                    .ok_or_else(|| Error::Config(format!("enforcement method `{wanted}` is not in the roster")))?;
                let base = &entry.explainer;
                let action = base.output_action();
                for &n_inv in &enforce.n_inv {
                    let values: Vec<f64> = xs
                        .par_iter()
                        .enumerate()
                        .map(|(id, x)| {
                            let group = self.dataset.spec.kind.group_for(x)?;
                            let mode = EnforceMode::SampledWithoutReplacement {
                                n_inv,
                                seed: enforce.seed,
                            };
                            let wrapped = EnforcedExplainer::new(base, group.clone(), mode)?;
                            let m = self.mode_for(&group, id);
                            let est = if action == OutputAction::Trivial {
                                invariance_score(&wrapped, &group, x, None, m)
                            } else {
                                equivariance_score(&wrapped, &group, x, None, action, m)
                            };
                            est.map(|e| e.value).map_err(|e| {
                                e.context(format!("{}/{wanted} enforced over {n_inv} on test example {id}", model.kind()))
                            })
                        })
                        .collect::<Result<_>>()?;
                    let (mean, ci95) = mean_ci(&values);
                    out.push(SweepRow {
                        dataset: self.dataset.spec.kind.name().to_string(),
                        model: model.kind().name().to_string(),
                        method: wanted.clone(),
                        n_inv,
                        n: values.len(),
                        mean,
                        ci95,
                        min: values.iter().copied().fold(f64::INFINITY, f64::min),
                    });
                }
            }
        }
        Ok(out)
    }
}

pub struct RunOutcome {
    pub report: RobustnessReport,
    pub sensitivity: Option<RobustnessReport>,
    pub sweep: Vec<SweepRow>,
    pub verdicts: Vec<Verdict>,
    /// Whether every asserted verdict holds.
    pub passed: bool,
}

/// Runs the configured experiment and writes its files to `output_dir`.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    let exp = Experiment::prepare(config.clone())?;
    let report = exp.evaluate()?;
    let sensitivity = if config.metrics.sensitivity { Some(exp.sensitivity()?) } else { None };
    let sweep = if config.enforce.n_inv.is_empty() { vec![] } else { exp.enforce_sweep()? };
    let verdicts = verdicts(&report.summary());
    let passed = !config.output.assert || verdicts.iter().all(|v| v.holds());
    output::write_run(config, &report, sensitivity.as_ref(), &sweep, &verdicts)?;
    Ok(RunOutcome {
        report,
        sensitivity,
        sweep,
        verdicts,
        passed,
    })
}

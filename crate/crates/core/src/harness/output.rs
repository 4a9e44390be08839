use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::svg::{boxplot_svg, scatter_svg, sweep_svg};
use super::verdict::{render_report, Verdict};
use crate::error::{Error, Result};
use crate::robustness_metrics::{correlate, MetricKind, ReportRow, RobustnessReport};

/// One point of an enforcement sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub n_inv: usize,
    pub n: usize,
    pub mean: f64,
    pub ci95: f64,
    pub min: f64,
}

/// Box-plot statistics of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub metric: MetricKind,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Mean model invariance against mean explanation robustness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub metric: MetricKind,
    pub model_invariance: f64,
    pub explanation_robustness: f64,
}

/// Pearson r between per-example sensitivity and equivariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub n: usize,
    /// Empty when either metric is constant.
    pub pearson_r: Option<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

type Key = (String, String, String, MetricKind);

fn cells(rows: &[ReportRow]) -> BTreeMap<Key, Vec<(usize, f64)>> {
    let mut out: BTreeMap<Key, Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        out.entry((r.dataset.clone(), r.model.clone(), r.method.clone(), r.metric))
            .or_default()
            .push((r.example_id, r.value));
    }
    for v in out.values_mut() {
        v.sort_by_key(|&(id, _)| id);
    }
    out
}

pub fn quantile_rows(rows: &[ReportRow]) -> Vec<QuantileRow> {
    cells(rows)
        .into_iter()
        .map(|((dataset, model, method, metric), v)| {
            let mut s: Vec<f64> = v.into_iter().map(|(_, x)| x).collect();
            s.sort_by(f64::total_cmp);
            QuantileRow {
                dataset,
                model,
                method,
                metric,
                n: s.len(),
                min: s[0],
                q1: quantile(&s, 0.25),
                median: quantile(&s, 0.5),
                q3: quantile(&s, 0.75),
                max: s[s.len() - 1],
            }
        })
        .collect()
}

fn mean(v: &[(usize, f64)]) -> f64 {
    v.iter().map(|(_, x)| x).sum::<f64>() / v.len() as f64
}

pub fn scatter_rows(rows: &[ReportRow]) -> Vec<ScatterRow> {
    let cells = cells(rows);
    cells
        .iter()
        .filter(|(k, _)| matches!(k.3, MetricKind::Inv | MetricKind::Equiv))
        .filter_map(|((dataset, model, method, metric), v)| {
            let mi = cells.get(&(dataset.clone(), model.clone(), "model".to_string(), MetricKind::ModelInv))?;
            Some(ScatterRow {
                dataset: dataset.clone(),
                model: model.clone(),
                method: method.clone(),
                metric: *metric,
                model_invariance: mean(mi),
                explanation_robustness: mean(v),
            })
        })
        .collect()
}

/// Correlations for every method scored by both sensitivity and Equiv,
/// paired by example id.
pub fn correlation_rows(rows: &[ReportRow]) -> Result<Vec<CorrelationRow>> {
    let cells = cells(rows);
    let mut out = Vec::new();
    for ((dataset, model, method, metric), sens) in &cells {
        if *metric != MetricKind::Sensitivity {
            continue;
        }
        let Some(equiv) = cells.get(&(dataset.clone(), model.clone(), method.clone(), MetricKind::Equiv)) else {
            continue;
        };
        let equiv: BTreeMap<usize, f64> = equiv.iter().copied().collect();
        let (a, b): (Vec<f64>, Vec<f64>) = sens.iter().filter_map(|(id, s)| equiv.get(id).map(|e| (*s, *e))).unzip();
        let pearson_r = match correlate(&a, &b) {
            Ok(r) => Some(r),
            Err(e) if matches!(e, Error::ZeroVariance(_)) => None,
            Err(e) => return Err(e.context(format!("{model}/{method} correlation"))),
        };
        out.push(CorrelationRow {
            dataset: dataset.clone(),
            model: model.clone(),
            method: method.clone(),
            n: a.len(),
            pearson_r,
        });
    }
    Ok(out)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn write_rows_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(f));
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>();
    rows.map_err(|e| Error::from(e).context(path.display().to_string()))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    read_rows_csv(path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::from(e).context(path.display().to_string()))
}

/// Writes every output of a run. Files are produced from finished results
/// by this thread alone.
pub(super) fn write_run(
    config: &ExperimentConfig,
    report: &RobustnessReport,
    sensitivity: Option<&RobustnessReport>,
    sweep: &[SweepRow],
    verdicts: &[Verdict],
) -> Result<()> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::from(e).context(dir.display().to_string()))?;
    write_text(&dir.join("config.toml"), &config.to_toml())?;
    report.save(&dir.join("report.csv"))?;
    write_rows_csv(&dir.join("summary.csv"), &report.summary())?;
    let quantiles = quantile_rows(&report.rows);
    write_rows_csv(&dir.join("quantiles.csv"), &quantiles)?;
    let scatter = scatter_rows(&report.rows);
    write_rows_csv(&dir.join("scatter.csv"), &scatter)?;
    if !sweep.is_empty() {
        write_rows_csv(&dir.join("sweep.csv"), sweep)?;
    }
    if let Some(sens) = sensitivity {
        sens.save(&dir.join("sensitivity.csv"))?;
        let mut both = sens.rows.clone();
        both.extend(report.rows.iter().filter(|r| r.metric == MetricKind::Equiv).cloned());
        write_rows_csv(&dir.join("correlation.csv"), &correlation_rows(&both)?)?;
    }
    let mut text = render_report(&report.rows);
    if verdicts.iter().any(|v| !v.holds()) {
        text.push_str("run failed its assertions\n");
    }
    write_text(&dir.join("verdicts.txt"), &text)?;
    if config.output.svg {
        write_text(&dir.join("quantiles.svg"), &boxplot_svg(&quantiles))?;
        write_text(&dir.join("scatter.svg"), &scatter_svg(&scatter))?;
        if !sweep.is_empty() {
            write_text(&dir.join("sweep.svg"), &sweep_svg(sweep))?;
        }
    }
    Ok(())
}

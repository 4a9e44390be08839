use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mean_ci;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Inv,
    Equiv,
    ModelInv,
    Sensitivity,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Inv => "inv",
            MetricKind::Equiv => "equiv",
            MetricKind::ModelInv => "model_inv",
            MetricKind::Sensitivity => "sensitivity",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One per-example score, in the report CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub metric: MetricKind,
    pub mode: String,
    pub n_samp: usize,
    pub example_id: usize,
    pub value: f64,
    pub seed: u64,
}

/// Test-set aggregate for one (dataset, model, method, metric) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub metric: MetricKind,
    pub n: usize,
    pub mean: f64,
    /// Half-width of the 95% normal-approximation interval.
    pub ci95: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RobustnessReport {
    pub rows: Vec<ReportRow>,
}

impl RobustnessReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = ReportRow>) {
        self.rows.extend(rows);
    }

    /// Per-example values of one cell, ordered by example id.
    pub fn values(&self, dataset: &str, model: &str, method: &str, metric: MetricKind) -> Vec<f64> {
        let mut hits: Vec<&ReportRow> = self
            .rows
            .iter()
            .filter(|r| r.dataset == dataset && r.model == model && r.method == method && r.metric == metric)
            .collect();
        hits.sort_by_key(|r| r.example_id);
        hits.into_iter().map(|r| r.value).collect()
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize(&self.rows)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(r);
        let rows = input.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Mean, 95% CI, min and max per (dataset, model, method, metric), in key order.
pub fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(&str, &str, &str, MetricKind), Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((&r.dataset, &r.model, &r.method, r.metric))
            .or_default()
            .push((r.example_id, r.value));
    }
    cells
        .into_iter()
        .map(|((dataset, model, method, metric), mut v)| {
            v.sort_by_key(|&(id, _)| id);
            let values: Vec<f64> = v.into_iter().map(|(_, x)| x).collect();
            let (mean, ci95) = mean_ci(&values);
            SummaryRow {
                dataset: dataset.to_string(),
                model: model.to_string(),
                method: method.to_string(),
                metric,
                n: values.len(),
                mean,
                ci95,
                min: values.iter().copied().fold(f64::INFINITY, f64::min),
                max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

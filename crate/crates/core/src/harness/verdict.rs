use std::collections::BTreeMap;
use std::fmt::Write;

use crate::model_zoo::ModelKind;
use crate::robustness_metrics::{summarize, MetricKind, ReportRow, SummaryRow};

/// Observed mean at which a cell counts as robust.
pub const ROBUST: f64 = 0.999;
/// Observed mean at which a cell counts as approximately robust.
pub const APPROXIMATE: f64 = 0.95;
/// Mean below which a method without a guarantee counts as failing.
pub const FAILING: f64 = 0.99;
/// Tolerance for unconditional guarantees.
pub const EXACT_TOL: f64 = 1e-9;

/// What theory predicts for one cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expectation {
    /// Mean must reach the bound.
    Holds(f64),
    /// The method's assumptions are broken; mean must stay below the bound.
    Fails(f64),
    /// No prediction either way.
    Open,
}

/// `✓`, `~` or `✗` for an observed mean.
pub fn symbol(mean: f64) -> char {
    if mean >= ROBUST {
        '✓'
    } else if mean >= APPROXIMATE {
        '~'
    } else {
        '✗'
    }
}

/// The guarantee for `method` under `metric` on `model`. Only invariant
/// architectures carry guarantees.
pub fn expectation(model: &str, method: &str, metric: MetricKind) -> Expectation {
    let invariant = ModelKind::from_name(model).map(|k| k.is_invariant()).unwrap_or(false);
    if !invariant || method.contains("+enforced") {
        return Expectation::Open;
    }
    match (metric, method) {
        (MetricKind::ModelInv, _) => Expectation::Holds(1.0 - EXACT_TOL),
        (MetricKind::Equiv, "saliency" | "integrated_gradients" | "input_x_gradient" | "ablation" | "occlusion") => {
            Expectation::Holds(ROBUST)
        }
        (MetricKind::Equiv, "gradient_shap" | "feature_permutation") => Expectation::Fails(FAILING),
        (MetricKind::Inv, "influence_functions" | "tracin") => Expectation::Holds(1.0 - EXACT_TOL),
        (MetricKind::Inv, m) if m.ends_with("_inv") => Expectation::Holds(ROBUST),
        _ => Expectation::Open,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub metric: MetricKind,
    pub n: usize,
    pub mean: f64,
    pub ci95: f64,
    pub expected: Expectation,
}

impl Verdict {
    pub fn symbol(&self) -> char {
        symbol(self.mean)
    }

    pub fn holds(&self) -> bool {
        match self.expected {
            Expectation::Holds(bound) => self.mean >= bound,
            Expectation::Fails(bound) => self.mean < bound,
            Expectation::Open => true,
        }
    }
}

/// One verdict per summary cell; sensitivity cells are skipped.
pub fn verdicts(summary: &[SummaryRow]) -> Vec<Verdict> {
    summary
        .iter()
        .filter(|s| s.metric != MetricKind::Sensitivity)
        .map(|s| Verdict {
            dataset: s.dataset.clone(),
            model: s.model.clone(),
            method: s.method.clone(),
            metric: s.metric,
            n: s.n,
            mean: s.mean,
            ci95: s.ci95,
            expected: expectation(&s.model, &s.method, s.metric),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drift {
    /// Largest gap between rows that share every key including the seed.
    pub same_seed: f64,
    /// Largest gap between per-seed cell means; zero with one seed.
    pub cross_seed: f64,
    pub seeds: usize,
}

/// Reproducibility check over rows gathered from one or more reports.
pub fn drift(rows: &[ReportRow]) -> Drift {
    let mut same: BTreeMap<(&str, &str, &str, MetricKind, &str, usize, usize, u64), (f64, f64)> = BTreeMap::new();
    for r in rows {
        let key = (&*r.dataset, &*r.model, &*r.method, r.metric, &*r.mode, r.n_samp, r.example_id, r.seed);
        let e = same.entry(key).or_insert((r.value, r.value));
        e.0 = e.0.min(r.value);
        e.1 = e.1.max(r.value);
    }
    let same_seed = same.values().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);

    let mut by_seed: BTreeMap<u64, Vec<ReportRow>> = BTreeMap::new();
    for r in rows {
        by_seed.entry(r.seed).or_default().push(r.clone());
    }
    let mut means: BTreeMap<(String, String, String, MetricKind), (f64, f64)> = BTreeMap::new();
    for seed_rows in by_seed.values() {
        for s in summarize(seed_rows) {
            let e = means.entry((s.dataset, s.model, s.method, s.metric)).or_insert((s.mean, s.mean));
            e.0 = e.0.min(s.mean);
            e.1 = e.1.max(s.mean);
        }
    }
    let cross_seed = means.values().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    Drift {
        same_seed,
        cross_seed,
        seeds: by_seed.len(),
    }
}

fn expectation_text(e: Expectation) -> String {
    match e {
        Expectation::Holds(b) => format!("≥ {b}"),
        Expectation::Fails(b) => format!("< {b}"),
        Expectation::Open => "-".into(),
    }
}

/// Summary table per seed, the verdict grid and the drift check.
pub fn render_report(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let mut by_seed: BTreeMap<u64, Vec<ReportRow>> = BTreeMap::new();
    for r in rows {
        by_seed.entry(r.seed).or_default().push(r.clone());
    }
    for (seed, seed_rows) in &by_seed {
        let _ = writeln!(out, "seed {seed}");
        let _ = writeln!(out, "{:<14} {:<16} {:<32} {:<12} {:>5} {:>22}", "dataset", "model", "method", "metric", "n", "mean ± ci95");
        for s in summarize(seed_rows) {
            let flag = if s.n == 1 { "  (n=1, interval degenerate)" } else { "" };
            let _ = writeln!(
                out,
                "{:<14} {:<16} {:<32} {:<12} {:>5} {:>12.6} ± {:<8.6}{flag}",
                s.dataset, s.model, s.method, s.metric, s.n, s.mean, s.ci95
            );
        }
        let _ = writeln!(out);
    }

    let summary = summarize(rows);
    let grid = verdicts(&summary);
    let _ = writeln!(out, "verdicts (✓ ≥ {ROBUST}, ~ ≥ {APPROXIMATE}, ✗ otherwise)");
    let mut violations = 0;
    for v in &grid {
        let status = if v.holds() {
            ""
        } else {
            violations += 1;
            "  VIOLATED"
        };
        let _ = writeln!(
            out,
            "  {} {:<16} {:<32} {:<10} {:>10.6}  expected {}{status}",
            v.symbol(),
            v.model,
            v.method,
            v.metric,
            v.mean,
            expectation_text(v.expected)
        );
    }
    let d = drift(rows);
    let _ = writeln!(out);
    let _ = writeln!(out, "drift: same-seed max |Δ| = {:e}, cross-seed max |Δmean| = {:e} over {} seed(s)", d.same_seed, d.cross_seed, d.seeds);
    let _ = writeln!(out, "{violations} guarantee violation(s)");
    out
}

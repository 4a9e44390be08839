//! Static SVG summaries. Plain strings, no plotting dependency.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::output::{QuantileRow, ScatterRow, SweepRow};

const W: f64 = 720.0;
const LEFT: f64 = 260.0;
const RIGHT: f64 = 30.0;
const ROW: f64 = 18.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Range covering `values` and 1, padded slightly.
fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((1.0f64, 1.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

fn axis(out: &mut String, lo: f64, hi: f64, x0: f64, x1: f64, y: f64) {
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"black\"/>");
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let x = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(out, "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.3}</text>", y + 14.0);
    }
}

/// Horizontal box plots, one per (model, method, metric) cell.
pub fn boxplot_svg(rows: &[QuantileRow]) -> String {
    let rows: Vec<&QuantileRow> = rows.iter().filter(|r| r.metric.name() != "sensitivity").collect();
    let h = 40.0 + ROW * rows.len() as f64 + 30.0;
    let (lo, hi) = span(rows.iter().flat_map(|r| [r.min, r.max]));
    let sx = |v: f64| LEFT + (v - lo) / (hi - lo) * (W - LEFT - RIGHT);
    let mut out = header(h);
    let _ = writeln!(out, "<text x=\"10\" y=\"20\" font-size=\"13\">Explanation robustness per method</text>");
    for (i, r) in rows.iter().enumerate() {
        let y = 40.0 + ROW * i as f64;
        let mid = y + ROW / 2.0;
        let color = PALETTE[i % PALETTE.len()];
        let label = escape(&format!("{} {} ({})", r.model, r.method, r.metric));
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{label}</text>", LEFT - 6.0, mid + 4.0);
        let _ = writeln!(out, "<line x1=\"{:.1}\" y1=\"{mid:.1}\" x2=\"{:.1}\" y2=\"{mid:.1}\" stroke=\"{color}\"/>", sx(r.min), sx(r.max));
        let _ = writeln!(
            out,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{color}\" fill-opacity=\"0.3\" stroke=\"{color}\"/>",
            sx(r.q1),
            y + 3.0,
            (sx(r.q3) - sx(r.q1)).max(1.0),
            ROW - 6.0
        );
        let _ = writeln!(out, "<line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{0:.1}\" y2=\"{2:.1}\" stroke=\"black\"/>", sx(r.median), y + 3.0, y + ROW - 3.0);
    }
    axis(&mut out, lo, hi, LEFT, W - RIGHT, 40.0 + ROW * rows.len() as f64 + 4.0);
    out.push_str("</svg>\n");
    out
}

/// Mean invariance against `log2(n_inv)`, one line per (model, method).
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let h = 360.0;
    let (x0, x1, y0, y1) = (70.0, W - RIGHT, 300.0, 40.0);
    let mut lines: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        lines
            .entry((r.model.clone(), r.method.clone()))
            .or_default()
            .push(((r.n_inv as f64).log2(), r.mean));
    }
    let xmax = lines.values().flatten().map(|p| p.0).fold(1.0f64, f64::max);
    let (lo, hi) = span(lines.values().flatten().map(|p| p.1));
    let sx = |v: f64| x0 + v / xmax * (x1 - x0);
    let sy = |v: f64| y0 + (v - lo) / (hi - lo) * (y1 - y0);
    let mut out = header(h);
    let _ = writeln!(out, "<text x=\"10\" y=\"20\" font-size=\"13\">Invariance after enforcement vs log2(n_inv)</text>");
    axis(&mut out, 0.0, xmax, x0, x1, y0);
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    for (v, y) in [(lo, y0), (hi, y1)] {
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.3}</text>", x0 - 4.0, y + 4.0);
    }
    for (i, ((model, method), pts)) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", path.join(" "));
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>",
            x0 + 10.0,
            y0 + 40.0 - 14.0 * (lines.len() - 1 - i) as f64 - 14.0,
            escape(&format!("{model} {method}"))
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Explanation robustness against model invariance, one dot per cell.
pub fn scatter_svg(rows: &[ScatterRow]) -> String {
    let h = 360.0;
    let (x0, x1, y0, y1) = (70.0, W - RIGHT, 320.0, 40.0);
    let (xlo, xhi) = span(rows.iter().map(|r| r.model_invariance));
    let (ylo, yhi) = span(rows.iter().map(|r| r.explanation_robustness));
    let sx = |v: f64| x0 + (v - xlo) / (xhi - xlo) * (x1 - x0);
    let sy = |v: f64| y0 + (v - ylo) / (yhi - ylo) * (y1 - y0);
    let mut out = header(h);
    let _ = writeln!(out, "<text x=\"10\" y=\"20\" font-size=\"13\">Explanation robustness vs model invariance</text>");
    axis(&mut out, xlo, xhi, x0, x1, y0);
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    for (v, y) in [(ylo, y0), (yhi, y1)] {
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.3}</text>", x0 - 4.0, y + 4.0);
    }
    let models: Vec<&str> = {
        let mut m: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
        m.dedup();
        m
    };
    for r in rows {
        let i = models.iter().position(|m| *m == r.model).unwrap_or(0);
        let _ = writeln!(
            out,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{}\"><title>{}</title></circle>",
            sx(r.model_invariance),
            sy(r.explanation_robustness),
            PALETTE[i % PALETTE.len()],
            escape(&format!("{} {}", r.model, r.method))
        );
    }
    out.push_str("</svg>\n");
    out
}

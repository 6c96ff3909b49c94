//! Plain-text SVG line charts of ledger metrics against remaining weights.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::ledger::{read_csv, write_atomic, LedgerRow};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub const METRICS: [(&str, &str); 4] = [
    ("accuracy", "Accuracy"),
    ("ece", "ECE"),
    ("nll", "NLL (mean)"),
    ("brier", "Brier score"),
];

fn metric(row: &LedgerRow, name: &str) -> f64 {
    match name {
        "accuracy" => row.accuracy,
        "ece" => row.ece,
        "nll" => row.nll_mean,
        _ => row.brier,
    }
}

/// One line: `(remaining_pct, value)` points ordered by iteration.
#[derive(Debug)]
struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn series_label(r: &LedgerRow) -> String {
    let mut l = r.strategy.clone();
    if r.reinit_mode != "rewind" {
        l.push_str(&format!(" ({})", r.reinit_mode));
    }
    if r.source_run.is_some() {
        l.push_str(" transfer");
    }
    l
}

/// Rows sharing a label are averaged per iteration (e.g. several seeds).
fn build_series(rows: &[LedgerRow], name: &str) -> Vec<Series> {
    let mut groups: BTreeMap<String, BTreeMap<usize, (f64, f64, usize)>> = BTreeMap::new();
    for r in rows {
        let e = groups
            .entry(series_label(r))
            .or_default()
            .entry(r.iteration)
            .or_insert((0.0, 0.0, 0));
        e.0 += r.remaining_weights_pct;
        e.1 += metric(r, name);
        e.2 += 1;
    }
    groups
        .into_iter()
        .map(|(label, by_iter)| Series {
            label,
            points: by_iter
                .into_values()
                .map(|(x, y, n)| (x / n as f64, y / n as f64))
                .collect(),
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn x_ticks(min_pct: f64) -> Vec<f64> {
    let mut ticks = Vec::new();
    let mut decade = 100.0;
    while decade >= min_pct * 0.999 && decade > 1e-6 {
        for m in [1.0, 0.5, 0.2] {
            let t = decade * m;
            if t >= min_pct * 0.999 {
                ticks.push(t);
            }
        }
        decade /= 10.0;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Renders one chart. The x axis is logarithmic in remaining weights and
/// runs from 100% at the left towards sparser networks on the right.
pub fn render_svg(rows: &[LedgerRow], name: &str, title: &str) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::data("no ledger rows to plot"));
    }
    let series = build_series(rows, name);
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if !(xmin > 0.0) || !xmax.is_finite() || !ymin.is_finite() || !ymax.is_finite() {
        return Err(Error::data("ledger values out of plotting range"));
    }
    let xmax = xmax.max(100.0);
    let (lx_hi, mut lx_lo) = (xmax.ln(), xmin.ln());
    if lx_hi - lx_lo < 1e-9 {
        lx_lo = lx_hi - 10f64.ln();
    }
    let pad = if ymax > ymin { 0.05 * (ymax - ymin) } else { 0.05 * ymax.abs().max(1e-3) };
    let (ylo, yhi) = (ymin - pad, ymax + pad);

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (lx_hi - x.ln()) / (lx_hi - lx_lo) * plot_w;
    let py = |y: f64| TOP + (yhi - y) / (yhi - ylo) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for t in x_ticks(xmin) {
        if t > xmax * 1.001 {
            continue;
        }
        let x = px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 19.0,
            fmt_tick(t)
        );
    }
    for i in 0..=4 {
        let v = ylo + (yhi - ylo) * i as f64 / 4.0;
        let y = py(v);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.4}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Remaining weights (%)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(title)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
    }
    let _ = writeln!(s, r#"<g class="legend">"#);
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<g class="legend-entry"><line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text></g>"#,
            x + 20.0,
            x + 26.0,
            y + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

/// Writes `accuracy.svg`, `ece.svg`, `nll.svg` and `brier.svg` into `out_dir`.
pub fn emit_plots<P: AsRef<Path>>(ledgers: &[P], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if ledgers.is_empty() {
        return Err(Error::config("at least one ledger is required"));
    }
    let mut rows = Vec::new();
    for l in ledgers {
        rows.extend(read_csv(l)?);
    }
    plot_rows(&rows, out_dir)
}

pub fn plot_rows(rows: &[LedgerRow], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let mut written = Vec::new();
    for (name, title) in METRICS {
        let svg = render_svg(rows, name, title)?;
        let path = out_dir.join(format!("{name}.svg"));
        write_atomic(&path, svg.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

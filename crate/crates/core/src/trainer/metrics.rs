//! Metrics CSV and SVG line charts.

use std::fmt::Write as _;
use std::path::Path;

use crate::objective::{BatchMetrics, LossComponents};
use crate::{Error, Result};

pub const CSV_COLUMNS: [&str; 11] = [
    "epoch",
    "step",
    "lr",
    "loss_total",
    "loss_fidelity",
    "loss_ce",
    "loss_smiles",
    "loss_trash",
    "fidelity",
    "similarity",
    "trash_zero_prob",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Config(format!("metrics file {}: {e}", path.display()))
}

/// Full CSV text for `rows`. Floats use the shortest round-tripping form.
pub fn metrics_csv(rows: &[BatchMetrics]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for m in rows {
        w.write_record([
            m.epoch.to_string(),
            m.step.to_string(),
            m.lr.to_string(),
            m.total.to_string(),
            m.components.fidelity.to_string(),
            m.components.ce.to_string(),
            m.components.smiles.to_string(),
            m.components.trash.to_string(),
            m.fidelity.to_string(),
            m.similarity.to_string(),
            m.trash_zero_prob.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ASCII output")
}

pub fn write_metrics(path: &Path, rows: &[BatchMetrics]) -> Result<()> {
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<BatchMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(CSV_COLUMNS) {
        return Err(Error::Config(format!(
            "metrics file {}: expected columns {}",
            path.display(),
            CSV_COLUMNS.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |col: usize| {
            Error::Config(format!(
                "metrics file {}: row {}: cannot parse {}",
                path.display(),
                line + 2,
                CSV_COLUMNS[col]
            ))
        };
        let int = |col: usize| rec[col].parse::<usize>().map_err(|_| bad(col));
        let num = |col: usize| rec[col].parse::<f64>().map_err(|_| bad(col));
        rows.push(BatchMetrics {
            epoch: int(0)?,
            step: int(1)?,
            lr: num(2)?,
            total: num(3)?,
            components: LossComponents {
                fidelity: num(4)?,
                ce: num(5)?,
                smiles: num(6)?,
                trash: num(7)?,
            },
            fidelity: num(8)?,
            similarity: num(9)?,
            trash_zero_prob: num(10)?,
        });
    }
    Ok(rows)
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Standalone SVG line chart; one polyline per series over a shared x axis.
pub fn line_chart(title: &str, x_label: &str, xs: &[f64], series: &[(&str, Vec<f64>)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (64.0, 150.0, 40.0, 48.0);
    let pw = w - left - right;
    let ph = h - top - bottom;

    let finite = |v: &&f64| v.is_finite();
    let x_lo = xs.iter().filter(finite).cloned().fold(f64::INFINITY, f64::min);
    let x_hi = xs.iter().filter(finite).cloned().fold(f64::NEG_INFINITY, f64::max);
    let ys = series.iter().flat_map(|(_, v)| v.iter()).filter(finite);
    let y_lo = ys.clone().cloned().fold(f64::INFINITY, f64::min);
    let y_hi = ys.cloned().fold(f64::NEG_INFINITY, f64::max);
    let (x_lo, x_hi) = if x_lo.is_finite() { (x_lo, x_hi) } else { (0.0, 1.0) };
    let (y_lo, y_hi) = if y_lo.is_finite() { (y_lo.min(0.0), y_hi) } else { (0.0, 1.0) };
    let x_span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
    let y_span = if y_hi > y_lo { y_hi - y_lo } else { 1.0 };
    let px = |x: f64| left + (x - x_lo) / x_span * pw;
    let py = |y: f64| top + ph - (y - y_lo) / y_span * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y_lo + f * y_span;
        let xv = x_lo + f * x_span;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{y}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{}</text>"##,
            left + pw,
            left - 6.0,
            py(yv) + 4.0,
            tick(yv),
            y = py(yv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            px(xv),
            top + ph + 16.0,
            tick(xv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 10.0,
        escape(x_label)
    );
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 10.0 + 20.0 * k as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub const QUALITY_PLOT: &str = "fidelity_similarity.svg";
pub const LOSS_PLOT: &str = "losses.svg";

/// The two standard charts: quality metrics and loss components against
/// epoch.
pub fn render_plots(rows: &[BatchMetrics]) -> [(&'static str, String); 2] {
    let xs: Vec<f64> = rows.iter().map(|m| m.epoch as f64).collect();
    let col = |f: fn(&BatchMetrics) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let quality = line_chart(
        "Fidelity and similarity",
        "epoch",
        &xs,
        &[
            ("fidelity", col(|m| m.fidelity)),
            ("similarity", col(|m| m.similarity)),
        ],
    );
    let losses = line_chart(
        "Loss components",
        "epoch",
        &xs,
        &[
            ("fidelity", col(|m| m.components.fidelity)),
            ("cross-entropy", col(|m| m.components.ce)),
            ("SMILES", col(|m| m.components.smiles)),
            ("trash", col(|m| m.components.trash)),
        ],
    );
    [(QUALITY_PLOT, quality), (LOSS_PLOT, losses)]
}

pub fn write_plots(dir: &Path, rows: &[BatchMetrics]) -> Result<()> {
    for (name, svg) in render_plots(rows) {
        let path = dir.join(name);
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

//! Static report files: rMAE by horizon as a table and one SVG chart per lead time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::config::Model;
use super::metrics::{summarize, MetricRow};
use super::records::{format_value, Variant};

pub const RMAE_TABLE_FILE: &str = "rmae_by_horizon.csv";

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Mean rMAE over deliveries, keyed by lead, then series, then horizon.
type Curves = BTreeMap<i64, BTreeMap<(Model, Variant), BTreeMap<i64, f64>>>;

fn curves(metrics: &[MetricRow]) -> Curves {
    let mut out: Curves = BTreeMap::new();
    for s in summarize(metrics) {
        if let Some(v) = s.mean_rmae {
            out.entry(s.lead_min)
                .or_default()
                .entry((s.model, s.variant))
                .or_default()
                .insert(s.horizon_min, v);
        }
    }
    out
}

fn chart(lead: i64, series: &BTreeMap<(Model, Variant), BTreeMap<i64, f64>>) -> String {
    let horizons: BTreeSet<i64> = series.values().flat_map(|c| c.keys().copied()).collect();
    let values = series.values().flat_map(|c| c.values().copied());
    let (mut lo, mut hi) = values.fold((0.0f64, 0.0f64), |(l, h), v| (l.min(v), h.max(v)));
    if hi - lo < 1e-9 {
        lo -= 0.01;
        hi += 0.01;
    }
    let (h0, h1) = (
        *horizons.first().unwrap_or(&0) as f64,
        *horizons.last().unwrap_or(&1) as f64,
    );
    let span = if h1 > h0 { h1 - h0 } else { 1.0 };
    let x = |h: f64| MARGIN + (h - h0) / span * (WIDTH - 2.0 * MARGIN);
    let y = |v: f64| HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">rMAE by horizon, lead time {lead} min</text>"#,
        WIDTH / 2.0
    );
    let (x0, x1, yb, yt) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{yb}" x2="{x1}" y2="{yb}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{yb}" x2="{x0}" y2="{yt}" stroke="black"/>"#);
    let zero = y(0.0);
    let _ = writeln!(
        s,
        r#"<line x1="{x0}" y1="{zero:.1}" x2="{x1}" y2="{zero:.1}" stroke="grey" stroke-dasharray="4 3"/>"#
    );
    for h in &horizons {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{h}</text>"#,
            x(*h as f64),
            yb + 16.0
        );
    }
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            x0 - 6.0,
            y(v) + 4.0,
            v
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">horizon [min]</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0
    );
    for (i, ((model, variant), curve)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = curve
            .iter()
            .map(|(h, v)| format!("{:.1},{:.1}", x(*h as f64), y(*v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly:.1}" fill="{colour}">{model} {variant}</text>"#,
            WIDTH - MARGIN + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the rMAE table and one chart per lead time into `dir`; returns the files written.
pub fn write_report(metrics: &[MetricRow], dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let curves = curves(metrics);
    let mut written = Vec::new();

    let table = dir.join(RMAE_TABLE_FILE);
    let mut w = io::BufWriter::new(fs::File::create(&table)?);
    writeln!(w, "lead_min,horizon_min,model,variant,mean_rmae")?;
    for (lead, series) in &curves {
        let mut rows: Vec<(i64, &(Model, Variant), f64)> = series
            .iter()
            .flat_map(|(k, c)| c.iter().map(move |(h, v)| (*h, k, *v)))
            .collect();
        rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for (h, (model, variant), v) in rows {
            writeln!(w, "{lead},{h},{model},{variant},{}", format_value(v))?;
        }
    }
    w.flush()?;
    written.push(table);

    for (lead, series) in &curves {
        let path = dir.join(format!("rmae_lead_{lead}.svg"));
        fs::write(&path, chart(*lead, series))?;
        written.push(path);
    }
    Ok(written)
}

//! Sweep output: per-cell CSV, per-angle summaries and SVG line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cell, Method, SweepResult};
use crate::error::{Error, Result};

/// One results.csv row. Metric fields are empty for failed cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub angle: f64,
    pub center: f64,
    pub seed: u64,
    pub method: Method,
    pub status: String,
    pub error: String,
    pub iterations: Option<usize>,
    pub mepe_myo: Option<f64>,
    pub angular_myo: Option<f64>,
    pub mepe_radial: Option<f64>,
    pub mepe_circumferential: Option<f64>,
    pub mepe_longitudinal: Option<f64>,
    pub mepe_local_radial: Option<f64>,
    pub mepe_local_tangential: Option<f64>,
    pub gt_local_tangential: Option<f64>,
    pub myocardium_voxels: Option<usize>,
    pub angular_excluded: Option<usize>,
    pub on_axis_voxels: Option<usize>,
    pub hull_voxels: Option<usize>,
    pub normal_excluded: Option<usize>,
}

impl From<&Cell> for ResultRow {
    fn from(c: &Cell) -> Self {
        let k = c.key;
        let ok = c.outcome.as_ref().ok();
        let r = ok.map(|o| &o.report);
        ResultRow {
            angle: k.angle,
            center: k.center,
            seed: k.seed,
            method: k.method,
            status: if ok.is_some() { "ok" } else { "error" }.into(),
            error: c.outcome.as_ref().err().cloned().unwrap_or_default(),
            iterations: ok.map(|o| o.iterations),
            mepe_myo: r.map(|r| r.mepe_myo),
            angular_myo: r.and_then(|r| r.angular_myo),
            mepe_radial: r.map(|r| r.mepe_radial),
            mepe_circumferential: r.map(|r| r.mepe_circumferential),
            mepe_longitudinal: r.map(|r| r.mepe_longitudinal),
            mepe_local_radial: r.map(|r| r.mepe_local_radial),
            mepe_local_tangential: r.map(|r| r.mepe_local_tangential),
            gt_local_tangential: r.map(|r| r.gt_local_tangential),
            myocardium_voxels: r.map(|r| r.myocardium_voxels),
            angular_excluded: r.map(|r| r.angular_excluded),
            on_axis_voxels: r.map(|r| r.on_axis_voxels),
            hull_voxels: r.map(|r| r.hull_voxels),
            normal_excluded: r.map(|r| r.normal_excluded),
        }
    }
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

type Getter = fn(&ResultRow) -> Option<f64>;

/// Summarised and plotted metrics.
pub const METRICS: [(&str, Getter); 7] = [
    ("mepe_myo", |r| r.mepe_myo),
    ("angular_myo", |r| r.angular_myo),
    ("mepe_radial", |r| r.mepe_radial),
    ("mepe_circumferential", |r| r.mepe_circumferential),
    ("mepe_longitudinal", |r| r.mepe_longitudinal),
    ("mepe_local_radial", |r| r.mepe_local_radial),
    ("mepe_local_tangential", |r| r.mepe_local_tangential),
];

/// Mean and standard error of one metric over an angle×method group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over √n; `None` below two samples.
    pub se: Option<f64>,
}

impl Stat {
    fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = (n >= 2).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Some(Stat { n, mean, se })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub angle: f64,
    pub method: Method,
    /// Cells that completed.
    pub n: usize,
    /// Indexed like [`METRICS`].
    pub stats: Vec<Option<Stat>>,
}

impl SummaryRow {
    pub fn stat(&self, metric: &str) -> Option<Stat> {
        let i = METRICS.iter().position(|(name, _)| *name == metric)?;
        self.stats[i]
    }
}

/// Mean ± SE per angle and method over completed cells.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(u64, Method), (f64, Vec<&ResultRow>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        // angles are finite, so the bit pattern orders non-negative values
        groups.entry((r.angle.to_bits(), r.method)).or_insert((r.angle, Vec::new())).1.push(r);
    }
    groups
        .into_iter()
        .map(|((_, method), (angle, members))| SummaryRow {
            angle,
            method,
            n: members.len(),
            stats: METRICS
                .iter()
                .map(|(_, get)| Stat::of(&members.iter().filter_map(|r| get(r)).collect::<Vec<_>>()))
                .collect(),
        })
        .collect()
}

fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["angle".to_string(), "method".into(), "n".into()];
    for (name, _) in METRICS {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_se"));
    }
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let mut rec = vec![r.angle.to_string(), r.method.to_string(), r.n.to_string()];
        for s in &r.stats {
            rec.push(opt(s.map(|s| s.mean)));
            rec.push(opt(s.and_then(|s| s.se)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_timings(result: &SweepResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["angle", "center", "seed", "method", "wall_seconds"])?;
    for c in &result.cells {
        let k = c.key;
        let secs = c.outcome.as_ref().map(|o| format!("{:.3}", o.wall_seconds)).unwrap_or_default();
        w.write_record([k.angle.to_string(), k.center.to_string(), k.seed.to_string(), k.method.to_string(), secs])?;
    }
    w.flush()?;
    Ok(())
}

const COLORS: [&str; 3] = ["#d62728", "#1f77b4", "#2ca02c"];

/// Line chart of one metric against angle, one polyline per method, with
/// standard-error bars.
fn chart(metric: usize, rows: &[SummaryRow]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 70.0, 150.0, 30.0, 50.0);
    let pts: Vec<(f64, Method, f64, f64)> = rows
        .iter()
        .filter_map(|r| r.stats[metric].map(|s| (r.angle, r.method, s.mean, s.se.unwrap_or(0.0))))
        .collect();
    let x_max = pts.iter().map(|p| p.0).fold(0.0f64, f64::max).max(1.0);
    let y_max = pts.iter().map(|p| p.2 + p.3).fold(0.0f64, f64::max).max(1e-6) * 1.1;
    let sx = |x: f64| left + x / x_max * (w - left - right);
    let sy = |y: f64| h - bottom - y / y_max * (h - top - bottom);
    let name = METRICS[metric].0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle">{name}</text>"#, (w - right + left) / 2.0);
    let (x0, y0, x1, y1) = (sx(0.0), sy(0.0), sx(x_max), sy(y_max));
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.1},{y1:.1} V{y0:.1} H{x1:.1}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let v = y_max * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            x0 - 6.0,
            sy(v) + 4.0
        );
    }
    let mut ticks: Vec<f64> = pts.iter().map(|p| p.0).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for t in ticks {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t}</text>"#, sx(t), y0 + 18.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">torsion angle (deg)</text>"#,
        (x0 + x1) / 2.0,
        h - 10.0
    );
    for (mi, m) in Method::ALL.into_iter().enumerate() {
        let mut series: Vec<_> = pts.iter().filter(|p| p.1 == m).collect();
        if series.is_empty() {
            continue;
        }
        series.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = COLORS[mi];
        let line: Vec<String> = series.iter().map(|p| format!("{:.1},{:.1}", sx(p.0), sy(p.2))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        for p in &series {
            let (x, lo, hi) = (sx(p.0), sy(p.2 - p.3), sy(p.2 + p.3));
            let _ = writeln!(s, r#"<path d="M{x:.1},{lo:.1} V{hi:.1}" stroke="{color}"/>"#);
            let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, sy(p.2));
        }
        let ly = top + 20.0 * mi as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{m}</text>"#,
            w - right + 15.0,
            w - right + 40.0,
            w - right + 45.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `results.csv`, `summary.csv`, `timings.csv` and one SVG chart
/// per summarised metric. Wall times live only in `timings.csv`, so
/// `results.csv` is reproducible byte for byte.
pub fn emit_results(result: &SweepResult, outdir: &Path) -> Result<()> {
    if result.cells.is_empty() {
        return Err(Error::InvalidData("no sweep results to write".into()));
    }
    fs::create_dir_all(outdir)?;
    let rows: Vec<ResultRow> = result.cells.iter().map(ResultRow::from).collect();
    write_results(&rows, &outdir.join("results.csv"))?;
    let summary = summarize(&rows);
    write_summary(&summary, &outdir.join("summary.csv"))?;
    write_timings(result, &outdir.join("timings.csv"))?;
    for (i, (name, _)) in METRICS.iter().enumerate() {
        fs::write(outdir.join(format!("{name}.svg")), chart(i, &summary))?;
    }
    Ok(())
}

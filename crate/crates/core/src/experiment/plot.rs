//! Minimal standalone SVG line charts for the sweep figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::config::ExperimentKind;
use crate::experiment::results::{format_sig6, ResultRow, RetrainIndex};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = || series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (x0, x1) = nice_range(
        pts().map(|p| p.0).fold(f64::INFINITY, f64::min),
        pts().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = nice_range(
        pts().map(|p| p.1).fold(f64::INFINITY, f64::min).min(0.0),
        pts().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_L + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let fx = x0 + (x1 - x0) * i as f64 / 5.0;
        let fy = y0 + (y1 - y0) * i as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(fx),
            MARGIN_T + ph + 18.0,
            format_sig6((fx * 1000.0).round() / 1000.0)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN_L - 6.0,
            sy(fy) + 4.0,
            format_sig6((fy * 1000.0).round() / 1000.0)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_L}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
            MARGIN_L + pw,
            y = sy(fy)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            path.join(" ")
        );
        for p in &path {
            let (x, y) = p.split_once(',').unwrap();
            let _ = writeln!(svg, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
        let ly = MARGIN_T + 14.0 + 18.0 * k as f64;
        let lx = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#,
            lx + 22.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn x_value(kind: ExperimentKind, row: &ResultRow) -> f64 {
    match kind {
        ExperimentKind::DSweep | ExperimentKind::StressSweep => row.d as f64,
        ExperimentKind::SnrSweep => row.snr_db,
        ExperimentKind::QthSweep => row.q_th,
    }
}

fn x_label(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::DSweep | ExperimentKind::StressSweep => "D",
        ExperimentKind::SnrSweep => "SNR (dB)",
        ExperimentKind::QthSweep => "q_th",
    }
}

/// Label for the parameters other than the x axis, e.g. `gamma=1.2`.
fn context_label(kind: ExperimentKind, row: &ResultRow, multi: &[bool; 4]) -> String {
    let mut parts = Vec::new();
    if multi[0] && !matches!(kind, ExperimentKind::DSweep | ExperimentKind::StressSweep) {
        parts.push(format!("D={}", row.d));
    }
    if multi[1] {
        parts.push(format!("gamma={}", format_sig6(row.gamma_th)));
    }
    if multi[2] && kind != ExperimentKind::SnrSweep {
        parts.push(format!("snr={}", format_sig6(row.snr_db)));
    }
    if multi[3] && kind != ExperimentKind::QthSweep {
        parts.push(format!("q_th={}", format_sig6(row.q_th)));
    }
    parts.join(" ")
}

/// Writes `<experiment>_{gfp,bop,frontier[,anar]}.svg` from the mean rows.
pub fn write_plots(kind: ExperimentKind, rows: &[ResultRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mean: Vec<&ResultRow> = rows.iter().filter(|r| r.retrain == RetrainIndex::Mean).collect();
    let distinct = |f: &dyn Fn(&ResultRow) -> String| {
        let mut v: Vec<String> = mean.iter().map(|r| f(r)).collect();
        v.sort();
        v.dedup();
        v.len() > 1
    };
    let multi = [
        distinct(&|r| r.d.to_string()),
        distinct(&|r| format_sig6(r.gamma_th)),
        distinct(&|r| format_sig6(r.snr_db)),
        distinct(&|r| format_sig6(r.q_th)),
    ];

    // (loss or oracle, context) -> points, in first-seen order.
    let mut groups: BTreeMap<(usize, String), (String, Vec<&ResultRow>)> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for r in &mean {
        let ctx = context_label(kind, r, &multi);
        let name = if ctx.is_empty() {
            r.loss.to_string()
        } else {
            format!("{} {ctx}", r.loss)
        };
        let idx = order.iter().position(|n| n == &name).unwrap_or_else(|| {
            order.push(name.clone());
            order.len() - 1
        });
        groups
            .entry((idx, name.clone()))
            .or_insert_with(|| (ctx.clone(), Vec::new()))
            .1
            .push(r);
    }

    let build = |metric: &dyn Fn(&ResultRow) -> (f64, f64)| -> Vec<Series> {
        groups
            .iter()
            .map(|((_, name), (_, rs))| {
                let mut points: Vec<(f64, f64)> = rs.iter().map(|r| metric(r)).collect();
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series {
                    name: name.clone(),
                    points,
                    dashed: false,
                }
            })
            .collect()
    };
    let oracle = || -> Vec<Series> {
        let mut by_ctx: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for (ctx, rs) in groups.values() {
            let pts = by_ctx.entry(ctx.clone()).or_default();
            for r in rs {
                let p = (x_value(kind, r), r.obop);
                if !pts.iter().any(|q| q.0 == p.0) {
                    pts.push(p);
                }
            }
        }
        by_ctx
            .into_iter()
            .map(|(ctx, mut points)| {
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series {
                    name: if ctx.is_empty() { "Oracle".into() } else { format!("Oracle {ctx}") },
                    points,
                    dashed: true,
                }
            })
            .collect()
    };

    let name = kind.name();
    let xl = x_label(kind);
    let mut bop_series = build(&|r| (x_value(kind, r), r.bop));
    bop_series.extend(oracle());
    let mut charts = vec![
        (
            format!("{name}_gfp.svg"),
            line_chart(&format!("{name}: gate failure probability"), xl, "GFP", &build(&|r| (x_value(kind, r), r.gfp))),
        ),
        (
            format!("{name}_bop.svg"),
            line_chart(&format!("{name}: bulk outage probability"), xl, "BOP", &bop_series),
        ),
        (
            format!("{name}_frontier.svg"),
            line_chart(&format!("{name}: BOP vs GFP"), "GFP", "BOP", &build(&|r| (r.gfp, r.bop))),
        ),
    ];
    if kind == ExperimentKind::QthSweep {
        charts.push((
            format!("{name}_anar.svg"),
            line_chart(&format!("{name}: average admitted resources"), xl, "ANAR", &build(&|r| (r.q_th, r.anar))),
        ));
    }

    let mut paths = Vec::new();
    for (file, svg) in charts {
        let path = out_dir.join(file);
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

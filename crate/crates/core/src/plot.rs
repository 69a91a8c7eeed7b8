//! Minimal deterministic SVG line charts. Every figure is built from
//! run-log CSV rows only, so `replot` regenerates byte-identical files.

use std::fmt::Write as _;

use crate::report::{CsvRow, DoeSummary};

const PALETTE: [&str; 9] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#17becf",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Line,
    Points,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub style: Style,
}

impl Series {
    pub fn line(label: impl Into<String>, color_idx: usize, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
            color: PALETTE[color_idx % PALETTE.len()],
            style: Style::Line,
        }
    }

    pub fn points(label: impl Into<String>, color_idx: usize, points: Vec<(f64, f64)>) -> Self {
        Series {
            style: Style::Points,
            ..Series::line(label, color_idx, points)
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Fixed x extent; derived from the data when `None`.
    pub x_range: Option<(f64, f64)>,
}

impl Panel {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Panel {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            x_range: None,
        }
    }
}

const PANEL_W: f64 = 460.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Ticks at 1-2-5 multiples of a power of ten inside `[lo, hi]`, with
/// labels that carry just enough decimals for the step.
fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<(f64, String)> {
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| (hi - lo) / s <= target as f64 + 1.5)
        .unwrap_or(10.0 * mag);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let sci = !(1e-3..1e5).contains(&step);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last)
        .map(|k| {
            let v = k as f64 * step;
            let label = if k == 0 {
                "0".to_string()
            } else if sci {
                format!("{v:.1e}")
            } else {
                format!("{v:.decimals$}")
            };
            (v, label)
        })
        .collect()
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn render_panel(out: &mut String, panel: &Panel, ox: f64, oy: f64) {
    let pts = || panel.series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = match panel.x_range {
        Some((lo, hi)) => range([lo, hi].into_iter()),
        None => range(pts().map(|p| p.0)),
    };
    let (y0, y1) = range(pts().map(|p| p.1));
    let (pw, ph) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
    let (left, top) = (ox + MARGIN_L, oy + MARGIN_T);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let _ = writeln!(
        out,
        r##"<rect x="{left:.2}" y="{top:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        oy + 18.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        top + ph + 34.0,
        escape(&panel.x_label)
    );
    let (lx, ly) = (ox + 14.0, top + ph / 2.0);
    let _ = writeln!(
        out,
        r#"<text x="{lx:.2}" y="{ly:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#,
        escape(&panel.y_label)
    );
    for (xv, label) in nice_ticks(x0, x1, 5) {
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{y:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##,
            top + ph + 4.0,
            x = sx(xv),
            y = top + ph
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="middle">{label}</text>"#,
            sx(xv),
            top + ph + 14.0
        );
    }
    for (yv, label) in nice_ticks(y0, y1, 4) {
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{left:.2}" y2="{y:.2}" stroke="#333"/>"##,
            left - 3.0,
            y = sy(yv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="end">{label}</text>"#,
            left - 5.0,
            sy(yv) + 3.0
        );
    }
    for (i, s) in panel.series.iter().enumerate() {
        match s.style {
            Style::Line if !s.points.is_empty() => {
                let path: Vec<String> = s
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                    .collect();
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
                    s.color,
                    path.join(" ")
                );
            }
            Style::Points => {
                for &(x, y) in &s.points {
                    let _ = writeln!(
                        out,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{}"/>"#,
                        sx(x),
                        sy(y),
                        s.color
                    );
                }
            }
            Style::Line => {}
        }
        if !s.label.is_empty() {
            let ky = top + 8.0 + 13.0 * i as f64;
            let kx = left + pw + 10.0;
            let _ = writeln!(
                out,
                r#"<line x1="{kx:.2}" y1="{ky:.2}" x2="{:.2}" y2="{ky:.2}" stroke="{}" stroke-width="2"/>"#,
                kx + 14.0,
                s.color
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#,
                kx + 18.0,
                ky + 3.5,
                escape(&s.label)
            );
        }
    }
}

/// Lays panels out on a grid with `columns` columns.
pub fn render_figure(title: &str, panels: &[Panel], columns: usize) -> String {
    let columns = columns.max(1);
    let rows = panels.len().div_ceil(columns).max(1);
    let (w, h) = (PANEL_W * columns as f64, 30.0 + PANEL_H * rows as f64);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="20" font-size="15" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    for (i, p) in panels.iter().enumerate() {
        let (c, r) = (i % columns, i / columns);
        render_panel(&mut out, p, c as f64 * PANEL_W, 30.0 + r as f64 * PANEL_H);
    }
    out.push_str("</svg>\n");
    out
}

fn curve_panel(
    summary: &DoeSummary,
    title: &str,
    y_label: &str,
    pick: fn(&crate::report::ExperimentSummary) -> &[f64],
) -> Panel {
    let mut p = Panel::new(title, "iteration", y_label);
    for e in &summary.experiments {
        let pts = e
            .curve_iterations
            .iter()
            .zip(pick(e))
            .map(|(&i, &v)| (i as f64, v))
            .collect();
        p.series
            .push(Series::line(format!("exp {}", e.id), e.id as usize, pts));
    }
    p
}

/// Mean forward-model MSE on the test set, one curve per experiment.
pub fn forward_mse_figure(summary: &DoeSummary) -> String {
    let p = curve_panel(summary, "Forward model: mean test MSE", "MSE", |e| {
        &e.mean_fwd_curve
    });
    render_figure("Forward-model learning curves", &[p], 1)
}

pub fn inverse_mse_figure(summary: &DoeSummary) -> String {
    let p = curve_panel(summary, "Inverse model: mean test MSE", "MSE", |e| {
        &e.mean_inv_curve
    });
    render_figure("Inverse-model learning curves", &[p], 1)
}

fn column(rows: &[CsvRow], f: impl Fn(&CsvRow) -> Option<f64>) -> Vec<(f64, f64)> {
    rows.iter()
        .filter_map(|r| f(r).map(|v| (r.iter as f64, v)))
        .collect()
}

/// Movement amplitude, exploration sigma, MSE slope and error-buffer
/// capacity of single runs, one column per run.
pub fn dynamics_figure(runs: &[(String, &[CsvRow])]) -> String {
    let mut panels = Vec::new();
    type Getter = fn(&CsvRow) -> Option<f64>;
    let rows_spec: [(&str, Getter, Style); 4] = [
        (
            "movement amplitude",
            |r| Some(r.move_amplitude),
            Style::Line,
        ),
        ("exploration sigma", |r| Some(r.sigma), Style::Line),
        ("MSE slope", |r| r.mse_slope, Style::Line),
        (
            "buffer capacity",
            |r| Some(r.buf_capacity as f64),
            Style::Line,
        ),
    ];
    for (name, get, style) in rows_spec {
        for (ci, (label, rows)) in runs.iter().enumerate() {
            let mut p = Panel::new(&format!("{label}: {name}"), "iteration", name);
            let pts = column(rows, get);
            p.series.push(match style {
                Style::Line => Series::line("", ci, pts),
                Style::Points => Series::points("", ci, pts),
            });
            panels.push(p);
        }
    }
    render_figure("Exploration dynamics", &panels, runs.len().max(1))
}

/// Active goal over time and each goal's prediction-error slope.
pub fn goals_figure(label: &str, rows: &[CsvRow], num_goals: usize) -> String {
    let mut panels = Vec::new();
    let x_range = rows.last().map(|r| (0.0, r.iter as f64));
    let mut g = Panel::new(&format!("{label}: active goal"), "iteration", "goal id");
    g.x_range = x_range;
    g.series.push(Series::points(
        "",
        0,
        column(rows, |r| Some(r.goal_id as f64)),
    ));
    panels.push(g);
    for goal in 0..num_goals {
        let mut p = Panel::new(&format!("goal {goal}: error slope"), "iteration", "slope");
        p.x_range = x_range;
        p.series.push(Series::points(
            "",
            goal,
            column(rows, |r| {
                if r.goal_id == goal {
                    r.goal_slope
                } else {
                    None
                }
            }),
        ));
        panels.push(p);
    }
    render_figure("Goal selection", &panels, 2)
}

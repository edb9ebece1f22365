//! Static SVG time plots. Output depends only on the data, so identical runs give
//! byte-identical files.

use std::fmt::Write;

use nalgebra::DVector;

use crate::analysis::DecayFit;
use crate::error::{Error, Result};
use crate::integrator::PiEpsTrajectory;

const WIDTH: f64 = 760.0;
const PANEL_H: f64 = 150.0;
const GAP: f64 = 44.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 28.0;
/// Longest polyline; longer series are reduced to per-bucket min/max.
const MAX_POINTS: usize = 2400;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotStyle {
    Plain,
    /// Adds a distance-to-minimizer panel with the fitted decay envelope.
    Envelope,
}

impl PlotStyle {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "envelope" => Ok(Self::Envelope),
            other => Err(Error::InvalidConfig(format!("unknown plot style '{other}' (plain, envelope)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub dashed: bool,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let f = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    f * mag
}

fn ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let step = nice_step(hi - lo, 5);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    ((first..=last).map(|k| k as f64 * step).collect(), decimals)
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo <= 1e-12 * (1.0 + lo.abs()) {
        let pad = 0.5 * lo.abs().max(1.0);
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn decimate(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let buckets = MAX_POINTS / 2;
    let per = points.len().div_ceil(buckets);
    let mut out = Vec::with_capacity(MAX_POINTS + 2);
    for chunk in points.chunks(per) {
        let lo = chunk.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        let hi = chunk.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        if lo.0 <= hi.0 {
            out.push(*lo);
            out.push(*hi);
        } else {
            out.push(*hi);
            out.push(*lo);
        }
    }
    out.dedup();
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Stacked panels sharing the horizontal axis.
pub fn render_panels(panels: &[Panel], x_label: &str) -> Result<String> {
    if panels.is_empty() || panels.iter().all(|p| p.series.iter().all(|s| s.points.is_empty())) {
        return Err(Error::InvalidConfig("nothing to plot: every series is empty".into()));
    }
    let (t0, t1) = {
        let xs = panels.iter().flat_map(|p| p.series.iter().flat_map(|s| s.points.iter().map(|q| q.0)));
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi > lo {
            (lo, hi)
        } else {
            (lo, lo + 1.0)
        }
    };
    let plot_w = WIDTH - LEFT - RIGHT;
    let height = TOP + panels.len() as f64 * (PANEL_H + GAP) + 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (pi, panel) in panels.iter().enumerate() {
        let top = TOP + pi as f64 * (PANEL_H + GAP);
        let (y0, y1) = range(panel.series.iter().flat_map(|s| s.points.iter().map(|q| q.1)));
        let px = |t: f64| LEFT + (t - t0) / (t1 - t0) * plot_w;
        let py = |v: f64| top + PANEL_H - (v - y0) / (y1 - y0) * PANEL_H;
        let _ = writeln!(s, r#"<g class="panel">"#);
        let _ = writeln!(
            s,
            r#"<text x="{LEFT}" y="{:.1}" font-weight="bold">{}</text>"#,
            top - 8.0,
            escape(&panel.title)
        );
        let (yt, yd) = ticks(y0, y1);
        for v in yt {
            let y = py(v);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e4e4e4"/><text x="{:.1}" y="{:.2}" text-anchor="end">{v:.yd$}</text>"##,
                LEFT + plot_w,
                LEFT - 5.0,
                y + 4.0
            );
        }
        let (xt, xd) = ticks(t0, t1);
        for t in xt {
            let x = px(t);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{top:.2}" x2="{x:.2}" y2="{:.2}" stroke="#e4e4e4"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t:.xd$}</text>"##,
                top + PANEL_H,
                top + PANEL_H + 14.0
            );
        }
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{top:.2}" width="{plot_w}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(14,{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            top + PANEL_H / 2.0,
            escape(&panel.y_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + plot_w / 2.0,
            top + PANEL_H + 28.0,
            escape(x_label)
        );
        let mut legend_x = WIDTH - RIGHT;
        for series in panel.series.iter().rev() {
            legend_x -= 9.0 + 7.0 * series.label.chars().count() as f64 + 22.0;
            let _ = writeln!(
                s,
                r#"<line x1="{legend_x:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                top - 12.0,
                legend_x + 16.0,
                top - 12.0,
                series.color,
                legend_x + 20.0,
                top - 8.0,
                escape(&series.label)
            );
        }
        for series in &panel.series {
            if series.points.is_empty() {
                continue;
            }
            let mut d = String::new();
            for (k, (t, v)) in decimate(&series.points).into_iter().enumerate() {
                if !v.is_finite() {
                    continue;
                }
                let _ = write!(d, "{}{:.2},{:.2}", if k == 0 { "M" } else { " L" }, px(t), py(v));
            }
            let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.4"{dash}/>"#,
                series.color
            );
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// One panel per state coordinate (`x_i` solid, `xi_i` dashed) and a cost panel; the
/// envelope style adds `|x - x*|` under the fitted decay bound.
pub fn trajectory_svg(
    traj: &PiEpsTrajectory,
    style: PlotStyle,
    envelope: Option<(&DVector<f64>, &DecayFit)>,
) -> Result<String> {
    trace_svg(&traj.times, &traj.x, &traj.xi, &traj.y, style, envelope)
}

/// [`trajectory_svg`] on bare columns, e.g. read back from a trace file.
pub fn trace_svg(
    times: &[f64],
    x: &[DVector<f64>],
    xi: &[DVector<f64>],
    y: &[f64],
    style: PlotStyle,
    envelope: Option<(&DVector<f64>, &DecayFit)>,
) -> Result<String> {
    if times.is_empty() {
        return Err(Error::InvalidConfig("cannot plot an empty trajectory".into()));
    }
    if x.len() != times.len() || xi.len() != times.len() || y.len() != times.len() {
        return Err(Error::InvalidConfig("trace columns have different lengths".into()));
    }
    let n = x[0].len();
    let mut panels = Vec::with_capacity(n + 2);
    for i in 0..n {
        panels.push(Panel {
            title: format!("x{0} and xi{0}", i + 1),
            y_label: "state".into(),
            series: vec![
                Series {
                    label: format!("x{}", i + 1),
                    color: "#1f5fbf",
                    dashed: false,
                    points: times.iter().zip(x).map(|(t, x)| (*t, x[i])).collect(),
                },
                Series {
                    label: format!("xi{}", i + 1),
                    color: "#d0641c",
                    dashed: true,
                    points: times.iter().zip(xi).map(|(t, x)| (*t, x[i])).collect(),
                },
            ],
        });
    }
    panels.push(Panel {
        title: "cost J(x(t))".into(),
        y_label: "J".into(),
        series: vec![Series {
            label: "J".into(),
            color: "#2b8a3e",
            dashed: false,
            points: times.iter().copied().zip(y.iter().copied()).collect(),
        }],
    });
    if style == PlotStyle::Envelope {
        let (x_star, fit) = envelope
            .ok_or_else(|| Error::InvalidConfig("the envelope style needs a minimizer and a decay fit".into()))?;
        let dist: Vec<f64> = x.iter().map(|p| (p - x_star).norm()).collect();
        let t0 = times[0];
        let d0 = dist[0];
        panels.push(Panel {
            title: format!(
                "|x - x*| with bound {:.3} |x0 - x*| exp(-{:.4} t) + {:.4}",
                fit.beta, fit.lambda, fit.rho
            ),
            y_label: "distance".into(),
            series: vec![
                Series {
                    label: "|x - x*|".into(),
                    color: "#1f5fbf",
                    dashed: false,
                    points: times.iter().copied().zip(dist.iter().copied()).collect(),
                },
                Series {
                    label: "envelope".into(),
                    color: "#b02020",
                    dashed: true,
                    points: times.iter().map(|t| (*t, fit.envelope(d0, t - t0))).collect(),
                },
            ],
        });
    }
    render_panels(&panels, "time")
}

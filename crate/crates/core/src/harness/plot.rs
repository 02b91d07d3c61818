//! Minimal hand-written SVG line charts with a ±stderr band.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::metrics::{mean_stderr, IterationRecord, MetricsLog};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 130.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One line: `(x, mean, stderr)` per point, in x order.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
}

impl Series {
    /// Mean episode return against environment steps, averaged over every
    /// (seed, worker) record sharing an iteration.
    pub fn learning_curve(label: &str, records: &[IterationRecord]) -> Self {
        let mut by_iter: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
        for r in records {
            let e = by_iter.entry(r.iteration).or_insert((r.env_steps, Vec::new()));
            e.1.push(r.mean_episode_return);
        }
        let points = by_iter
            .values()
            .map(|(steps, xs)| {
                let finite: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
                let (m, s) = if finite.is_empty() { (f64::NAN, 0.0) } else { mean_stderr(&finite) };
                (*steps as f64, m, s)
            })
            .collect();
        Self {
            label: label.to_string(),
            points,
        }
    }

    fn drawable(&self) -> Vec<(f64, f64, f64)> {
        self.points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

/// Render series as an SVG document. Each series becomes one `<polyline>`
/// with a vertex per point (a single point is drawn as a `<circle>`), over a
/// shaded `<polygon>` for mean ± stderr.
pub fn render_svg(series: &[Series], spec: &PlotSpec) -> Result<String> {
    let drawable: Vec<(&Series, Vec<(f64, f64, f64)>)> = series.iter().map(|s| (s, s.drawable())).collect();
    let all: Vec<(f64, f64, f64)> = drawable.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::State("nothing to plot: no finite data points".into()));
    }
    let (x0, x1) = span(
        all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = span(
        all.iter().map(|p| p.1 - p.2.abs()).fold(f64::INFINITY, f64::min),
        all.iter().map(|p| p.1 + p.2.abs()).fold(f64::NEG_INFINITY, f64::max),
    );
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(&spec.title));
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            MARGIN_TOP + ph + 16.0,
            tick(xv)
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, MARGIN_LEFT - 6.0, sy(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        HEIGHT - 10.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        MARGIN_TOP + ph / 2.0,
        MARGIN_TOP + ph / 2.0,
        escape(&spec.y_label)
    );

    for (k, (s, pts)) in drawable.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let _ = writeln!(out, r#"<g class="series" data-label="{}">"#, escape(&s.label));
        if !pts.is_empty() {
            let upper = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1 + p.2.abs())));
            let lower = pts.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1 - p.2.abs())));
            let band: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(out, r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.join(" "));
        }
        if pts.len() == 1 {
            let p = pts[0];
            let _ = writeln!(out, r#"<circle class="mean" cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#, sx(p.0), sy(p.1));
        } else if pts.len() > 1 {
            let line: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
            let _ = writeln!(
                out,
                r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                line.join(" ")
            );
        }
        let ly = MARGIN_TOP + 14.0 + 18.0 * k as f64;
        let lx = MARGIN_LEFT + pw + 10.0;
        let _ = writeln!(out, r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="12" fill="{color}"/>"#, ly - 10.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 16.0, escape(&s.label));
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Write the learning-curve chart of `log` to
/// `<dir>/<experiment>_learning_curve.svg`. An empty log is an error and
/// leaves no file behind.
pub fn emit_plots(log: &MetricsLog, experiment: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    if log.iterations.is_empty() {
        return Err(Error::State(format!("experiment {experiment:?} has no iteration records to plot")));
    }
    let series = vec![Series::learning_curve(experiment, &log.iterations)];
    let spec = PlotSpec {
        title: format!("{experiment}: learning curve"),
        x_label: "environment steps".into(),
        y_label: "mean episode return".into(),
    };
    let svg = render_svg(&series, &spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{experiment}_learning_curve.svg"));
    fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    Ok(vec![path])
}

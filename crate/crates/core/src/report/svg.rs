//! Hand-written SVG charts.
//!
//! Every plot area is a `<g class="plot">` carrying its data-to-pixel mapping
//! as attributes (`data-y-min`, `data-y-max`, `data-top`, `data-height`, and
//! for time series `data-x-min`, `data-x-max`, `data-left`, `data-width`), so
//! the geometry can be checked by reading the file back.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::stats::Summary;
use crate::taxonomy::ActionCategory;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FigureError {
    #[error("no treatments to plot")]
    EmptyStats,
    #[error("no series with at least 2 runs")]
    InsufficientRuns,
    #[error("no category counts to plot")]
    EmptyCounts,
    #[error("non-finite value in figure data")]
    NonFinite,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn px(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Tick step and rounded bounds covering `[lo, hi]`.
pub fn nice_bounds(lo: f64, hi: f64) -> (f64, f64, f64) {
    let (lo, hi) = if hi - lo < 1e-12 { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    ((lo / step).floor() * step, (hi / step).ceil() * step, step)
}

/// Maps data values to pixels along one axis. `flip` puts larger values at
/// smaller pixel coordinates (the usual y axis).
#[derive(Debug, Clone, Copy)]
pub struct Scale {
    pub min: f64,
    pub max: f64,
    pub start: f64,
    pub length: f64,
    pub flip: bool,
}

impl Scale {
    pub fn map(&self, v: f64) -> f64 {
        let f = (v - self.min) / (self.max - self.min);
        if self.flip {
            self.start + (1.0 - f) * self.length
        } else {
            self.start + f * self.length
        }
    }

    pub fn unmap(&self, p: f64) -> f64 {
        let f = (p - self.start) / self.length;
        let f = if self.flip { 1.0 - f } else { f };
        self.min + f * (self.max - self.min)
    }
}

struct Doc {
    body: String,
    width: f64,
    height: f64,
}

impl Doc {
    fn new(width: f64, height: f64, title: &str, provenance: &str, timestamp: Option<&str>) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
            w = px(width),
            h = px(height)
        );
        let _ = writeln!(body, "<title>{}</title>", escape(title));
        let _ = writeln!(body, "<metadata>");
        let _ = writeln!(body, r#"<provenance>{}</provenance>"#, escape(provenance));
        if let Some(ts) = timestamp {
            let _ = writeln!(body, "<generated>{}</generated>", escape(ts));
        }
        let _ = writeln!(body, "</metadata>");
        let _ = writeln!(body, r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#, px(width), px(height));
        let _ = writeln!(
            body,
            r#"<text class="title" x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            px(width / 2.0),
            escape(title)
        );
        Self { body, width, height }
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.body.push_str(s.as_ref());
        self.body.push('\n');
    }

    fn finish(mut self) -> String {
        let _ = (self.width, self.height);
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn y_axis(doc: &mut Doc, scale: &Scale, step: f64, x: f64, label: &str, grid_to: f64) {
    let mut v = scale.min;
    while v <= scale.max + step * 1e-9 {
        let y = scale.map(v);
        doc.line(format!(
            r##"<line class="grid" x1="{}" y1="{}" x2="{}" y2="{}" stroke="#e0e0e0"/>"##,
            px(x),
            px(y),
            px(grid_to),
            px(y)
        ));
        doc.line(format!(
            r#"<text class="tick" x="{}" y="{}" text-anchor="end">{}</text>"#,
            px(x - 6.0),
            px(y + 4.0),
            tick_label(v)
        ));
        v += step;
    }
    doc.line(format!(
        r##"<line class="axis" x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="#333"/>"##,
        px(scale.start),
        px(scale.start + scale.length),
        x = px(x)
    ));
    let mid = scale.start + scale.length / 2.0;
    doc.line(format!(
        r#"<text class="axis-label" x="{}" y="{}" text-anchor="middle" transform="rotate(-90 {} {})">{}</text>"#,
        px(x - 42.0),
        px(mid),
        px(x - 42.0),
        px(mid),
        escape(label)
    ));
}

fn tick_label(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

/// Rough rendered width of a legend entry at the default font size.
fn legend_width<'a>(labels: impl IntoIterator<Item = &'a str>) -> f64 {
    40.0 + 7.0 * labels.into_iter().map(|l| l.chars().count()).max().unwrap_or(0) as f64
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> Result<(), FigureError> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FigureError::NonFinite)
    }
}

/// Box per treatment: q1–q3 box, median line, mean triangle, whiskers at
/// min and max.
pub fn emit_boxplot(
    title: &str,
    y_label: &str,
    entries: &[(String, Summary<f64>)],
    provenance: &str,
    timestamp: Option<&str>,
) -> Result<String, FigureError> {
    if entries.is_empty() {
        return Err(FigureError::EmptyStats);
    }
    for (_, s) in entries {
        check_finite([&s.min, &s.q1, &s.median, &s.q3, &s.max, &s.mean])?;
    }
    let lo = entries.iter().map(|(_, s)| s.min).fold(f64::INFINITY, f64::min).min(0.0);
    let hi = entries.iter().map(|(_, s)| s.max).fold(f64::NEG_INFINITY, f64::max);
    let (y_min, y_max, step) = nice_bounds(lo, hi);
    let longest = entries.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0);
    let slot = (7.0 * longest as f64 + 14.0).max(110.0);
    let (left, top, height) = (80.0, 50.0, 320.0);
    let width = left + slot * entries.len() as f64 + 30.0;
    let mut doc = Doc::new(width.max(320.0), top + height + 70.0, title, provenance, timestamp);
    let ys = Scale {
        min: y_min,
        max: y_max,
        start: top,
        length: height,
        flip: true,
    };
    y_axis(&mut doc, &ys, step, left, y_label, left + slot * entries.len() as f64);
    doc.line(format!(
        r#"<g class="plot" data-y-min="{y_min}" data-y-max="{y_max}" data-top="{top}" data-height="{height}">"#
    ));
    for (i, (label, s)) in entries.iter().enumerate() {
        let cx = left + slot * (i as f64 + 0.5);
        let half = 28.0;
        let c = color(i);
        let (y_q1, y_q3) = (ys.map(s.q1), ys.map(s.q3));
        doc.line(format!(r#"<g class="treatment" data-treatment="{}">"#, escape(label)));
        doc.line(format!(
            r##"<line class="whisker" x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="#333"/>"##,
            px(ys.map(s.max)),
            px(y_q3),
            x = px(cx)
        ));
        doc.line(format!(
            r##"<line class="whisker" x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="#333"/>"##,
            px(y_q1),
            px(ys.map(s.min)),
            x = px(cx)
        ));
        for (class, v) in [("whisker-cap-max", s.max), ("whisker-cap-min", s.min)] {
            let y = px(ys.map(v));
            doc.line(format!(
                r##"<line class="{class}" x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#333"/>"##,
                px(cx - half / 2.0),
                px(cx + half / 2.0)
            ));
        }
        doc.line(format!(
            r##"<rect class="box" x="{}" y="{}" width="{}" height="{}" fill="{c}" fill-opacity="0.45" stroke="{c}"/>"##,
            px(cx - half),
            px(y_q3),
            px(2.0 * half),
            px(y_q1 - y_q3)
        ));
        let y_med = px(ys.map(s.median));
        doc.line(format!(
            r##"<line class="median" x1="{}" y1="{y_med}" x2="{}" y2="{y_med}" stroke="#000" stroke-width="2"/>"##,
            px(cx - half),
            px(cx + half)
        ));
        let y_mean = ys.map(s.mean);
        doc.line(format!(
            r##"<path class="mean" data-cx="{}" data-cy="{}" d="M{},{} L{},{} L{},{} Z" fill="#2e7d32"/>"##,
            px(cx),
            px(y_mean),
            px(cx),
            px(y_mean - 5.0),
            px(cx - 5.0),
            px(y_mean + 4.0),
            px(cx + 5.0),
            px(y_mean + 4.0)
        ));
        doc.line(format!(
            r#"<text class="x-label" x="{}" y="{}" text-anchor="middle">{}</text>"#,
            px(cx),
            px(top + height + 20.0),
            escape(label)
        ));
        doc.line("</g>");
    }
    doc.line("</g>");
    Ok(doc.finish())
}

#[derive(Debug, Clone)]
pub struct SeriesInput {
    pub label: String,
    pub means: Vec<f64>,
    /// `(low, high)` per day; absent when the series has a single run.
    pub band: Option<Vec<(f64, f64)>>,
}

/// Mean line and confidence band per treatment over days 1..n.
pub fn emit_timeseries(
    title: &str,
    y_label: &str,
    series: &[SeriesInput],
    provenance: &str,
    timestamp: Option<&str>,
) -> Result<String, FigureError> {
    if series.is_empty() || series.iter().all(|s| s.band.is_none()) {
        return Err(FigureError::InsufficientRuns);
    }
    for s in series {
        check_finite(&s.means)?;
        if let Some(b) = &s.band {
            check_finite(b.iter().flat_map(|(l, h)| [l, h]))?;
        }
    }
    let days = series.iter().map(|s| s.means.len()).max().unwrap_or(0).max(2);
    let all = series.iter().flat_map(|s| {
        s.means
            .iter()
            .copied()
            .chain(s.band.iter().flatten().flat_map(|(l, h)| [*l, *h]))
    });
    let (lo, hi) = all.fold((0.0f64, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (y_min, y_max, step) = nice_bounds(lo, hi);
    let (left, top, width, height) = (80.0, 50.0, 560.0, 320.0);
    let legend = legend_width(series.iter().map(|s| s.label.as_str()));
    let mut doc = Doc::new(left + width + legend, top + height + 70.0, title, provenance, timestamp);
    let ys = Scale {
        min: y_min,
        max: y_max,
        start: top,
        length: height,
        flip: true,
    };
    let xs = Scale {
        min: 1.0,
        max: days as f64,
        start: left,
        length: width,
        flip: false,
    };
    y_axis(&mut doc, &ys, step, left, y_label, left + width);
    for d in 1..=days {
        doc.line(format!(
            r#"<text class="tick" x="{}" y="{}" text-anchor="middle">{d}</text>"#,
            px(xs.map(d as f64)),
            px(top + height + 18.0)
        ));
    }
    doc.line(format!(
        r#"<text class="axis-label" x="{}" y="{}" text-anchor="middle">Day</text>"#,
        px(left + width / 2.0),
        px(top + height + 40.0)
    ));
    doc.line(format!(
        r#"<g class="plot" data-y-min="{y_min}" data-y-max="{y_max}" data-top="{top}" data-height="{height}" data-x-min="1" data-x-max="{days}" data-left="{left}" data-width="{width}">"#
    ));
    for (i, s) in series.iter().enumerate() {
        let c = color(i);
        doc.line(format!(r#"<g class="series" data-treatment="{}">"#, escape(&s.label)));
        if let Some(band) = &s.band {
            let upper = band
                .iter()
                .enumerate()
                .map(|(d, (_, h))| format!("{},{}", px(xs.map(d as f64 + 1.0)), px(ys.map(*h))));
            let lower = band
                .iter()
                .enumerate()
                .rev()
                .map(|(d, (l, _))| format!("{},{}", px(xs.map(d as f64 + 1.0)), px(ys.map(*l))));
            let points: Vec<String> = upper.chain(lower).collect();
            doc.line(format!(
                r#"<polygon class="band" points="{}" fill="{c}" fill-opacity="0.2" stroke="none"/>"#,
                points.join(" ")
            ));
        }
        let points: Vec<String> = s
            .means
            .iter()
            .enumerate()
            .map(|(d, m)| format!("{},{}", px(xs.map(d as f64 + 1.0)), px(ys.map(*m))))
            .collect();
        doc.line(format!(
            r#"<polyline class="mean-line" points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
            points.join(" ")
        ));
        doc.line("</g>");
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + width + 20.0;
        doc.line(format!(
            r#"<g class="legend-item"><rect x="{}" y="{}" width="14" height="10" fill="{c}"/><text class="legend" x="{}" y="{}">{}</text></g>"#,
            px(lx),
            px(ly - 9.0),
            px(lx + 20.0),
            px(ly),
            escape(&s.label)
        ));
    }
    doc.line("</g>");
    Ok(doc.finish())
}

/// One panel per category, each with its own y scale and one bar per
/// treatment. Zero counts get a zero-height bar and a `0` label.
pub fn emit_category_chart(
    title: &str,
    entries: &[(String, BTreeMap<ActionCategory, f64>)],
    provenance: &str,
    timestamp: Option<&str>,
) -> Result<String, FigureError> {
    if entries.is_empty() {
        return Err(FigureError::EmptyCounts);
    }
    for (_, m) in entries {
        check_finite(m.values())?;
    }
    let (panel_w, panel_h, gap, top, left) = (40.0 + 34.0 * entries.len() as f64, 200.0, 70.0, 75.0, 70.0);
    let cols = 3usize;
    let rows = ActionCategory::ALL.len().div_ceil(cols);
    let width = left + cols as f64 * (panel_w + gap) + legend_width(entries.iter().map(|(l, _)| l.as_str()));
    let height = top + rows as f64 * (panel_h + 80.0) - 40.0;
    let mut doc = Doc::new(width, height, title, provenance, timestamp);
    for (k, cat) in ActionCategory::ALL.iter().enumerate() {
        let px0 = left + (k % cols) as f64 * (panel_w + gap);
        let py0 = top + (k / cols) as f64 * (panel_h + 80.0);
        let values: Vec<f64> = entries.iter().map(|(_, m)| m.get(cat).copied().unwrap_or(0.0)).collect();
        let hi = values.iter().copied().fold(0.0, f64::max);
        let (y_min, y_max, step) = nice_bounds(0.0, if hi > 0.0 { hi } else { 1.0 });
        let ys = Scale {
            min: y_min,
            max: y_max,
            start: py0,
            length: panel_h,
            flip: true,
        };
        doc.line(format!(
            r#"<g class="panel" data-category="{}">"#,
            cat.key()
        ));
        doc.line(format!(
            r#"<text class="panel-title" x="{}" y="{}" text-anchor="middle">{}</text>"#,
            px(px0 + panel_w / 2.0),
            px(py0 - 20.0),
            escape(cat.label())
        ));
        y_axis(&mut doc, &ys, step, px0, "", px0 + panel_w);
        doc.line(format!(
            r#"<g class="plot" data-y-min="{y_min}" data-y-max="{y_max}" data-top="{py0}" data-height="{panel_h}">"#
        ));
        let bar_w = 24.0;
        for (i, ((label, _), v)) in entries.iter().zip(&values).enumerate() {
            let x = px0 + 20.0 + 34.0 * i as f64;
            let y = ys.map(*v);
            let base = ys.map(0.0);
            doc.line(format!(
                r#"<rect class="bar" data-treatment="{}" data-value="{v}" x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
                escape(label),
                px(x),
                px(y),
                px(bar_w),
                px(base - y),
                color(i)
            ));
            doc.line(format!(
                r#"<text class="bar-label" data-treatment="{}" x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
                escape(label),
                px(x + bar_w / 2.0),
                px(y - 4.0),
                bar_label(*v)
            ));
        }
        doc.line("</g>");
        doc.line("</g>");
    }
    let lx = left + cols as f64 * (panel_w + gap);
    for (i, (label, _)) in entries.iter().enumerate() {
        let ly = top + 20.0 * i as f64;
        doc.line(format!(
            r#"<g class="legend-item"><rect x="{}" y="{}" width="14" height="10" fill="{}"/><text class="legend" x="{}" y="{}">{}</text></g>"#,
            px(lx),
            px(ly - 9.0),
            color(i),
            px(lx + 20.0),
            px(ly),
            escape(label)
        ));
    }
    Ok(doc.finish())
}

fn bar_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v:.2}")
    }
}

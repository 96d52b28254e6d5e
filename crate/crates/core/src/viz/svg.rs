//! Minimal SVG 1.1 scatter plots.
//!
//! Output depends only on the input values, so identical layers always give
//! identical bytes. Coordinates are written with fixed precision.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::array::Array;
use crate::fsutil::write_atomic;

const PANEL: f64 = 480.0;
const MARGIN: f64 = 50.0;
const TICKS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    Circle,
    Square,
    Triangle,
    Cross,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterLayer {
    /// `m x 2` points.
    pub points: Array,
    pub label: String,
    /// Any SVG color string, e.g. `"#1f77b4"`.
    pub color: String,
    pub marker: Marker,
}

impl ScatterLayer {
    pub fn new(
        points: Array,
        label: impl Into<String>,
        color: impl Into<String>,
        marker: Marker,
    ) -> Self {
        Self {
            points,
            label: label.into(),
            color: color.into(),
            marker,
        }
    }
}

/// One pane of a figure.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Panel {
    pub title: String,
    pub layers: Vec<ScatterLayer>,
}

/// Stable color cycle for generated figures.
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn bounds(layers: &[ScatterLayer]) -> ((f64, f64), (f64, f64)) {
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    for l in layers {
        for r in 0..l.points.rows() {
            let p = l.points.row_slice(r);
            xs = (xs.0.min(p[0]), xs.1.max(p[0]));
            ys = (ys.0.min(p[1]), ys.1.max(p[1]));
        }
    }
    let pad = |(lo, hi): (f64, f64)| {
        if !lo.is_finite() {
            return (-1.0, 1.0);
        }
        let span = hi - lo;
        if span == 0.0 {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo - 0.05 * span, hi + 0.05 * span)
        }
    };
    (pad(xs), pad(ys))
}

fn marker(out: &mut String, m: Marker, x: f64, y: f64, color: &str) {
    let r = 4.0;
    let _ = match m {
        Marker::Circle => writeln!(
            out,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{color}" fill-opacity="0.8"/>"#
        ),
        Marker::Square => writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{}" height="{}" fill="{color}" fill-opacity="0.8"/>"#,
            x - r,
            y - r,
            2.0 * r,
            2.0 * r
        ),
        Marker::Triangle => writeln!(
            out,
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}" fill-opacity="0.8"/>"#,
            x,
            y - r,
            x - r,
            y + r,
            x + r,
            y + r
        ),
        Marker::Cross => writeln!(
            out,
            r#"<path d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}" stroke="{color}" stroke-width="2"/>"#,
            x - r,
            y - r,
            x + r,
            y + r,
            x - r,
            y + r,
            x + r,
            y - r
        ),
    };
}

fn render_panel(out: &mut String, panel: &Panel, ox: f64, oy: f64) {
    let ((x0, x1), (y0, y1)) = bounds(&panel.layers);
    let inner = PANEL - 2.0 * MARGIN;
    let sx = |x: f64| ox + MARGIN + (x - x0) / (x1 - x0) * inner;
    let sy = |y: f64| oy + PANEL - MARGIN - (y - y0) / (y1 - y0) * inner;

    let _ = writeln!(
        out,
        r#"<rect x="{:.2}" y="{:.2}" width="{inner:.2}" height="{inner:.2}" fill="none" stroke="black"/>"#,
        ox + MARGIN,
        oy + MARGIN
    );
    for i in 0..TICKS {
        let f = i as f64 / (TICKS - 1) as f64;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (px, py) = (sx(xv), sy(yv));
        let base = oy + PANEL - MARGIN;
        let left = ox + MARGIN;
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{base:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#,
            base + 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{px:.2}" y="{:.2}" font-size="10" text-anchor="middle">{xv:.3}</text>"#,
            base + 18.0
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{left:.2}" y2="{py:.2}" stroke="black"/>"#,
            left - 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{yv:.3}</text>"#,
            left - 7.0,
            py + 3.0
        );
    }
    if !panel.title.is_empty() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{}</text>"#,
            ox + PANEL / 2.0,
            oy + MARGIN - 15.0,
            escape(&panel.title)
        );
    }
    for layer in &panel.layers {
        let color = escape(&layer.color);
        for r in 0..layer.points.rows() {
            let p = layer.points.row_slice(r);
            marker(out, layer.marker, sx(p[0]), sy(p[1]), &color);
        }
    }
    let mut ly = oy + MARGIN + 14.0;
    for layer in panel.layers.iter().filter(|l| !l.label.is_empty()) {
        let lx = ox + PANEL - MARGIN - 110.0;
        marker(out, layer.marker, lx, ly - 4.0, &escape(&layer.color));
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{ly:.2}" font-size="11">{}</text>"#,
            lx + 10.0,
            escape(&layer.label)
        );
        ly += 16.0;
    }
}

/// Renders panes in a grid with `columns` panes per row.
pub fn render_panels(panels: &[Panel], columns: usize) -> String {
    let columns = columns.max(1);
    let rows = panels.len().div_ceil(columns).max(1);
    let width = PANEL * columns.min(panels.len().max(1)) as f64;
    let height = PANEL * rows as f64;
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if panels.is_empty() {
        render_panel(&mut out, &Panel::default(), 0.0, 0.0);
    }
    for (i, panel) in panels.iter().enumerate() {
        let ox = PANEL * (i % columns) as f64;
        let oy = PANEL * (i / columns) as f64;
        render_panel(&mut out, panel, ox, oy);
    }
    out.push_str("</svg>\n");
    out
}

pub fn render_scatter_svg(title: &str, layers: &[ScatterLayer]) -> String {
    render_panels(
        &[Panel {
            title: title.to_string(),
            layers: layers.to_vec(),
        }],
        1,
    )
}

pub fn emit_scatter_svg(path: &Path, layers: &[ScatterLayer]) -> io::Result<()> {
    write_atomic(path, render_scatter_svg("", layers).as_bytes())
}

pub fn emit_panels_svg(path: &Path, panels: &[Panel], columns: usize) -> io::Result<()> {
    write_atomic(path, render_panels(panels, columns).as_bytes())
}

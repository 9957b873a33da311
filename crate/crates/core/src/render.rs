//! SVG rendering of layouts as class-colored rectangles.

use std::fmt::Write;

use crate::layout::{DatasetSchema, Layout};

const PALETTE: [&str; 13] = [
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#bfef45", "#fabed4", "#469990",
    "#dcbeff", "#9a6324", "#800000",
];

/// Stable color for a class index.
pub fn class_color(class: usize) -> &'static str {
    PALETTE[class % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One SVG document for a single layout, scaled to `width` pixels wide.
pub fn layout_svg(layout: &Layout, schema: &DatasetSchema, width: u32) -> String {
    let [cw, ch] = layout.canvas;
    let height = (width as f64 * ch.max(1) as f64 / cw.max(1) as f64).round() as u32;
    let (w, h) = (width as f64, height as f64);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r#"  <rect x="0" y="0" width="{width}" height="{height}" fill="white" stroke="black"/>"#);
    for c in &layout.components {
        let b = &c.bbox;
        let color = class_color(c.class);
        let name = escape(schema.class_name(c.class).unwrap_or("?"));
        let _ = writeln!(
            out,
            r#"  <rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.35" stroke="{color}"><title>{name}</title></rect>"#,
            b.left() * w,
            b.top() * h,
            b.w * w,
            b.h * h
        );
        let _ = writeln!(
            out,
            r#"  <text x="{:.2}" y="{:.2}" font-size="10" fill="{color}">{name}</text>"#,
            b.left() * w + 2.0,
            b.top() * h + 11.0
        );
    }
    out.push_str("</svg>\n");
    out
}

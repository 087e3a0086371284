use std::f64::consts::PI;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::RoomShape;
use crate::error::{Error, Result};
use crate::geometry::{self, cast_ray, Xz};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderOptions {
    /// Panorama panel size in pixels.
    pub width: usize,
    pub height: usize,
    /// Add a strip plotting the normal-angle gradient under the panorama.
    #[serde(default)]
    pub show_gradients: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            width: 1024,
            height: 512,
            show_gradients: false,
        }
    }
}

const STRIP: f64 = 64.0;
const MARGIN: f64 = 16.0;

fn polyline(out: &mut String, pts: &[Xz], closed: bool, stroke: &str) {
    let tag = if closed { "polygon" } else { "polyline" };
    let _ = write!(
        out,
        r#"<{tag} fill="none" stroke="{stroke}" stroke-width="2" points=""#
    );
    for (i, p) in pts.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{:.2},{:.2}", p[0], p[1]);
    }
    out.push_str("\"/>\n");
}

/// SVG with the ceiling and floor boundary curves on an equirectangular
/// canvas and the floor plan in a side panel. Output is byte-identical for
/// identical input.
pub fn render_boundaries(shape: &impl RoomShape, opts: &RenderOptions) -> Result<String> {
    if opts.width < 2 || opts.height < 2 {
        return Err(Error::Config("render size must be at least 2x2".into()));
    }
    let (w, h) = (opts.width as f64, opts.height as f64);
    let plan = shape.floor_plan();
    let h_f = shape.camera_height();
    let h_c = shape.room_height() - h_f;

    let mut ceiling = Vec::with_capacity(opts.width);
    let mut floor = Vec::with_capacity(opts.width);
    for c in 0..opts.width {
        let theta = 2.0 * PI * ((c as f64 + 0.5) / w - 0.5);
        let (d, _) = cast_ray(&plan, theta)
            .ok_or_else(|| Error::Geometry(format!("column {c} ray misses the floor plan")))?;
        let row = |lat: f64| (0.5 - lat / PI) * h;
        let x = c as f64 + 0.5;
        ceiling.push([x, row((h_c / d).atan())]);
        floor.push([x, row(-(h_f / d).atan())]);
    }

    let panel = h;
    let strip = if opts.show_gradients {
        STRIP + MARGIN
    } else {
        0.0
    };
    let total_w = w + MARGIN + panel;
    let total_h = h + strip;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{total_w:.0}" height="{total_h:.0}" viewBox="0 0 {total_w:.0} {total_h:.0}">"#
    );
    let _ = writeln!(
        out,
        r##"<rect x="0" y="0" width="{w:.0}" height="{h:.0}" fill="#f4f4f4" stroke="#999"/>"##
    );
    let _ = writeln!(
        out,
        r##"<line x1="0" y1="{:.2}" x2="{w:.0}" y2="{:.2}" stroke="#bbb" stroke-dasharray="4 4"/>"##,
        h / 2.0,
        h / 2.0
    );
    polyline(&mut out, &ceiling, false, "#1a9e3a");
    polyline(&mut out, &floor, false, "#1a9e3a");

    // floor plan, +x right and +z up, scaled to fit
    let x0 = w + MARGIN;
    let _ = writeln!(
        out,
        r##"<rect x="{x0:.0}" y="0" width="{panel:.0}" height="{panel:.0}" fill="#fff" stroke="#999"/>"##
    );
    let reach = plan
        .iter()
        .map(|p| p[0].abs().max(p[1].abs()))
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let scale = 0.45 * panel / reach;
    let (cx, cy) = (x0 + panel / 2.0, panel / 2.0);
    let to_panel = |p: &Xz| [cx + scale * p[0], cy - scale * p[1]];
    let pts: Vec<Xz> = plan.iter().map(to_panel).collect();
    polyline(&mut out, &pts, true, "#c62828");
    let _ = writeln!(
        out,
        r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="#333"/>"##
    );

    if opts.show_gradients {
        let samples = geometry::sample_polygon_boundary(&plan, opts.width)?;
        let normals = geometry::compute_normals(&samples, h_f)?;
        let g = geometry::compute_normal_gradients(&normals);
        let top = h + MARGIN;
        let _ = writeln!(
            out,
            r##"<rect x="0" y="{top:.0}" width="{w:.0}" height="{STRIP:.0}" fill="#fff" stroke="#999"/>"##
        );
        let pts: Vec<Xz> = g
            .iter()
            .enumerate()
            .map(|(i, gi)| [i as f64 + 0.5, top + STRIP - STRIP * (gi / PI).min(1.0)])
            .collect();
        polyline(&mut out, &pts, false, "#1f4fa8");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

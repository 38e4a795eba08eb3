//! Region-energy topography as a standalone SVG document.

use std::fmt::Write;

use esi_core::geometry::{Point, SourceSpace};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 30.0;
const DISC_RADIUS: f64 = 7.0;
pub const ZERO_FILL: &str = "#bdbdbd";

/// Azimuthal equidistant projection about +z onto the unit disc.
fn project(p: &Point) -> (f64, f64) {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let polar = (p[2] / r).clamp(-1.0, 1.0).acos() / std::f64::consts::PI;
    let az = p[1].atan2(p[0]);
    (polar * az.cos(), polar * az.sin())
}

/// Linear white-yellow-red ramp for `t` in `[0, 1]`.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (255.0, 255.0 - 40.0 * u, 204.0 - 204.0 * u)
    } else {
        let u = (t - 0.5) / 0.5;
        (255.0 - 66.0 * u, 215.0 - 215.0 * u, 0.0)
    };
    format!(
        "#{:02x}{:02x}{:02x}",
        r.round() as u8,
        g.round() as u8,
        b.round() as u8
    )
}

/// One disc per region at its projected centroid, coloured by energy
/// relative to the maximum. Regions with zero energy are drawn gray.
pub fn render_topography(space: &SourceSpace, energies: &[f64], title: &str) -> String {
    let max = energies.iter().cloned().fold(0.0, f64::max);
    let half = (SIZE - 2.0 * MARGIN) / 2.0;
    let centre = SIZE / 2.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{h}" viewBox="0 0 {SIZE} {h}">"#,
        h = SIZE + 20.0
    );
    let _ = writeln!(out, "  <title>{}</title>", escape(title));
    let _ = writeln!(
        out,
        r##"  <circle cx="{centre}" cy="{centre}" r="{half}" fill="none" stroke="#444444" stroke-width="1"/>"##
    );
    for (j, (p, &e)) in space.centroids.iter().zip(energies).enumerate() {
        let (u, v) = project(p);
        let fill = if e > 0.0 && max > 0.0 {
            ramp(e / max)
        } else {
            ZERO_FILL.to_string()
        };
        let _ = writeln!(
            out,
            r##"  <circle cx="{:.2}" cy="{:.2}" r="{DISC_RADIUS}" fill="{fill}" stroke="#555555" stroke-width="0.5"><title>region {j}: {e:.6e}</title></circle>"##,
            centre + half * u,
            centre - half * v,
        );
    }
    let _ = writeln!(
        out,
        r#"  <text x="{centre}" y="{:.0}" font-family="sans-serif" font-size="12" text-anchor="middle">max energy {max:.4e}</text>"#,
        SIZE + 8.0
    );
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

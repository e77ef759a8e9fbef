//! Top-down score map rendering as SVG.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

const SIZE: f64 = 512.0;
const MARGIN: f64 = 8.0;

/// Linear blue-to-red ramp for `t` in [0, 1].
pub fn ramp(t: f64) -> (u8, u8, u8) {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    ((255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8)
}

/// Projects the cloud onto the xy plane (viewer at +z) and draws one dot per point,
/// colored by its min-max normalized score. Higher points are drawn last.
pub fn score_map_svg(cloud: &PointCloud, scores: &[f64]) -> Result<String> {
    if scores.len() != cloud.len() {
        return Err(Error::DimensionMismatch { expected: cloud.len(), got: scores.len() });
    }
    let pts = cloud.points();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in pts {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
    let px = (SIZE - 2.0 * MARGIN) / extent;
    let (smin, smax) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    let span = if smax > smin { smax - smin } else { 1.0 };
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| pts[a][2].total_cmp(&pts[b][2]));

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for i in order {
        let x = MARGIN + (pts[i][0] - lo[0]) * px;
        // image rows grow downward
        let y = SIZE - MARGIN - (pts[i][1] - lo[1]) * px;
        let (r, g, b) = ramp((scores[i] - smin) / span);
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="rgb({r},{g},{b})"/>"#);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

use std::fmt::Write;

use crate::autodiff::Tensor;
use crate::datasets::EmpiricalMeasure;
use crate::w2gan::TrainingTrace;

const SIZE: f64 = 480.0;
const PAD: f64 = 20.0;

struct Frame {
    lo: [f64; 2],
    scale: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let scale = if span.is_finite() && span > 0.0 { (SIZE - 2.0 * PAD) / span } else { 1.0 };
        Self { lo, scale }
    }

    fn px(&self, p: &[f64]) -> (f64, f64) {
        (
            PAD + (p[0] - self.lo[0]) * self.scale,
            SIZE - PAD - (p[1] - self.lo[1]) * self.scale,
        )
    }
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE:.0}" height="{SIZE:.0}" viewBox="0 0 {SIZE:.0} {SIZE:.0}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

/// Arrows from each source point to its image, over the target cloud.
/// Only the first two coordinates are drawn.
pub fn quiver_svg(src: &EmpiricalMeasure, mapped: &Tensor, tgt: &EmpiricalMeasure) -> String {
    let n = src.len().min(mapped.rows());
    let all = (0..src.len())
        .map(|i| src.point(i))
        .chain((0..n).map(|i| mapped.row(i)))
        .chain((0..tgt.len()).map(|i| tgt.point(i)))
        .filter(|p| p.len() >= 2 && p[0].is_finite() && p[1].is_finite());
    let f = Frame::fit(all);
    let mut out = String::new();
    header(&mut out);
    for i in 0..tgt.len() {
        let (x, y) = f.px(tgt.point(i));
        let _ = writeln!(out, r##"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="#e07b39"/>"##);
    }
    for i in 0..n {
        let (x0, y0) = f.px(src.point(i));
        let (x1, y1) = f.px(mapped.row(i));
        if !(x1.is_finite() && y1.is_finite()) {
            continue;
        }
        let _ = writeln!(
            out,
            r##"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="#3a6ea5" stroke-width="0.6"/>"##
        );
        let _ = writeln!(out, r##"<circle cx="{x0:.2}" cy="{y0:.2}" r="1.5" fill="#3a6ea5"/>"##);
        let _ = writeln!(out, r##"<circle cx="{x1:.2}" cy="{y1:.2}" r="1.2" fill="#222222"/>"##);
    }
    out.push_str("</svg>\n");
    out
}

/// Line plot of the W2 estimates of a training trace.
pub fn trace_svg(trace: &TrainingTrace) -> String {
    let pts: Vec<[f64; 2]> = trace
        .rows
        .iter()
        .filter_map(|r| r.w2_estimate.map(|w| [r.iteration as f64, w]))
        .filter(|p| p[1].is_finite())
        .collect();
    let mut out = String::new();
    header(&mut out);
    if pts.len() >= 2 {
        let x_hi = pts.iter().map(|p| p[0]).fold(0.0, f64::max).max(1.0);
        let y_hi = pts.iter().map(|p| p[1]).fold(0.0, f64::max).max(1e-12);
        let w = SIZE - 2.0 * PAD;
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.2},{:.2}", PAD + p[0] / x_hi * w, SIZE - PAD - p[1] / y_hi * w))
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#3a6ea5" stroke-width="1.5"/>"##,
            path.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

//! Supersampled rasterization of simple shapes.

/// Sub-samples per pixel along each axis.
const SUPERSAMPLE: usize = 4;

/// Point in pixel coordinates: `(column, row)`, pixel `(r, c)` spans
/// `[c, c+1] × [r, r+1]`.
pub(crate) type Point = (f64, f64);

/// Fraction of each pixel covered by the shape, `H × W` row-major.
pub(crate) fn coverage(height: usize, width: usize, inside: impl Fn(Point) -> bool) -> Vec<f64> {
    let step = 1.0 / SUPERSAMPLE as f64;
    let total = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let mut hits = 0usize;
            for i in 0..SUPERSAMPLE {
                for j in 0..SUPERSAMPLE {
                    let p = (c as f64 + (j as f64 + 0.5) * step, r as f64 + (i as f64 + 0.5) * step);
                    if inside(p) {
                        hits += 1;
                    }
                }
            }
            out.push(hits as f64 / total);
        }
    }
    out
}

pub(crate) fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

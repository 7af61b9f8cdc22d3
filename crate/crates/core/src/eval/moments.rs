//! Appearance and pose read back from rendered arm images by intensity
//! moments.

use std::f64::consts::PI;

use super::EvalError;
use crate::data::{ArmParams, ImageDims};

/// Brightness and relative joint angles recovered from one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmReading {
    pub brightness: f64,
    pub angles: Vec<f64>,
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Reads brightness and joint angles from a single-channel (or
/// channel-averaged) arm image.
///
/// Brightness is the mean of pixels at or above 3/4 of the image maximum.
/// Each link direction is the intensity centroid of the pixels lying
/// between 0.2 and 0.9 link lengths from the link's base joint, excluding
/// pixels within `half_width + 1` of earlier links.
pub fn read_arm(image: &[f64], dims: ImageDims, links: usize, arm: &ArmParams) -> Result<ArmReading, EvalError> {
    if image.len() != dims.pixels() {
        return Err(EvalError::Dimension {
            what: "image",
            expected: dims.pixels(),
            got: image.len(),
        });
    }
    let c = dims.channels;
    let grey: Vec<f64> = image.chunks(c).map(|p| p.iter().sum::<f64>() / c as f64).collect();
    let max = grey.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(EvalError::Invalid("image has no foreground".into()));
    }
    let bright: Vec<f64> = grey.iter().copied().filter(|&v| v >= 0.75 * max).collect();
    let brightness = bright.iter().sum::<f64>() / bright.len() as f64;

    let pixel = |i: usize| ((i % dims.width) as f64 + 0.5, (i / dims.width) as f64 + 0.5);
    let l = arm.link_length;
    let mut joint = (dims.width as f64 / 2.0, dims.height as f64 / 2.0);
    let mut segments: Vec<((f64, f64), (f64, f64))> = Vec::new();
    let mut phi_prev = 0.0;
    let mut angles = Vec::with_capacity(links);
    for _ in 0..links {
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for (i, &v) in grey.iter().enumerate() {
            if v <= 0.0 {
                continue;
            }
            let p = pixel(i);
            let r = ((p.0 - joint.0).powi(2) + (p.1 - joint.1).powi(2)).sqrt();
            if r < 0.2 * l || r > 0.9 * l {
                continue;
            }
            if segments.iter().any(|&(a, b)| dist_to_segment(p, a, b) <= arm.half_width + 1.0) {
                continue;
            }
            sx += v * (p.0 - joint.0);
            sy += v * (p.1 - joint.1);
            sw += v;
        }
        if !(sw > 0.0) {
            return Err(EvalError::Invalid("no intensity found along a link".into()));
        }
        let phi = sy.atan2(sx);
        angles.push(wrap_angle(phi - phi_prev));
        let next = (joint.0 + l * phi.cos(), joint.1 + l * phi.sin());
        segments.push((joint, next));
        joint = next;
        phi_prev = phi;
    }
    Ok(ArmReading { brightness, angles })
}

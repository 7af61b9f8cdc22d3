use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::render::{coverage, dist_to_segment, Point};
use super::{DataError, ImageDims};

/// Bar length as a fraction of `min(H, W)`.
pub const BAR_LENGTH: f64 = 0.45;
/// Bar half-width as a fraction of `min(H, W)`.
pub const BAR_HALF_WIDTH: f64 = 0.1;
/// Total arm reach as a fraction of `min(H, W)`.
const ARM_REACH: f64 = 0.46;
pub const DEFAULT_LINKS: usize = 2;
/// Coverage at which a pixel counts as foreground.
const MASK_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeneratorSpec {
    RotatingBar,
    PendulumJoints { links: usize },
}

impl GeneratorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpec::RotatingBar => "rotating-bar",
            GeneratorSpec::PendulumJoints { .. } => "pendulum-joints",
        }
    }

    pub fn domain_dim(&self) -> usize {
        match self {
            GeneratorSpec::RotatingBar => 1,
            GeneratorSpec::PendulumJoints { links } => 2 * links,
        }
    }

    pub fn validate(&self, dims: ImageDims) -> Result<(), DataError> {
        if dims.height < 8 || dims.width < 8 || dims.channels == 0 {
            return Err(DataError::Invalid(format!(
                "images must be at least 8×8 with one channel, got {}×{}×{}",
                dims.height, dims.width, dims.channels
            )));
        }
        if let GeneratorSpec::PendulumJoints { links } = self {
            if ![1, 2, 4].contains(links) {
                return Err(DataError::Invalid(format!("link count {links} is not one of 1, 2, 4")));
            }
        }
        Ok(())
    }

    /// Deterministic parameters of sequence `index` under `seed`.
    pub fn sequence_params(&self, dims: ImageDims, seed: u64, index: u64) -> SequenceParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let size = dims.height.min(dims.width) as f64;
        match self {
            GeneratorSpec::RotatingBar => SequenceParams::Bar(BarParams {
                start_angle: rng.random_range(-PI..PI),
                background: (0..dims.channels).map(|_| Background::draw(&mut rng)).collect(),
            }),
            GeneratorSpec::PendulumJoints { links } => {
                let joints = (0..*links)
                    .map(|k| {
                        if k == 0 {
                            JointPath {
                                offset: rng.random_range(-PI..PI),
                                amplitude: rng.random_range(0.6..1.4),
                                frequency: rng.random_range(0.5..1.0),
                                phase: rng.random_range(0.0..2.0 * PI),
                            }
                        } else {
                            JointPath {
                                offset: rng.random_range(-0.6..0.6),
                                amplitude: rng.random_range(0.3..0.8),
                                frequency: rng.random_range(0.5..1.5),
                                phase: rng.random_range(0.0..2.0 * PI),
                            }
                        }
                    })
                    .collect();
                SequenceParams::Arm(ArmParams {
                    brightness: rng.random_range(0.45..1.0),
                    half_width: rng.random_range(0.045..0.065) * size,
                    link_length: ARM_REACH * size / *links as f64,
                    joints,
                })
            }
        }
    }
}

/// Low-frequency background: a linear ramp plus one slow wave.
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    level: f64,
    ramp: (f64, f64),
    wave_amplitude: f64,
    wave_vector: (f64, f64),
    wave_phase: f64,
}

impl Background {
    fn draw(rng: &mut ChaCha8Rng) -> Background {
        let ramp_dir = rng.random_range(0.0..2.0 * PI);
        let ramp = rng.random_range(0.1..0.3);
        let wave_dir = rng.random_range(0.0..2.0 * PI);
        let freq = rng.random_range(0.5..1.5) * 2.0 * PI;
        Background {
            level: rng.random_range(0.2..0.5),
            ramp: (ramp * ramp_dir.cos(), ramp * ramp_dir.sin()),
            wave_amplitude: rng.random_range(0.05..0.15),
            wave_vector: (freq * wave_dir.cos(), freq * wave_dir.sin()),
            wave_phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    /// Value at normalized coordinates `u, v ∈ [0, 1]`.
    fn at(&self, u: f64, v: f64) -> f64 {
        let (cu, cv) = (u - 0.5, v - 0.5);
        let wave = (self.wave_vector.0 * u + self.wave_vector.1 * v + self.wave_phase).sin();
        (self.level + self.ramp.0 * cu + self.ramp.1 * cv + self.wave_amplitude * wave).clamp(0.0, 0.8)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarParams {
    pub start_angle: f64,
    pub background: Vec<Background>,
}

impl BarParams {
    /// Bar direction at domain point `x`: `start + π·x`.
    pub fn angle(&self, x: f64) -> f64 {
        self.start_angle + PI * x
    }

    /// Row-major `H × W × C` image of the background alone.
    pub fn background_image(&self, dims: ImageDims) -> Vec<f64> {
        let mut out = Vec::with_capacity(dims.pixels());
        for r in 0..dims.height {
            for c in 0..dims.width {
                let u = (c as f64 + 0.5) / dims.width as f64;
                let v = (r as f64 + 0.5) / dims.height as f64;
                out.extend(self.background.iter().map(|b| b.at(u, v)));
            }
        }
        out
    }

    fn coverage(&self, dims: ImageDims, x: f64) -> Vec<f64> {
        let size = dims.height.min(dims.width) as f64;
        let center = (dims.width as f64 / 2.0, dims.height as f64 / 2.0);
        let (len, hw) = (BAR_LENGTH * size, BAR_HALF_WIDTH * size);
        let (ux, uy) = (self.angle(x).cos(), self.angle(x).sin());
        coverage(dims.height, dims.width, |p: Point| {
            let (dx, dy) = (p.0 - center.0, p.1 - center.1);
            let along = dx * ux + dy * uy;
            let across = -dx * uy + dy * ux;
            along >= -hw && along <= len && across.abs() <= hw
        })
    }
}

/// `θ(t) = offset + amplitude·sin(2π·frequency·t + phase)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPath {
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl JointPath {
    fn at(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (2.0 * PI * self.frequency * t + self.phase).sin()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmParams {
    /// Intensity of the arm on a black background.
    pub brightness: f64,
    /// Link half-thickness in pixels.
    pub half_width: f64,
    pub link_length: f64,
    pub joints: Vec<JointPath>,
}

impl ArmParams {
    /// Relative joint angles encoded by a domain vector `[cos θ₁, sin θ₁, …]`.
    pub fn joint_angles(x: &[f64]) -> Vec<f64> {
        x.chunks(2).map(|cs| cs[1].atan2(cs[0])).collect()
    }

    /// Base, elbow(s) and tip positions in pixel coordinates.
    pub fn joint_positions(&self, dims: ImageDims, x: &[f64]) -> Vec<(f64, f64)> {
        let mut p = (dims.width as f64 / 2.0, dims.height as f64 / 2.0);
        let mut out = vec![p];
        let mut phi = 0.0;
        for theta in ArmParams::joint_angles(x) {
            phi += theta;
            p = (p.0 + self.link_length * phi.cos(), p.1 + self.link_length * phi.sin());
            out.push(p);
        }
        out
    }

    fn coverage(&self, dims: ImageDims, x: &[f64]) -> Vec<f64> {
        let joints = self.joint_positions(dims, x);
        coverage(dims.height, dims.width, |p| {
            joints
                .windows(2)
                .any(|seg| dist_to_segment(p, seg[0], seg[1]) <= self.half_width)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SequenceParams {
    Bar(BarParams),
    Arm(ArmParams),
}

fn to_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl SequenceParams {
    /// Domain points of a `frames`-long sequence, rounded to `f32` so that
    /// stored files reproduce them exactly.
    pub fn domain_path(&self, frames: usize) -> Vec<Vec<f64>> {
        let denom = (frames.max(2) - 1) as f64;
        (0..frames)
            .map(|t| {
                let t = t as f64 / denom;
                match self {
                    SequenceParams::Bar(_) => vec![to_f32(t)],
                    SequenceParams::Arm(arm) => arm
                        .joints
                        .iter()
                        .flat_map(|j| {
                            let theta = j.at(t);
                            [to_f32(theta.cos()), to_f32(theta.sin())]
                        })
                        .collect(),
                }
            })
            .collect()
    }

    fn coverage(&self, dims: ImageDims, x: &[f64]) -> Vec<f64> {
        match self {
            SequenceParams::Bar(bar) => bar.coverage(dims, x[0]),
            SequenceParams::Arm(arm) => arm.coverage(dims, x),
        }
    }

    /// Renders the frame at domain point `x`, `H × W × C`, values in `[0, 1]`.
    pub fn render(&self, dims: ImageDims, x: &[f64]) -> Vec<f64> {
        let cov = self.coverage(dims, x);
        let c = dims.channels;
        match self {
            SequenceParams::Bar(bar) => {
                let bg = bar.background_image(dims);
                bg.iter()
                    .enumerate()
                    .map(|(i, &b)| {
                        let a = cov[i / c];
                        to_f32(b * (1.0 - a) + a)
                    })
                    .collect()
            }
            SequenceParams::Arm(arm) => cov
                .iter()
                .flat_map(|&a| std::iter::repeat_n(to_f32(arm.brightness * a), c))
                .collect(),
        }
    }

    /// Foreground mask, `H × W`.
    pub fn mask(&self, dims: ImageDims, x: &[f64]) -> Vec<bool> {
        self.coverage(dims, x).iter().map(|&a| a >= MASK_THRESHOLD).collect()
    }
}

//! Synthetic image-sequence datasets and their on-disk formats.
//!
//! Two generators are provided: a rotating bar over a static per-sequence
//! background (scalar domain `x ∈ [0, 1]`), and an articulated arm whose
//! domain is the `(cos, sin)` of each relative joint angle. Both are pure
//! functions of their parameters and seed, so ground-truth foreground masks
//! can be regenerated from a manifest rather than stored.

mod format;
mod generators;
mod render;

pub use format::{load_dataset, read_sequence, save_dataset, write_sequence, SEQUENCE_MAGIC};
pub use generators::{
    ArmParams, Background, BarParams, GeneratorSpec, JointPath, SequenceParams, BAR_HALF_WIDTH, BAR_LENGTH,
    DEFAULT_LINKS,
};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset parameters: {0}")]
    Invalid(String),
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageDims {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        ImageDims {
            height,
            width,
            channels,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }
}

impl Default for ImageDims {
    fn default() -> Self {
        ImageDims::new(32, 32, 1)
    }
}

/// One sequence of `(x_t, y_t)` pairs. Images are row-major `H × W × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePair {
    pub id: String,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl SequencePair {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn domain_dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub generator: GeneratorSpec,
    pub dims: ImageDims,
    pub seed: u64,
    /// Index of the first sequence in the generator's stream; train and test
    /// sets of one seed use disjoint index ranges.
    pub first_index: u64,
    pub sequences: Vec<SequencePair>,
}

impl Dataset {
    pub fn domain_dim(&self) -> usize {
        self.generator.domain_dim()
    }

    /// Generator parameters of sequence `i`, for regenerating masks and frames.
    pub fn sequence_params(&self, i: usize) -> SequenceParams {
        self.generator.sequence_params(self.dims, self.seed, self.first_index + i as u64)
    }

    /// Foreground masks (`H × W`) for every frame of sequence `i`.
    pub fn masks(&self, i: usize) -> Vec<Vec<bool>> {
        let params = self.sequence_params(i);
        self.sequences[i].x.iter().map(|x| params.mask(self.dims, x)).collect()
    }
}

/// Generates `num_sequences` sequences of `frames` pairs each.
pub fn generate(
    generator: &GeneratorSpec,
    name: &str,
    dims: ImageDims,
    num_sequences: usize,
    frames: usize,
    seed: u64,
    first_index: u64,
) -> Result<Dataset, DataError> {
    generator.validate(dims)?;
    if num_sequences == 0 || frames < 2 {
        return Err(DataError::Invalid(format!(
            "need at least one sequence of two frames, got {num_sequences} × {frames}"
        )));
    }
    let sequences = (0..num_sequences)
        .map(|i| {
            let index = first_index + i as u64;
            let params = generator.sequence_params(dims, seed, index);
            let x = params.domain_path(frames);
            let y = x.iter().map(|xt| params.render(dims, xt)).collect();
            SequencePair {
                id: format!("seq_{index:04}"),
                x,
                y,
            }
        })
        .collect();
    Ok(Dataset {
        name: name.to_string(),
        generator: generator.clone(),
        dims,
        seed,
        first_index,
        sequences,
    })
}

/// Rotating-bar dataset with `x_t = t/(T−1)`.
pub fn gen_rotating_bar(num_sequences: usize, frames: usize, dims: ImageDims, seed: u64) -> Result<Dataset, DataError> {
    generate(&GeneratorSpec::RotatingBar, "rotating-bar", dims, num_sequences, frames, seed, 0)
}

/// Articulated-arm dataset with `domain_dim / 2` links.
pub fn gen_pendulum_joints(
    num_sequences: usize,
    frames: usize,
    dims: ImageDims,
    domain_dim: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    if ![2, 4, 8].contains(&domain_dim) {
        return Err(DataError::Invalid(format!("domain dimension {domain_dim} is not one of 2, 4, 8")));
    }
    let spec = GeneratorSpec::PendulumJoints { links: domain_dim / 2 };
    generate(&spec, "pendulum-joints", dims, num_sequences, frames, seed, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitStrategy {
    UniformSpaced,
    Random,
}

impl std::str::FromStr for SplitStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" | "uniform-spaced" => Ok(SplitStrategy::UniformSpaced),
            "random" => Ok(SplitStrategy::Random),
            other => Err(format!("unknown split strategy '{other}'")),
        }
    }
}

/// Observed and held-out frame indices, both sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub observed: Vec<usize>,
    pub held_out: Vec<usize>,
}

pub fn split_observed(
    frames: usize,
    n_observed: usize,
    strategy: SplitStrategy,
    seed: u64,
) -> Result<Split, DataError> {
    if n_observed == 0 || n_observed >= frames {
        return Err(DataError::Invalid(format!(
            "observed count {n_observed} must lie in 1..{frames}"
        )));
    }
    let mut observed: Vec<usize> = match strategy {
        SplitStrategy::UniformSpaced => (0..n_observed).map(|i| i * frames / n_observed).collect(),
        SplitStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, frames, n_observed).into_vec()
        }
    };
    observed.sort_unstable();
    let mut is_obs = vec![false; frames];
    for &i in &observed {
        is_obs[i] = true;
    }
    let held_out = (0..frames).filter(|&i| !is_obs[i]).collect();
    Ok(Split { observed, held_out })
}

#[cfg(test)]
mod tests;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{TrainConfig, TrainError};
use crate::data::SequencePair;

/// A domain point and its image, both borrowed from a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
}

/// A regressed pair. Its image is only reachable as a loss target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldOut<'a> {
    pub x: &'a [f64],
    y: &'a [f64],
}

impl<'a> HeldOut<'a> {
    pub fn target(&self) -> &'a [f64] {
        self.y
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotOrigin {
    /// Frames of training sequence `sequence`.
    Training {
        sequence: usize,
        encoded: Vec<usize>,
        regressed: Vec<usize>,
    },
    /// Observed test pairs, possibly repeated.
    Observed { indices: Vec<usize> },
}

/// One sequence's share of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot<'a> {
    pub origin: SlotOrigin,
    pub encoded: Vec<Pair<'a>>,
    pub regressed: Vec<HeldOut<'a>>,
}

impl Slot<'_> {
    /// Verifies that no regressed frame is also an encoder input, and that
    /// observed slots carry no regression targets.
    pub fn check_held_out(&self) -> Result<(), TrainError> {
        match &self.origin {
            SlotOrigin::Training { encoded, regressed, .. } => {
                if encoded.iter().any(|i| regressed.contains(i)) {
                    return Err(TrainError::HeldOutLeak);
                }
            }
            SlotOrigin::Observed { .. } => {
                if !self.regressed.is_empty() {
                    return Err(TrainError::HeldOutLeak);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<'a> {
    pub slots: Vec<Slot<'a>>,
}

impl Batch<'_> {
    pub fn encoded_count(&self) -> usize {
        self.slots.iter().map(|s| s.encoded.len()).sum()
    }

    pub fn regressed_count(&self) -> usize {
        self.slots.iter().map(|s| s.regressed.len()).sum()
    }
}

fn training_slots<'a>(
    train: &'a [SequencePair],
    k: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Slot<'a>>, TrainError> {
    if train.len() < k {
        return Err(TrainError::Invalid(format!(
            "batch needs {k} sequences but the training set has {}",
            train.len()
        )));
    }
    let (n, l) = (cfg.encoded_per_sequence, cfg.pairs_per_sequence());
    sample(rng, train.len(), k)
        .into_iter()
        .map(|s| {
            let seq = &train[s];
            if seq.len() < l {
                return Err(TrainError::Invalid(format!(
                    "sequence {} has {} pairs, fewer than L = {l}",
                    seq.id,
                    seq.len()
                )));
            }
            let picked = sample(rng, seq.len(), l).into_vec();
            let (enc, reg) = picked.split_at(n);
            Ok(Slot {
                encoded: enc.iter().map(|&i| Pair { x: &seq.x[i], y: &seq.y[i] }).collect(),
                regressed: reg.iter().map(|&i| HeldOut { x: &seq.x[i], y: &seq.y[i] }).collect(),
                origin: SlotOrigin::Training {
                    sequence: s,
                    encoded: enc.to_vec(),
                    regressed: reg.to_vec(),
                },
            })
        })
        .collect()
}

/// K sequences uniformly without replacement; within each, L = N + M frames
/// uniformly without replacement, the first N encoded and the last M regressed.
pub fn compose_minibatch<'a>(
    train: &'a [SequencePair],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Batch<'a>, TrainError> {
    Ok(Batch {
        slots: training_slots(train, cfg.sequences_per_batch, cfg, rng)?,
    })
}

/// One slot of observed test pairs (encoded only) plus K − 1 training slots.
/// Every observed pair is included; when there are fewer than L of them the
/// slot is topped up to L with uniform draws, with repetition.
pub fn compose_finetune_batch<'a>(
    observed: &'a SequencePair,
    train: &'a [SequencePair],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Batch<'a>, TrainError> {
    if observed.is_empty() {
        return Err(TrainError::Invalid("fine-tuning needs at least one observed pair".into()));
    }
    let n_obs = observed.len();
    let mut indices: Vec<usize> = (0..n_obs).collect();
    let l = cfg.pairs_per_sequence();
    while indices.len() < l {
        indices.push(rng.random_range(0..n_obs));
    }
    let mut slots = vec![Slot {
        encoded: indices
            .iter()
            .map(|&i| Pair {
                x: &observed.x[i],
                y: &observed.y[i],
            })
            .collect(),
        regressed: Vec::new(),
        origin: SlotOrigin::Observed { indices },
    }];
    if cfg.sequences_per_batch > 1 {
        slots.extend(training_slots(train, cfg.sequences_per_batch - 1, cfg, rng)?);
    }
    Ok(Batch { slots })
}

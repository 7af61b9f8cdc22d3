//! Regression-aware training and fine-tuning.
//!
//! Each step draws K sequences, encodes N pairs per sequence and regresses
//! M held-out pairs through a per-sequence GP in latent space. The loss is
//! `KL + λΣ‖y − ŷ‖² + λΣ‖y_* − ŷ_*‖²`. With M = 0 the third term vanishes
//! and training reduces to a plain VAE.

mod batch;
mod loss;

pub use batch::{compose_finetune_batch, compose_minibatch, Batch, HeldOut, Pair, Slot, SlotOrigin};
pub use loss::{compute_loss, vae_loss, LossBreakdown, LossVars};

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AdamConfig, AdamState, AutodiffError, Tape};
use crate::data::SequencePair;
use crate::gp::{GpConfig, GpError};
use crate::model::{Model, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error("non-finite loss at step {step}")]
    NonFinite {
        step: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error("a regressed response reached the encoder")]
    HeldOutLeak,
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    fn is_non_finite(&self) -> bool {
        match self {
            TrainError::Autodiff(AutodiffError::NonFinite { .. })
            | TrainError::Model(ModelError::Autodiff(AutodiffError::NonFinite { .. }))
            | TrainError::Gp(GpError::Autodiff(AutodiffError::NonFinite { .. })) => true,
            TrainError::Model(ModelError::NonPositiveSigma) | TrainError::Gp(GpError::NonPositiveScale) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// K
    pub sequences_per_batch: usize,
    /// N
    pub encoded_per_sequence: usize,
    /// M; zero disables the regression term.
    pub regressed_per_sequence: usize,
    pub epochs: usize,
    /// Steps per epoch; `None` means enough steps to encode as many pairs
    /// as the training set holds, independent of M.
    pub steps_per_epoch: Option<usize>,
    pub finetune_iters: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Latent sampling scale for `z = m + scale·σ⊙ε`.
    pub scale: f64,
    pub gp: GpConfig,
    /// Keep the decoder fixed while fine-tuning.
    pub freeze_decoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sequences_per_batch: 4,
            encoded_per_sequence: 8,
            regressed_per_sequence: 4,
            epochs: 60,
            steps_per_epoch: None,
            finetune_iters: 50,
            seed: 0,
            adam: AdamConfig::default(),
            scale: 1.0,
            gp: GpConfig::default(),
            freeze_decoder: false,
        }
    }
}

impl TrainConfig {
    /// L = N + M.
    pub fn pairs_per_sequence(&self) -> usize {
        self.encoded_per_sequence + self.regressed_per_sequence
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.sequences_per_batch == 0 || self.encoded_per_sequence == 0 {
            return Err(TrainError::Invalid("K and N must be at least 1".into()));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(TrainError::Invalid(format!("scale {} must be non-negative", self.scale)));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(TrainError::Invalid("steps_per_epoch must be positive".into()));
        }
        self.gp.validate()?;
        Ok(())
    }

    pub fn steps_for(&self, train: &[SequencePair]) -> usize {
        let per_epoch = self.steps_per_epoch.unwrap_or_else(|| {
            let pairs: usize = train.iter().map(SequencePair::len).sum();
            let per_step = self.sequences_per_batch * self.encoded_per_sequence;
            pairs.div_ceil(per_step).max(1)
        });
        per_epoch * self.epochs
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: LossBreakdown,
}

pub fn write_loss_csv<W: Write>(records: &[LossRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "step,kl,recon,regression,total")?;
    for r in records {
        let l = &r.loss;
        writeln!(
            out,
            "{},{},{},{},{}",
            r.step, l.kl_term, l.recon_term, l.regression_term, l.total
        )?;
    }
    out.flush()
}

pub fn save_loss_csv(records: &[LossRecord], path: &Path) -> Result<(), TrainError> {
    let io = |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    write_loss_csv(records, std::io::BufWriter::new(file)).map_err(io)
}

/// Owns the optimizer across steps.
pub struct Trainer {
    adam: AdamState,
    freeze_decoder: bool,
}

impl Trainer {
    pub fn new(model: &Model, adam: AdamConfig, freeze_decoder: bool) -> Result<Self, TrainError> {
        let params = model.weights.params();
        let params = if freeze_decoder {
            &params[..model.weights.encoder_tensor_count()]
        } else {
            &params[..]
        };
        Ok(Trainer {
            adam: AdamState::new(params, adam)?,
            freeze_decoder,
        })
    }

    /// One forward/backward/update on `batch`.
    pub fn step(
        &mut self,
        model: &mut Model,
        batch: &Batch<'_>,
        cfg: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<LossBreakdown, TrainError> {
        let tape = Tape::new();
        let bound = if self.freeze_decoder {
            model.weights.bind_frozen_decoder(&tape)
        } else {
            model.weights.bind(&tape)
        };
        let loss = compute_loss(&tape, &model.config, &bound, batch, cfg, rng)?;
        let breakdown = loss.breakdown();
        let grads = tape.backward(loss.total)?;
        model.weights.accumulate_grads(&bound, &grads)?;
        let n_enc = model.weights.encoder_tensor_count();
        let mut params = model.weights.params_mut();
        if self.freeze_decoder {
            for p in &mut params[n_enc..] {
                p.zero_grad();
            }
            params.truncate(n_enc);
        }
        self.adam.step(&mut params)?;
        Ok(breakdown)
    }
}

fn at_step<T>(step: usize, r: Result<T, TrainError>) -> Result<T, TrainError> {
    r.map_err(|e| {
        if e.is_non_finite() {
            TrainError::NonFinite {
                step,
                source: Box::new(e),
            }
        } else {
            e
        }
    })
}

/// Trains on `train` for `cfg.steps_for(train)` steps and returns the loss log.
pub fn train(model: &mut Model, train: &[SequencePair], cfg: &TrainConfig) -> Result<Vec<LossRecord>, TrainError> {
    train_with(model, train, cfg, |_, _| Ok(()))
}

/// [`train`] with a callback after every step.
pub fn train_with<F>(
    model: &mut Model,
    train: &[SequencePair],
    cfg: &TrainConfig,
    mut on_step: F,
) -> Result<Vec<LossRecord>, TrainError>
where
    F: FnMut(&LossRecord, &Model) -> Result<(), TrainError>,
{
    cfg.validate()?;
    let steps = cfg.steps_for(train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trainer = Trainer::new(model, cfg.adam, false)?;
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = compose_minibatch(train, cfg, &mut rng)?;
        let loss = at_step(step, trainer.step(model, &batch, cfg, &mut rng))?;
        let record = LossRecord { step, loss };
        on_step(&record, model)?;
        log.push(record);
    }
    Ok(log)
}

/// Fine-tunes on the observed pairs of one test sequence, mixed with
/// training sequences, for `cfg.finetune_iters` steps.
pub fn finetune(
    model: &mut Model,
    observed: &SequencePair,
    train: &[SequencePair],
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>, TrainError> {
    finetune_with(model, observed, train, cfg, |_, _| Ok(()))
}

/// [`finetune`] with a callback invoked before the first step (iteration 0)
/// and after every step (iterations 1..=finetune_iters).
pub fn finetune_with<F>(
    model: &mut Model,
    observed: &SequencePair,
    train: &[SequencePair],
    cfg: &TrainConfig,
    mut on_iter: F,
) -> Result<Vec<LossRecord>, TrainError>
where
    F: FnMut(usize, &Model) -> Result<(), TrainError>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trainer = Trainer::new(model, cfg.adam, cfg.freeze_decoder)?;
    on_iter(0, model)?;
    let mut log = Vec::with_capacity(cfg.finetune_iters);
    for step in 0..cfg.finetune_iters {
        let batch = compose_finetune_batch(observed, train, cfg, &mut rng)?;
        let loss = at_step(step, trainer.step(model, &batch, cfg, &mut rng))?;
        log.push(LossRecord { step, loss });
        on_iter(step + 1, model)?;
    }
    Ok(log)
}

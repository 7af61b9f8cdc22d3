use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::batch::Batch;
use super::{TrainConfig, TrainError};
use crate::autodiff::{Tape, Var};
use crate::gp::{posterior_on_tape, sample_on_tape};
use crate::model::{decode, encode, latent_kl, recon_nll, sample_latent, BoundWeights, LatentGaussian, ModelConfig};

/// The three loss summands, as plain numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub kl_term: f64,
    pub recon_term: f64,
    pub regression_term: f64,
    pub total: f64,
}

/// The loss summands as tape variables; `regression` is `None` when the
/// batch has no regressed pairs.
pub struct LossVars<'t> {
    pub kl: Var<'t>,
    pub recon: Var<'t>,
    pub regression: Option<Var<'t>>,
    pub total: Var<'t>,
}

impl LossVars<'_> {
    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            kl_term: self.kl.item(),
            recon_term: self.recon.item(),
            regression_term: self.regression.map_or(0.0, |r| r.item()),
            total: self.total.item(),
        }
    }
}

fn noise<'t>(tape: &'t Tape, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Var<'t>, TrainError> {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Ok(tape.matrix(rows, cols, data)?)
}

fn stack<'t>(tape: &'t Tape, rows: &[&[f64]]) -> Result<Var<'t>, TrainError> {
    let cols = rows[0].len();
    Ok(tape.matrix(rows.len(), cols, rows.concat())?)
}

/// KL + reconstruction + regression over a batch, recorded on `tape`.
///
/// Noise is drawn in a fixed order: first one `N_total × D` block for the
/// encoded pairs, then one `M × D` block per slot with regressed pairs.
pub fn compute_loss<'t>(
    tape: &'t Tape,
    model: &ModelConfig,
    weights: &BoundWeights<'t>,
    batch: &Batch<'_>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossVars<'t>, TrainError> {
    for slot in &batch.slots {
        slot.check_held_out()?;
    }
    let n_enc = batch.encoded_count();
    if n_enc == 0 {
        return Err(TrainError::Invalid("batch has no encoded pairs".into()));
    }
    let d = model.latent_dim();
    let encoded: Vec<_> = batch.slots.iter().flat_map(|s| &s.encoded).collect();
    let y_enc = stack(tape, &encoded.iter().map(|p| p.y).collect::<Vec<_>>())?;
    let x_enc = stack(tape, &encoded.iter().map(|p| p.x).collect::<Vec<_>>())?;

    let enc = encode(model, weights, y_enc)?;
    let latent = LatentGaussian::from_encoder(&enc, x_enc)?;
    let kl = latent_kl(model, &latent)?;
    let z = sample_latent(latent.mean()?, latent.sigma()?, noise(tape, n_enc, d, rng)?, cfg.scale)?;

    let mut decode_rows = vec![z];
    let mut targets: Vec<&[f64]> = Vec::new();
    let mut offset = 0;
    for slot in &batch.slots {
        let n = slot.encoded.len();
        if !slot.regressed.is_empty() {
            let x_obs: Vec<&[f64]> = slot.encoded.iter().map(|p| p.x).collect();
            let x_query: Vec<&[f64]> = slot.regressed.iter().map(|h| h.x).collect();
            let post = posterior_on_tape(&x_obs, z.rows(offset, n)?, enc.sigma_k.rows(offset, n)?, &x_query, cfg.gp)?;
            let eps = noise(tape, x_query.len(), d, rng)?;
            decode_rows.push(sample_on_tape(&post, eps, cfg.scale)?);
            targets.extend(slot.regressed.iter().map(|h| h.target()));
        }
        offset += n;
    }

    let all_z = if decode_rows.len() == 1 { z } else { tape.concat(&decode_rows, 0)? };
    let y_hat = decode(model, weights, all_z)?;
    let recon = recon_nll(y_enc, y_hat.rows(0, n_enc)?, model.recon_weight)?;
    let regression = if targets.is_empty() {
        None
    } else {
        let y_reg = stack(tape, &targets)?;
        Some(recon_nll(y_reg, y_hat.rows(n_enc, targets.len())?, model.recon_weight)?)
    };
    let mut total = kl.add(recon)?;
    if let Some(r) = regression {
        total = total.add(r)?;
    }
    Ok(LossVars {
        kl,
        recon,
        regression,
        total,
    })
}

/// KL + reconstruction over the encoded pairs only, ignoring any regressed
/// pairs: the loss of a plain VAE on the same inputs and noise.
pub fn vae_loss<'t>(
    tape: &'t Tape,
    model: &ModelConfig,
    weights: &BoundWeights<'t>,
    batch: &Batch<'_>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossVars<'t>, TrainError> {
    let encoded: Vec<_> = batch.slots.iter().flat_map(|s| &s.encoded).collect();
    if encoded.is_empty() {
        return Err(TrainError::Invalid("batch has no encoded pairs".into()));
    }
    let y = stack(tape, &encoded.iter().map(|p| p.y).collect::<Vec<_>>())?;
    let x = stack(tape, &encoded.iter().map(|p| p.x).collect::<Vec<_>>())?;
    let enc = encode(model, weights, y)?;
    let latent = LatentGaussian::from_encoder(&enc, x)?;
    let kl = latent_kl(model, &latent)?;
    let eps = noise(tape, encoded.len(), model.latent_dim(), rng)?;
    let z = sample_latent(latent.mean()?, latent.sigma()?, eps, cfg.scale)?;
    let recon = recon_nll(y, decode(model, weights, z)?, model.recon_weight)?;
    Ok(LossVars {
        kl,
        recon,
        regression: None,
        total: kl.add(recon)?,
    })
}

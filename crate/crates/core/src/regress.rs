//! Regression with a trained model: encode the observed pairs, condition a
//! GP on their latent means, and decode the posterior at query points.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::data::SequencePair;
use crate::gp::{sample_posterior, GpConfig, GpError, GpModel, GpPosterior};
use crate::model::{Encoded, Model, ModelError};

#[derive(Debug, Error)]
pub enum RegressError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("no observed pairs to regress from")]
    Empty,
}

/// `n` evenly spaced scalar queries covering `[0, 1]`.
pub fn query_grid(n: usize) -> Vec<Vec<f64>> {
    match n {
        0 => Vec::new(),
        1 => vec![vec![0.0]],
        _ => (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect(),
    }
}

/// Encodes `observed` and conditions a GP on the latent means.
pub fn condition(model: &Model, observed: &SequencePair, gp: GpConfig) -> Result<(GpModel, Vec<Encoded>), RegressError> {
    if observed.is_empty() {
        return Err(RegressError::Empty);
    }
    let xs: Vec<&[f64]> = observed.x.iter().map(Vec::as_slice).collect();
    let ys: Vec<&[f64]> = observed.y.iter().map(Vec::as_slice).collect();
    let encoded = model.encode_pairs(&xs, &ys)?;
    let z: Vec<&[f64]> = encoded.iter().map(|e| e.mean.as_slice()).collect();
    let s: Vec<f64> = encoded.iter().map(|e| e.sigma_k).collect();
    Ok((GpModel::new(&observed.x, &z, &s, gp)?, encoded))
}

/// Latent noise for `count` queries, one standard-normal vector each,
/// drawn in query order from `seed`.
pub fn query_noise(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

#[derive(Debug, Clone)]
pub struct Regression {
    pub posteriors: Vec<GpPosterior>,
    pub latents: Vec<Vec<f64>>,
    pub images: Vec<Vec<f64>>,
}

/// Regresses images at `queries`; `z_* = m_* + scale·√σ_*·ε` with ε from
/// [`query_noise`].
pub fn regress(
    model: &Model,
    observed: &SequencePair,
    queries: &[Vec<f64>],
    gp: GpConfig,
    scale: f64,
    seed: u64,
) -> Result<Regression, RegressError> {
    let (gp_model, _) = condition(model, observed, gp)?;
    let posteriors = gp_model.posterior_batch(queries)?;
    let noise = query_noise(queries.len(), model.config.latent_dim(), seed);
    let latents = posteriors
        .iter()
        .zip(&noise)
        .map(|(p, e)| sample_posterior(p, e, scale))
        .collect::<Result<Vec<_>, _>>()?;
    let images = model.decode_latents(&latents)?;
    Ok(Regression {
        posteriors,
        latents,
        images,
    })
}

/// Keeps the pairs at `indices`.
pub fn subsequence(seq: &SequencePair, indices: &[usize]) -> SequencePair {
    SequencePair {
        id: seq.id.clone(),
        x: indices.iter().map(|&i| seq.x[i].clone()).collect(),
        y: indices.iter().map(|&i| seq.y[i].clone()).collect(),
    }
}

//! Comparison methods: per-pixel GP regression in image space and latent
//! nearest-neighbour lookup.

use super::EvalError;
use crate::data::SequencePair;
use crate::gp::{GpConfig, GpModel};
use crate::model::Model;

/// Lengthscales tried when fitting the pixel-space GP.
pub const MOGP_LENGTHSCALES: [f64; 9] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorMean {
    /// Pixelwise mean of the observed images.
    #[default]
    ObservedMean,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MogpConfig {
    pub lengthscales: Vec<f64>,
    pub jitter: f64,
    pub prior_mean: PriorMean,
}

impl Default for MogpConfig {
    fn default() -> Self {
        MogpConfig {
            lengthscales: MOGP_LENGTHSCALES.to_vec(),
            jitter: GpConfig::default().jitter,
            prior_mean: PriorMean::default(),
        }
    }
}

/// A fitted pixel-space GP: one GP per pixel sharing a kernel.
#[derive(Debug, Clone)]
pub struct Mogp {
    gp: GpModel,
    mean: Vec<f64>,
    lengthscale: f64,
}

impl Mogp {
    /// Fits the shared lengthscale by maximum marginal likelihood over
    /// `cfg.lengthscales`; ties go to the earlier entry.
    pub fn fit(observed: &SequencePair, cfg: &MogpConfig) -> Result<Mogp, EvalError> {
        if observed.len() < 2 {
            return Err(EvalError::Invalid("pixel GP needs at least two observed pairs".into()));
        }
        if observed.x.iter().all(|x| x == &observed.x[0]) {
            return Err(EvalError::Invalid("all observed domain points are identical".into()));
        }
        if cfg.lengthscales.is_empty() {
            return Err(EvalError::Invalid("empty lengthscale grid".into()));
        }
        let p = observed.y[0].len();
        let mean = match cfg.prior_mean {
            PriorMean::Zero => vec![0.0; p],
            PriorMean::ObservedMean => {
                let n = observed.len() as f64;
                (0..p).map(|j| observed.y.iter().map(|y| y[j]).sum::<f64>() / n).collect()
            }
        };
        let centered: Vec<Vec<f64>> = observed
            .y
            .iter()
            .map(|y| y.iter().zip(&mean).map(|(v, m)| v - m).collect())
            .collect();
        let scales = vec![1.0; observed.len()];
        let mut best: Option<(f64, GpModel, f64)> = None;
        for &l in &cfg.lengthscales {
            let gp_cfg = GpConfig {
                lengthscale: l,
                jitter: cfg.jitter,
            };
            let gp = GpModel::new(&observed.x, &centered, &scales, gp_cfg)?;
            let lml = gp.log_marginal_likelihood();
            if best.as_ref().is_none_or(|(b, _, _)| lml > *b) {
                best = Some((lml, gp, l));
            }
        }
        let (_, gp, lengthscale) = best.expect("non-empty grid");
        Ok(Mogp { gp, mean, lengthscale })
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Posterior-mean image at `x`, clamped to `[0, 1]`.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let post = self.gp.posterior(x)?;
        Ok(post
            .m_star
            .iter()
            .zip(&self.mean)
            .map(|(d, m)| (d + m).clamp(0.0, 1.0))
            .collect())
    }
}

/// Pixel-space GP predictions at every query.
pub fn mogp_baseline(observed: &SequencePair, queries: &[Vec<f64>], cfg: &MogpConfig) -> Result<Vec<Vec<f64>>, EvalError> {
    let fit = Mogp::fit(observed, cfg)?;
    queries.iter().map(|q| fit.predict(q)).collect()
}

/// Index of the observed point nearest to `query`; ties go to the lower index.
pub fn nearest(observed: &[Vec<f64>], query: &[f64]) -> Option<usize> {
    let dist = |x: &Vec<f64>| x.iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in observed.iter().enumerate() {
        let d = dist(x);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Decodes the latent mean of the observed pair nearest to each query.
pub fn nn_baseline(model: &Model, observed: &SequencePair, queries: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, EvalError> {
    if observed.is_empty() {
        return Err(EvalError::Invalid("nearest-neighbour baseline needs observed pairs".into()));
    }
    let xs: Vec<&[f64]> = observed.x.iter().map(Vec::as_slice).collect();
    let ys: Vec<&[f64]> = observed.y.iter().map(Vec::as_slice).collect();
    let encoded = model.encode_pairs(&xs, &ys)?;
    let recon = model.decode_latents(&encoded.into_iter().map(|e| e.mean).collect::<Vec<_>>())?;
    queries
        .iter()
        .map(|q| {
            if q.len() != observed.domain_dim() {
                return Err(EvalError::Dimension {
                    what: "query point",
                    expected: observed.domain_dim(),
                    got: q.len(),
                });
            }
            Ok(recon[nearest(&observed.x, q).expect("non-empty")].clone())
        })
        .collect()
}

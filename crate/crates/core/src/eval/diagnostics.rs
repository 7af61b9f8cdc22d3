//! Latent-sample perturbation sweeps and fine-tuning convergence measures.

use super::ssim::{ssim, SsimConfig};
use super::{median, EvalError};
use crate::data::{ImageDims, SequencePair};
use crate::gp::GpConfig;
use crate::model::Model;
use crate::regress::{condition, regress};

/// Scales of the perturbation sweep.
pub const SWEEP_SCALES: [f64; 3] = [0.5, 1.0, 1.5];

/// SSIM of regressed images against ground truth, one row per scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub scales: Vec<f64>,
    /// `ssim[s][q]` for scale `s` and query `q`.
    pub ssim: Vec<Vec<f64>>,
}

impl SweepTable {
    pub fn medians(&self) -> Vec<f64> {
        self.ssim.iter().map(|row| median(row)).collect()
    }
}

/// Regresses `truth.x` from `observed` at every scale with the same noise
/// (drawn from `seed`) and scores full-image SSIM against `truth.y`.
pub fn sigma_sweep(
    model: &Model,
    observed: &SequencePair,
    truth: &SequencePair,
    scales: &[f64],
    gp: GpConfig,
    dims: ImageDims,
    ssim_cfg: &SsimConfig,
    seed: u64,
) -> Result<SweepTable, EvalError> {
    let rows = scales
        .iter()
        .map(|&s| {
            let out = regress(model, observed, &truth.x, gp, s, seed)?;
            out.images
                .iter()
                .zip(&truth.y)
                .map(|(a, b)| ssim(a, b, dims, ssim_cfg))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepTable {
        scales: scales.to_vec(),
        ssim: rows,
    })
}

/// `KL(N(m_a, v_a·I) ‖ N(m_b, diag σ_b²))` for an isotropic variance `v_a`.
pub fn isotropic_to_diag_kl(m_a: &[f64], v_a: f64, m_b: &[f64], sigma_b: &[f64]) -> Result<f64, EvalError> {
    let d = m_a.len();
    for got in [m_b.len(), sigma_b.len()] {
        if got != d {
            return Err(EvalError::Dimension {
                what: "latent",
                expected: d,
                got,
            });
        }
    }
    if !(v_a > 0.0) || sigma_b.iter().any(|&s| !(s > 0.0)) {
        return Err(EvalError::Invalid("KL needs positive variances".into()));
    }
    let mut kl = 0.0;
    for i in 0..d {
        let vb = sigma_b[i] * sigma_b[i];
        let diff = m_b[i] - m_a[i];
        kl += v_a / vb + diff * diff / vb - 1.0 + (vb / v_a).ln();
    }
    Ok(0.5 * kl)
}

/// Both latent paths evaluated for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PathComparison {
    /// KL from the regression posterior to the encoder posterior.
    pub kl: f64,
    /// `‖y − D(m_*)‖²`
    pub regression_nll: f64,
    /// `‖y − D(m)‖²`
    pub reconstruction_nll: f64,
}

/// Compares the regression path (GP conditioned on `observed`, queried at
/// each `pairs.x`) against the reconstruction path (encoding `pairs`).
/// The GP variance is floored at the jitter that factorized the Gram matrix.
pub fn compare_paths(
    model: &Model,
    observed: &SequencePair,
    pairs: &SequencePair,
    gp: GpConfig,
) -> Result<Vec<PathComparison>, EvalError> {
    let (gp_model, _) = condition(model, observed, gp)?;
    let xs: Vec<&[f64]> = pairs.x.iter().map(Vec::as_slice).collect();
    let ys: Vec<&[f64]> = pairs.y.iter().map(Vec::as_slice).collect();
    let encoded = model.encode_pairs(&xs, &ys)?;
    let posteriors = gp_model.posterior_batch(&pairs.x)?;
    let mut latents: Vec<Vec<f64>> = posteriors.iter().map(|p| p.m_star.clone()).collect();
    latents.extend(encoded.iter().map(|e| e.mean.clone()));
    let decoded = model.decode_latents(&latents)?;
    let (reg, rec) = decoded.split_at(pairs.len());
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
    let floor = gp_model.jitter();
    (0..pairs.len())
        .map(|i| {
            let p = &posteriors[i];
            Ok(PathComparison {
                kl: isotropic_to_diag_kl(&p.m_star, p.sigma_star.max(floor), &encoded[i].mean, &encoded[i].sigma)?,
                regression_nll: sq(&pairs.y[i], &reg[i]),
                reconstruction_nll: sq(&pairs.y[i], &rec[i]),
            })
        })
        .collect()
}

/// Mean over pairs of regression NLL / reconstruction NLL, skipping pairs
/// with a zero denominator. `None` when every pair was skipped.
pub fn nll_ratio(paths: &[PathComparison]) -> Option<f64> {
    let ratios: Vec<f64> = paths
        .iter()
        .filter(|p| p.reconstruction_nll > 0.0)
        .map(|p| p.regression_nll / p.reconstruction_nll)
        .collect();
    (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Per-checkpoint summaries over fine-tuning iterations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceCurve {
    /// Median KL over pairs.
    pub kl: Vec<f64>,
    pub nll_ratio: Vec<f64>,
}

impl ConvergenceCurve {
    pub fn record(&mut self, paths: &[PathComparison]) -> Result<(), EvalError> {
        let ratio = nll_ratio(paths).ok_or(EvalError::Invalid("every reconstruction NLL was zero".into()))?;
        let kls: Vec<f64> = paths.iter().map(|p| p.kl).collect();
        self.kl.push(median(&kls));
        self.nll_ratio.push(ratio);
        Ok(())
    }
}

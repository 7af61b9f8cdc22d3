//! Gaussian-process regression in latent space.
//!
//! Kernel: `k(x_i, x_j) = √(s_i s_j)·exp(−‖x_i − x_j‖²/ℓ²)`, where the scales
//! `s` come from the encoder. A query point has no image to encode, so its
//! scale is the mean of the observed scales. The posterior variance is
//! isotropic over latent dimensions and is a variance, not a deviation.

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::linalg::{Cholesky, LinalgError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("a GP needs at least one observation")]
    Empty,
    #[error("kernel scales must be strictly positive")]
    NonPositiveScale,
    #[error("invalid GP setting: {0}")]
    Config(String),
    #[error(transparent)]
    Factorization(#[from] LinalgError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpConfig {
    pub lengthscale: f64,
    /// Initial diagonal jitter; doubled on factorization failure up to 1e-2.
    pub jitter: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            lengthscale: 1.0,
            jitter: 1e-6,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(GpError::Config(format!("lengthscale {} must be positive", self.lengthscale)));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(GpError::Config(format!("jitter {} must be non-negative", self.jitter)));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

pub fn kernel(x_i: &[f64], x_j: &[f64], s_i: f64, s_j: f64, lengthscale: f64) -> Result<f64, GpError> {
    if x_i.len() != x_j.len() {
        return Err(GpError::Dimension {
            what: "kernel inputs",
            expected: x_i.len(),
            got: x_j.len(),
        });
    }
    if !(s_i > 0.0 && s_j > 0.0) {
        return Err(GpError::NonPositiveScale);
    }
    Ok((s_i * s_j).sqrt() * (-sq_dist(x_i, x_j) / (lengthscale * lengthscale)).exp())
}

/// `exp(−‖a_i − b_j‖²/ℓ²)` as a row-major `|a| × |b|` matrix.
pub fn correlation<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B], lengthscale: f64) -> Vec<f64> {
    let l2 = lengthscale * lengthscale;
    let mut out = Vec::with_capacity(a.len() * b.len());
    for p in a {
        for q in b {
            out.push((-sq_dist(p.as_ref(), q.as_ref()) / l2).exp());
        }
    }
    out
}

fn check_points<A: AsRef<[f64]>>(points: &[A], dim: usize, what: &'static str) -> Result<(), GpError> {
    for p in points {
        if p.as_ref().len() != dim {
            return Err(GpError::Dimension {
                what,
                expected: dim,
                got: p.as_ref().len(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpPosterior {
    pub m_star: Vec<f64>,
    /// Posterior variance, clamped at zero.
    pub sigma_star: f64,
}

/// A GP conditioned on `N` observations, factorized once.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    sigma_k: Vec<f64>,
    latent_dim: usize,
    lengthscale: f64,
    factor: Cholesky,
    /// `(K + jitter·I)⁻¹ Z`, `N × D`.
    alpha: Vec<f64>,
    z: Vec<f64>,
}

impl GpModel {
    pub fn new<A: AsRef<[f64]>, Z: AsRef<[f64]>>(
        x: &[A],
        z: &[Z],
        sigma_k: &[f64],
        cfg: GpConfig,
    ) -> Result<Self, GpError> {
        cfg.validate()?;
        let n = x.len();
        if n == 0 {
            return Err(GpError::Empty);
        }
        for (what, got) in [("latent rows", z.len()), ("kernel scales", sigma_k.len())] {
            if got != n {
                return Err(GpError::Dimension { what, expected: n, got });
            }
        }
        if sigma_k.iter().any(|&s| !(s > 0.0)) {
            return Err(GpError::NonPositiveScale);
        }
        let nx = x[0].as_ref().len();
        let d = z[0].as_ref().len();
        check_points(x, nx, "domain point")?;
        check_points(z, d, "latent row")?;

        let mut k = correlation(x, x, cfg.lengthscale);
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] *= (sigma_k[i] * sigma_k[j]).sqrt();
            }
        }
        let factor = Cholesky::with_jitter(&k, n, cfg.jitter)?;
        let z: Vec<f64> = z.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        let alpha = factor.solve(&z, d);
        Ok(GpModel {
            x: x.iter().map(|p| p.as_ref().to_vec()).collect(),
            sigma_k: sigma_k.to_vec(),
            latent_dim: d,
            lengthscale: cfg.lengthscale,
            factor,
            alpha,
            z,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Jitter that made the Gram matrix factorizable.
    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    pub fn factor(&self) -> &Cholesky {
        &self.factor
    }

    /// Kernel scale used for query points.
    pub fn query_scale(&self) -> f64 {
        self.sigma_k.iter().sum::<f64>() / self.sigma_k.len() as f64
    }

    /// The Gram matrix `K` without jitter.
    pub fn gram(&self) -> Vec<f64> {
        let n = self.len();
        let mut k = correlation(&self.x, &self.x, self.lengthscale);
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] *= (self.sigma_k[i] * self.sigma_k[j]).sqrt();
            }
        }
        k
    }

    fn cross(&self, x_star: &[f64], s_star: f64) -> Result<Vec<f64>, GpError> {
        if x_star.len() != self.x[0].len() {
            return Err(GpError::Dimension {
                what: "query point",
                expected: self.x[0].len(),
                got: x_star.len(),
            });
        }
        if !(s_star > 0.0) {
            return Err(GpError::NonPositiveScale);
        }
        Ok(self
            .x
            .iter()
            .zip(&self.sigma_k)
            .map(|(x, &s)| {
                (s * s_star).sqrt() * (-sq_dist(x, x_star) / (self.lengthscale * self.lengthscale)).exp()
            })
            .collect())
    }

    /// Posterior at `x_star` with the default query scale.
    pub fn posterior(&self, x_star: &[f64]) -> Result<GpPosterior, GpError> {
        self.posterior_with_scale(x_star, self.query_scale())
    }

    /// Posterior at `x_star` with an explicit kernel scale for the query.
    pub fn posterior_with_scale(&self, x_star: &[f64], s_star: f64) -> Result<GpPosterior, GpError> {
        let k_star = self.cross(x_star, s_star)?;
        let d = self.latent_dim;
        let mut m_star = vec![0.0; d];
        for (i, &k) in k_star.iter().enumerate() {
            for (m, a) in m_star.iter_mut().zip(&self.alpha[i * d..(i + 1) * d]) {
                *m += k * a;
            }
        }
        let mut v = k_star;
        self.factor.forward_subst(&mut v, 1);
        let explained: f64 = v.iter().map(|x| x * x).sum();
        Ok(GpPosterior {
            m_star,
            sigma_star: (s_star - explained).max(0.0),
        })
    }

    pub fn posterior_batch<A: AsRef<[f64]>>(&self, x_star: &[A]) -> Result<Vec<GpPosterior>, GpError> {
        x_star.iter().map(|x| self.posterior(x.as_ref())).collect()
    }

    /// Sum over latent columns of the log marginal likelihood of `Z`
    /// under the jittered Gram matrix.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len() as f64;
        let d = self.latent_dim as f64;
        let fit: f64 = self.z.iter().zip(&self.alpha).map(|(z, a)| z * a).sum();
        -0.5 * fit - 0.5 * d * self.factor.log_det() - 0.5 * n * d * (2.0 * std::f64::consts::PI).ln()
    }
}

/// `z_* = m_* + scale·√σ_*·ε`.
pub fn sample_posterior(p: &GpPosterior, noise: &[f64], scale: f64) -> Result<Vec<f64>, GpError> {
    if noise.len() != p.m_star.len() {
        return Err(GpError::Dimension {
            what: "posterior noise",
            expected: p.m_star.len(),
            got: noise.len(),
        });
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(GpError::Config(format!("sampling scale {scale} must be non-negative")));
    }
    let sd = p.sigma_star.max(0.0).sqrt();
    Ok(p.m_star.iter().zip(noise).map(|(m, e)| m + scale * sd * e).collect())
}

/// Posterior over `M` query points, recorded on a tape.
#[derive(Clone, Copy)]
pub struct TapePosterior<'t> {
    /// `M × D`
    pub mean: Var<'t>,
    /// `M × 1`, clamped at zero.
    pub variance: Var<'t>,
}

/// Differentiable posterior: gradients reach `z` (`N × D`) and `sigma_k`
/// (`N × 1`). Domain points are constants.
pub fn posterior_on_tape<'t, A: AsRef<[f64]>, B: AsRef<[f64]>>(
    x_obs: &[A],
    z: Var<'t>,
    sigma_k: Var<'t>,
    x_query: &[B],
    cfg: GpConfig,
) -> Result<TapePosterior<'t>, GpError> {
    cfg.validate()?;
    let n = x_obs.len();
    let m = x_query.len();
    if n == 0 {
        return Err(GpError::Empty);
    }
    if m == 0 {
        return Err(GpError::Config("no query points".into()));
    }
    let nx = x_obs[0].as_ref().len();
    check_points(x_obs, nx, "domain point")?;
    check_points(x_query, nx, "query point")?;
    let (zn, _) = z.dims();
    let (sn, sc) = sigma_k.dims();
    if zn != n {
        return Err(GpError::Dimension {
            what: "latent rows",
            expected: n,
            got: zn,
        });
    }
    if sn != n || sc != 1 {
        return Err(GpError::Dimension {
            what: "kernel scales",
            expected: n,
            got: sn * sc,
        });
    }
    if sigma_k.with_value(|v| v.iter().any(|&s| s <= 0.0)) {
        return Err(GpError::NonPositiveScale);
    }

    let tape: &Tape = z.tape();
    let corr = tape.constant(Tensor::matrix(n, n, correlation(x_obs, x_obs, cfg.lengthscale))?);
    let corr_star = tape.constant(Tensor::matrix(m, n, correlation(x_query, x_obs, cfg.lengthscale))?);

    let root = sigma_k.sqrt()?;
    let k = root.matmul(root.transpose()?)?.mul(corr)?;
    let s_star = sigma_k.mean()?;
    let root_star = s_star.sqrt()?.broadcast_to(&[m, 1])?;
    let k_star = root_star.matmul(root.transpose()?)?.mul(corr_star)?;

    let alpha = tape.spd_solve(k, z, cfg.jitter)?;
    let mean = k_star.matmul(alpha)?;
    let v = tape.spd_solve(k, k_star.transpose()?, cfg.jitter)?;
    let explained = k_star.mul(v.transpose()?)?.sum_axis(1)?;
    let variance = s_star.broadcast_to(&[m, 1])?.sub(explained)?.relu()?;
    Ok(TapePosterior { mean, variance })
}

/// `z_* = m_* + scale·√σ_*·ε` on the tape; `noise` is `M × D`.
pub fn sample_on_tape<'t>(p: &TapePosterior<'t>, noise: Var<'t>, scale: f64) -> Result<Var<'t>, GpError> {
    if noise.shape() != p.mean.shape() {
        let (_, expected) = p.mean.dims();
        let (_, got) = noise.dims();
        return Err(GpError::Dimension {
            what: "posterior noise",
            expected,
            got,
        });
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(GpError::Config(format!("sampling scale {scale} must be non-negative")));
    }
    if scale == 0.0 {
        return Ok(p.mean);
    }
    let (_, d) = p.mean.dims();
    let (rows, _) = p.mean.dims();
    let sd = p.variance.sqrt()?.broadcast_to(&[rows, d])?;
    Ok(p.mean.add(sd.mul(noise)?.scale(scale)?)?)
}

//! Encoder, domain map, decoder and the diagonal-Gaussian latent machinery.
//!
//! The latent code is `z = [z_y, z_x]`: `z_y` summarises the image, `z_x`
//! has mean equal to the domain point `x` itself. A single encoder head
//! emits `[m_y, σ_y, σ_x, σ_k]`; every σ comes out of a softplus. σ values
//! are standard deviations.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Gradients, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{what}: expected {expected} columns, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("standard deviations must be strictly positive")]
    NonPositiveSigma,
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    /// n(X), the dimension of the regression domain.
    pub domain_dim: usize,
    pub latent_y_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// λ in `λ·Σ(y − ŷ)²`; the inverse of the fixed decoder variance.
    pub recon_weight: f64,
    /// Restrict the prior KL to the image part of the latent.
    pub kl_y_only: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_height: 32,
            image_width: 32,
            channels: 1,
            domain_dim: 1,
            latent_y_dim: 16,
            encoder_hidden: vec![512, 256],
            decoder_hidden: vec![256, 512],
            recon_weight: 1.0,
            kl_y_only: false,
        }
    }
}

impl ModelConfig {
    pub fn pixels(&self) -> usize {
        self.image_height * self.image_width * self.channels
    }

    /// D = latent_y_dim + domain_dim.
    pub fn latent_dim(&self) -> usize {
        self.latent_y_dim + self.domain_dim
    }

    /// Width of the shared encoder head: `[m_y, σ_y, σ_x, σ_k]`.
    pub fn head_dim(&self) -> usize {
        2 * self.latent_y_dim + self.domain_dim + 1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            self.image_height,
            self.image_width,
            self.channels,
            self.domain_dim,
            self.latent_y_dim,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(ModelError::Config("all dimensions must be positive".into()));
        }
        if self.encoder_hidden.iter().chain(&self.decoder_hidden).any(|&w| w == 0) {
            return Err(ModelError::Config("hidden widths must be positive".into()));
        }
        if !(self.recon_weight > 0.0 && self.recon_weight.is_finite()) {
            return Err(ModelError::Config("recon_weight must be positive".into()));
        }
        Ok(())
    }
}

/// Fully connected layer, `y = x W + b` with `W: in × out`, `b: 1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, bound: f64) -> Dense {
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        Dense {
            weight: Tensor::matrix(fan_in, fan_out, w).expect("finite init").into_parameter(),
            bias: Tensor::zeros(vec![1, fan_out]).into_parameter(),
        }
    }

    fn he(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Dense {
        Dense::init(rng, fan_in, fan_out, (6.0 / fan_in as f64).sqrt())
    }

    fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Dense {
        Dense::init(rng, fan_in, fan_out, (6.0 / (fan_in + fan_out) as f64).sqrt())
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// All trainable tensors. The encoder layers plus `head` form W_E; the σ_x
/// columns of `head` play the role of W_x; `decoder` plus `output` form W_D.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub encoder: Vec<Dense>,
    pub head: Dense,
    pub decoder: Vec<Dense>,
    pub output: Dense,
}

impl ModelWeights {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Vec::new();
        let mut width = cfg.pixels();
        for &h in &cfg.encoder_hidden {
            encoder.push(Dense::he(&mut rng, width, h));
            width = h;
        }
        let head = Dense::xavier(&mut rng, width, cfg.head_dim());
        let mut decoder = Vec::new();
        width = cfg.latent_dim();
        for &h in &cfg.decoder_hidden {
            decoder.push(Dense::he(&mut rng, width, h));
            width = h;
        }
        let output = Dense::xavier(&mut rng, width, cfg.pixels());
        Ok(ModelWeights {
            encoder,
            head,
            decoder,
            output,
        })
    }

    fn layers(&self) -> impl Iterator<Item = (String, &Dense)> {
        let enc = self.encoder.iter().enumerate().map(|(i, d)| (format!("enc.{i}"), d));
        let dec = self.decoder.iter().enumerate().map(|(i, d)| (format!("dec.{i}"), d));
        enc.chain(std::iter::once(("enc.head".to_string(), &self.head)))
            .chain(dec)
            .chain(std::iter::once(("dec.out".to_string(), &self.output)))
    }

    /// Parameters in a fixed order (encoder, head, decoder, output; weight before bias).
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.layers()
            .flat_map(|(name, d)| [(format!("{name}.weight"), &d.weight), (format!("{name}.bias"), &d.bias)])
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for d in self.encoder.iter_mut().chain(std::iter::once(&mut self.head)) {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        for d in self.decoder.iter_mut().chain(std::iter::once(&mut self.output)) {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    /// Number of tensors belonging to the encoder side (W_E and W_x).
    pub fn encoder_tensor_count(&self) -> usize {
        2 * (self.encoder.len() + 1)
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundWeights<'t> {
        self.bind_with(tape, true)
    }

    /// Binds the decoder as constants, so it receives no gradient.
    pub fn bind_frozen_decoder<'t>(&self, tape: &'t Tape) -> BoundWeights<'t> {
        self.bind_with(tape, false)
    }

    fn bind_with<'t>(&self, tape: &'t Tape, decoder_grad: bool) -> BoundWeights<'t> {
        let bind = |d: &Dense, grad: bool| {
            if grad {
                (tape.leaf(&d.weight), tape.leaf(&d.bias))
            } else {
                (tape.constant(strip(&d.weight)), tape.constant(strip(&d.bias)))
            }
        };
        BoundWeights {
            encoder: self.encoder.iter().map(|d| bind(d, true)).collect(),
            head: bind(&self.head, true),
            decoder: self.decoder.iter().map(|d| bind(d, decoder_grad)).collect(),
            output: bind(&self.output, decoder_grad),
        }
    }

    /// Arranges `vars` (in [`ModelWeights::params`] order) into this
    /// architecture, checking shapes.
    pub fn bind_vars<'t>(&self, vars: &[Var<'t>]) -> Result<BoundWeights<'t>, ModelError> {
        let params = self.params();
        if vars.len() != params.len() {
            return Err(ModelError::Config(format!("expected {} tensors, got {}", params.len(), vars.len())));
        }
        if params.iter().zip(vars).any(|(p, v)| p.shape() != v.shape()) {
            return Err(ModelError::Config("tensor shapes do not match the architecture".into()));
        }
        let pairs: Vec<(Var<'t>, Var<'t>)> = vars.chunks(2).map(|c| (c[0], c[1])).collect();
        let ne = self.encoder.len();
        let nd = self.decoder.len();
        Ok(BoundWeights {
            encoder: pairs[..ne].to_vec(),
            head: pairs[ne],
            decoder: pairs[ne + 1..ne + 1 + nd].to_vec(),
            output: pairs[ne + 1 + nd],
        })
    }

    /// Adds the gradients of `bound` into the tensors' gradient slots.
    /// Parameters that did not receive a gradient get zeros.
    pub fn accumulate_grads(&mut self, bound: &BoundWeights<'_>, grads: &Gradients) -> Result<(), ModelError> {
        let vars = bound.vars();
        for (t, v) in self.params_mut().into_iter().zip(vars) {
            match grads.wrt(v) {
                Some(g) => t.accumulate_grad(g)?,
                None => t.accumulate_grad(&vec![0.0; t.numel()])?,
            }
        }
        Ok(())
    }

    /// Reads the architecture back out of the tensor shapes.
    pub fn infer_config(&self, image_dims: (usize, usize, usize)) -> Result<ModelConfig, ModelError> {
        let (h, w, c) = image_dims;
        let dec_in = self.decoder.first().unwrap_or(&self.output).fan_in();
        let head_out = self.head.fan_out();
        if head_out < dec_in + 2 {
            return Err(ModelError::Config("inconsistent head and decoder widths".into()));
        }
        let latent_y_dim = head_out - 1 - dec_in;
        if latent_y_dim == 0 || latent_y_dim >= dec_in {
            return Err(ModelError::Config("inconsistent latent widths".into()));
        }
        Ok(ModelConfig {
            image_height: h,
            image_width: w,
            channels: c,
            domain_dim: dec_in - latent_y_dim,
            latent_y_dim,
            encoder_hidden: self.encoder.iter().map(Dense::fan_out).collect(),
            decoder_hidden: self.decoder.iter().map(Dense::fan_out).collect(),
            ..ModelConfig::default()
        })
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let expected = ModelWeights::init(cfg, 0)?;
        let ok = expected.named_tensors().len() == self.named_tensors().len()
            && expected
                .named_tensors()
                .iter()
                .zip(self.named_tensors())
                .all(|((n1, t1), (n2, t2))| *n1 == n2 && t1.shape() == t2.shape());
        if ok {
            Ok(())
        } else {
            Err(ModelError::Config("weights do not match the configuration".into()))
        }
    }
}

fn strip(t: &Tensor) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("parameters are finite")
}

/// Model parameters recorded on a tape.
pub struct BoundWeights<'t> {
    encoder: Vec<(Var<'t>, Var<'t>)>,
    head: (Var<'t>, Var<'t>),
    decoder: Vec<(Var<'t>, Var<'t>)>,
    output: (Var<'t>, Var<'t>),
}

impl<'t> BoundWeights<'t> {
    /// Same order as [`ModelWeights::params_mut`].
    pub fn vars(&self) -> Vec<Var<'t>> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.head))
            .chain(&self.decoder)
            .chain(std::iter::once(&self.output))
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }

    pub fn encoder_vars(&self) -> Vec<Var<'t>> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }
}

fn dense<'t>(x: Var<'t>, (w, b): (Var<'t>, Var<'t>)) -> Result<Var<'t>, AutodiffError> {
    let y = x.matmul(w)?;
    let shape = y.shape();
    y.add(b.broadcast_to(&shape)?)
}

/// Raw outputs of the encoder for a batch of images (one row per image).
pub struct EncoderOutput<'t> {
    pub m_y: Var<'t>,
    pub sigma_y: Var<'t>,
    /// Pre-softplus σ_x, consumed by [`domain_embed`].
    pub sigma_x_raw: Var<'t>,
    pub sigma_k: Var<'t>,
}

/// E(y; W_E) → `[m_y, σ_y, σ_x(raw), σ_k]` for a `B × pixels` batch.
pub fn encode<'t>(cfg: &ModelConfig, w: &BoundWeights<'t>, y: Var<'t>) -> Result<EncoderOutput<'t>, ModelError> {
    let (_, cols) = y.dims();
    if cols != cfg.pixels() {
        return Err(ModelError::Dimension {
            what: "encoder input",
            expected: cfg.pixels(),
            got: cols,
        });
    }
    let mut h = y;
    for &layer in &w.encoder {
        h = dense(h, layer)?.relu()?;
    }
    let out = dense(h, w.head)?;
    let dy = cfg.latent_y_dim;
    let dx = cfg.domain_dim;
    Ok(EncoderOutput {
        m_y: out.cols(0, dy)?,
        sigma_y: out.cols(dy, dy)?.softplus()?,
        sigma_x_raw: out.cols(2 * dy, dx)?,
        sigma_k: out.cols(2 * dy + dx, 1)?.softplus()?,
    })
}

/// f(x; W_x): the mean is `x` itself, the spread is `softplus(σ_x raw)`.
pub fn domain_embed<'t>(x: Var<'t>, sigma_x_raw: Var<'t>) -> Result<(Var<'t>, Var<'t>), ModelError> {
    if x.shape() != sigma_x_raw.shape() {
        let (_, got) = x.dims();
        let (_, expected) = sigma_x_raw.dims();
        return Err(ModelError::Dimension {
            what: "domain point",
            expected,
            got,
        });
    }
    Ok((x, sigma_x_raw.softplus()?))
}

/// Diagonal Gaussian over `[z_y, z_x]`, one row per pair.
#[derive(Clone, Copy)]
pub struct LatentGaussian<'t> {
    pub m_y: Var<'t>,
    pub sigma_y: Var<'t>,
    pub m_x: Var<'t>,
    pub sigma_x: Var<'t>,
}

impl<'t> LatentGaussian<'t> {
    pub fn from_encoder(enc: &EncoderOutput<'t>, x: Var<'t>) -> Result<Self, ModelError> {
        let (m_x, sigma_x) = domain_embed(x, enc.sigma_x_raw)?;
        Ok(LatentGaussian {
            m_y: enc.m_y,
            sigma_y: enc.sigma_y,
            m_x,
            sigma_x,
        })
    }

    pub fn mean(&self) -> Result<Var<'t>, AutodiffError> {
        self.m_y.tape().concat(&[self.m_y, self.m_x], 1)
    }

    pub fn sigma(&self) -> Result<Var<'t>, AutodiffError> {
        self.m_y.tape().concat(&[self.sigma_y, self.sigma_x], 1)
    }
}

/// Reparameterized draw `z = m + scale·σ⊙ε`.
pub fn sample_latent<'t>(mean: Var<'t>, sigma: Var<'t>, noise: Var<'t>, scale: f64) -> Result<Var<'t>, ModelError> {
    if scale < 0.0 || !scale.is_finite() {
        return Err(ModelError::Config(format!("sampling scale {scale} must be non-negative")));
    }
    if noise.shape() != mean.shape() {
        let (_, expected) = mean.dims();
        let (_, got) = noise.dims();
        return Err(ModelError::Dimension {
            what: "latent noise",
            expected,
            got,
        });
    }
    if scale == 0.0 {
        return Ok(mean);
    }
    Ok(mean.add(sigma.mul(noise)?.scale(scale)?)?)
}

/// D(z; W_D) → pixel intensities in (0, 1).
pub fn decode<'t>(cfg: &ModelConfig, w: &BoundWeights<'t>, z: Var<'t>) -> Result<Var<'t>, ModelError> {
    let (_, cols) = z.dims();
    if cols != cfg.latent_dim() {
        return Err(ModelError::Dimension {
            what: "latent code",
            expected: cfg.latent_dim(),
            got: cols,
        });
    }
    let mut h = z;
    for &layer in &w.decoder {
        h = dense(h, layer)?.relu()?;
    }
    Ok(dense(h, w.output)?.sigmoid()?)
}

/// `½ Σ (m² + σ² − 1 − ln σ²)`, summed over every row and column.
pub fn kl_to_prior<'t>(mean: Var<'t>, sigma: Var<'t>) -> Result<Var<'t>, ModelError> {
    if sigma.with_value(|v| v.iter().any(|&s| s <= 0.0)) {
        return Err(ModelError::NonPositiveSigma);
    }
    let var = sigma.square()?;
    let terms = mean.square()?.add(var)?.sub(var.ln()?)?.affine(1.0, -1.0)?;
    Ok(terms.sum()?.scale(0.5)?)
}

/// Prior KL of a latent Gaussian, over the full latent or the image part only.
pub fn latent_kl<'t>(cfg: &ModelConfig, g: &LatentGaussian<'t>) -> Result<Var<'t>, ModelError> {
    if cfg.kl_y_only {
        kl_to_prior(g.m_y, g.sigma_y)
    } else {
        kl_to_prior(g.mean()?, g.sigma()?)
    }
}

/// `λ·Σ(y − ŷ)²`.
pub fn recon_nll<'t>(y: Var<'t>, y_hat: Var<'t>, weight: f64) -> Result<Var<'t>, ModelError> {
    Ok(y.sub(y_hat)?.square()?.sum()?.scale(weight)?)
}

/// Architecture plus weights; the unit that checkpoints store.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub weights: ModelWeights,
}

/// Per-image encoder statistics, off the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    /// `[m_y, x]`
    pub mean: Vec<f64>,
    /// `[σ_y, σ_x]`
    pub sigma: Vec<f64>,
    pub sigma_k: f64,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let weights = ModelWeights::init(&config, seed)?;
        Ok(Model { config, weights })
    }

    /// Encodes `(x, y)` pairs without recording gradients.
    pub fn encode_pairs(&self, xs: &[&[f64]], ys: &[&[f64]]) -> Result<Vec<Encoded>, ModelError> {
        let cfg = &self.config;
        let n = ys.len();
        if xs.len() != n || n == 0 {
            return Err(ModelError::Config(format!("{} domain points for {} images", xs.len(), n)));
        }
        let tape = Tape::new();
        let w = self.weights.bind_frozen_decoder(&tape);
        let y = tape.matrix(n, cfg.pixels(), flatten(ys, cfg.pixels(), "image")?)?;
        let x = tape.matrix(n, cfg.domain_dim, flatten(xs, cfg.domain_dim, "domain point")?)?;
        let enc = encode(cfg, &w, y)?;
        let g = LatentGaussian::from_encoder(&enc, x)?;
        let mean = g.mean()?.value();
        let sigma = g.sigma()?.value();
        let sk = enc.sigma_k.value();
        let d = cfg.latent_dim();
        Ok((0..n)
            .map(|i| Encoded {
                mean: mean[i * d..(i + 1) * d].to_vec(),
                sigma: sigma[i * d..(i + 1) * d].to_vec(),
                sigma_k: sk[i],
            })
            .collect())
    }

    /// Decodes latent codes without recording gradients.
    pub fn decode_latents(&self, zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        let cfg = &self.config;
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&[f64]> = zs.iter().map(Vec::as_slice).collect();
        let tape = Tape::new();
        let w = self.weights.bind_frozen_decoder(&tape);
        let z = tape.matrix(zs.len(), cfg.latent_dim(), flatten(&refs, cfg.latent_dim(), "latent code")?)?;
        let y = decode(cfg, &w, z)?.value();
        Ok(y.chunks(cfg.pixels()).map(<[f64]>::to_vec).collect())
    }
}

pub(crate) fn flatten(rows: &[&[f64]], width: usize, what: &'static str) -> Result<Vec<f64>, ModelError> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(ModelError::Dimension {
                what,
                expected: width,
                got: r.len(),
            });
        }
        out.extend_from_slice(r);
    }
    Ok(out)
}

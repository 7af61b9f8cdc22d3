//! Flat `key = value` run configuration shared by the command-line tools.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! known; later assignments override earlier ones.

use std::path::Path;

use thiserror::Error;

use crate::data::SplitStrategy;
use crate::eval::{BenchmarkConfig, MogpConfig, PriorMean, SsimConfig};
use crate::gp::GpConfig;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Environment variable consulted when no seed is configured.
pub const SEED_ENV: &str = "VAREGRESS_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value {value:?} for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `None` falls back to [`SEED_ENV`], then 0.
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ssim: SsimConfig,
    pub mogp: MogpConfig,
    pub observed: usize,
    pub split: SplitStrategy,
    pub queries: usize,
    pub threads: usize,
    pub sweep_scales: Vec<f64>,
    pub sweep_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bench = BenchmarkConfig::default();
        RunConfig {
            seed: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ssim: SsimConfig::default(),
            mogp: MogpConfig::default(),
            observed: bench.observed,
            split: bench.split,
            queries: 100,
            threads: 1,
            sweep_scales: bench.sweep_scales,
            sweep_seeds: bench.sweep_seeds,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.into(),
            value: value.into(),
            reason: "expected true or false".into(),
        }),
    }
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "latent_y_dim",
        "encoder_hidden",
        "decoder_hidden",
        "recon_weight",
        "kl_y_only",
        "sequences_per_batch",
        "encoded_per_sequence",
        "regressed_per_sequence",
        "epochs",
        "steps_per_epoch",
        "finetune_iters",
        "learning_rate",
        "beta1",
        "beta2",
        "epsilon",
        "scale",
        "lengthscale",
        "jitter",
        "freeze_decoder",
        "ssim_window",
        "ssim_k1",
        "ssim_k2",
        "mask_coverage",
        "mogp_lengthscales",
        "mogp_prior_mean",
        "observed",
        "split",
        "queries",
        "threads",
        "sweep_scales",
        "sweep_seeds",
    ];

    /// Applies one assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "seed" => self.seed = Some(parse(key, v)?),
            "latent_y_dim" => self.model.latent_y_dim = parse(key, v)?,
            "encoder_hidden" => self.model.encoder_hidden = parse_list(key, v)?,
            "decoder_hidden" => self.model.decoder_hidden = parse_list(key, v)?,
            "recon_weight" => self.model.recon_weight = parse(key, v)?,
            "kl_y_only" => self.model.kl_y_only = parse_bool(key, v)?,
            "sequences_per_batch" => t.sequences_per_batch = parse(key, v)?,
            "encoded_per_sequence" => t.encoded_per_sequence = parse(key, v)?,
            "regressed_per_sequence" => t.regressed_per_sequence = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "steps_per_epoch" => {
                t.steps_per_epoch = if v == "auto" { None } else { Some(parse(key, v)?) };
            }
            "finetune_iters" => t.finetune_iters = parse(key, v)?,
            "learning_rate" => t.adam.learning_rate = parse(key, v)?,
            "beta1" => t.adam.beta1 = parse(key, v)?,
            "beta2" => t.adam.beta2 = parse(key, v)?,
            "epsilon" => t.adam.epsilon = parse(key, v)?,
            "scale" => t.scale = parse(key, v)?,
            "lengthscale" => t.gp.lengthscale = parse(key, v)?,
            "jitter" => {
                t.gp.jitter = parse(key, v)?;
                self.mogp.jitter = t.gp.jitter;
            }
            "freeze_decoder" => t.freeze_decoder = parse_bool(key, v)?,
            "ssim_window" => self.ssim.window = parse(key, v)?,
            "ssim_k1" => self.ssim.k1 = parse(key, v)?,
            "ssim_k2" => self.ssim.k2 = parse(key, v)?,
            "mask_coverage" => self.ssim.mask_coverage = parse(key, v)?,
            "mogp_lengthscales" => self.mogp.lengthscales = parse_list(key, v)?,
            "mogp_prior_mean" => {
                self.mogp.prior_mean = match v {
                    "mean" => PriorMean::ObservedMean,
                    "zero" => PriorMean::Zero,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            value: v.into(),
                            reason: "expected mean or zero".into(),
                        })
                    }
                }
            }
            "observed" => self.observed = parse(key, v)?,
            "split" => self.split = parse(key, v)?,
            "queries" => self.queries = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "sweep_scales" => self.sweep_scales = parse_list(key, v)?,
            "sweep_seeds" => self.sweep_seeds = parse_list(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Applies every assignment in `text`.
    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.into(),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_str(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: assignment.into(),
        })?;
        self.set(k.trim(), v)
    }

    /// The configured seed, else [`SEED_ENV`], else 0.
    pub fn resolved_seed(&self) -> Result<u64, ConfigError> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => parse(SEED_ENV, v.trim()),
            Err(_) => Ok(0),
        }
    }

    pub fn gp(&self) -> GpConfig {
        self.train.gp
    }

    pub fn benchmark(&self, seed: u64) -> BenchmarkConfig {
        BenchmarkConfig {
            observed: self.observed,
            split: self.split,
            split_seed: seed,
            finetune: TrainConfig {
                seed,
                ..self.train.clone()
            },
            gp: self.train.gp,
            ssim: self.ssim,
            mogp: self.mogp.clone(),
            sweep_scales: self.sweep_scales.clone(),
            sweep_seeds: self.sweep_seeds.clone(),
            threads: self.threads.max(1),
            ..BenchmarkConfig::default()
        }
    }
}

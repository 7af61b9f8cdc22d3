//! Variational autoencoded regression: Gaussian-process regression of
//! image-valued responses carried out in the latent space of a VAE whose
//! encoder and decoder are trained so that regressed latents decode to the
//! right images.

pub mod autodiff;
pub mod data;
pub mod config;
pub mod eval;
pub mod gp;
pub mod linalg;
pub mod model;
pub mod regress;
pub mod training;

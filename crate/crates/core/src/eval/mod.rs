//! Scoring, comparison methods, convergence diagnostics and reports.

mod baselines;
mod diagnostics;
mod images;
mod moments;
mod report;
mod ssim;

pub use baselines::{mogp_baseline, nearest, nn_baseline, Mogp, MogpConfig, PriorMean, MOGP_LENGTHSCALES};
pub use diagnostics::{
    compare_paths, isotropic_to_diag_kl, nll_ratio, sigma_sweep, ConvergenceCurve, PathComparison, SweepTable,
    SWEEP_SCALES,
};
pub use moments::{read_arm, wrap_angle, ArmReading};
pub use images::{encode_png, image_grid, save_png};
pub use report::{
    run_benchmark, write_report, BenchmarkConfig, EvalReport, Method, MethodScore, SequenceReport, SweepRecord,
};
pub use ssim::{masked_ssim, ssim, SsimConfig};

use thiserror::Error;

use crate::data::DataError;
use crate::gp::GpError;
use crate::model::ModelError;
use crate::regress::RegressError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{what} has size {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("no window reaches the mask coverage threshold")]
    EmptyMask,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Median of `values`, averaging the middle pair for even lengths; NaN
/// for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

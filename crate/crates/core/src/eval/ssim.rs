//! Windowed structural similarity.

use super::EvalError;
use crate::data::ImageDims;

/// Sliding-window SSIM settings. Window statistics are population moments
/// (divide by the window area).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    /// Minimum fraction of foreground pixels for a window to count in
    /// [`masked_ssim`].
    pub mask_coverage: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 8,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            mask_coverage: 0.5,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self, dims: ImageDims) -> Result<(), EvalError> {
        if self.window == 0 || self.window > dims.height || self.window > dims.width {
            return Err(EvalError::Invalid(format!(
                "window {} does not fit a {}×{} image",
                self.window, dims.height, dims.width
            )));
        }
        if !(self.c1() > 0.0 && self.c2() > 0.0) {
            return Err(EvalError::Invalid("SSIM stabilizers must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_coverage) {
            return Err(EvalError::Invalid(format!("mask coverage {} outside [0, 1]", self.mask_coverage)));
        }
        Ok(())
    }
}

fn check(a: &[f64], b: &[f64], dims: ImageDims, cfg: &SsimConfig) -> Result<(), EvalError> {
    cfg.validate(dims)?;
    for got in [a.len(), b.len()] {
        if got != dims.pixels() {
            return Err(EvalError::Dimension {
                what: "image",
                expected: dims.pixels(),
                got,
            });
        }
    }
    Ok(())
}

/// SSIM of the window with top-left corner `(r, c)` in channel `ch`.
fn window_ssim(a: &[f64], b: &[f64], dims: ImageDims, cfg: &SsimConfig, r: usize, c: usize, ch: usize) -> f64 {
    let w = cfg.window;
    let n = (w * w) as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in r..r + w {
        for j in c..c + w {
            let k = (i * dims.width + j) * dims.channels + ch;
            let (x, y) = (a[k], b[k]);
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let va = (saa / n - ma * ma).max(0.0);
    let vb = (sbb / n - mb * mb).max(0.0);
    let cov = sab / n - ma * mb;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

fn mean_over_windows(
    a: &[f64],
    b: &[f64],
    dims: ImageDims,
    cfg: &SsimConfig,
    keep: impl Fn(usize, usize) -> bool,
) -> Option<f64> {
    let w = cfg.window;
    let (mut total, mut count) = (0.0, 0usize);
    for r in 0..=dims.height - w {
        for c in 0..=dims.width - w {
            if !keep(r, c) {
                continue;
            }
            let per_channel: f64 = (0..dims.channels).map(|ch| window_ssim(a, b, dims, cfg, r, c, ch)).sum();
            total += per_channel / dims.channels as f64;
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Mean SSIM over all windows, averaged over channels.
pub fn ssim(a: &[f64], b: &[f64], dims: ImageDims, cfg: &SsimConfig) -> Result<f64, EvalError> {
    check(a, b, dims, cfg)?;
    Ok(mean_over_windows(a, b, dims, cfg, |_, _| true).expect("window fits"))
}

/// Mean SSIM over the windows whose foreground coverage reaches
/// `cfg.mask_coverage`; `mask` is `H × W`.
pub fn masked_ssim(a: &[f64], b: &[f64], mask: &[bool], dims: ImageDims, cfg: &SsimConfig) -> Result<f64, EvalError> {
    check(a, b, dims, cfg)?;
    if mask.len() != dims.height * dims.width {
        return Err(EvalError::Dimension {
            what: "mask",
            expected: dims.height * dims.width,
            got: mask.len(),
        });
    }
    // Summed-area table of the mask for O(1) window coverage.
    let (h, w) = (dims.height, dims.width);
    let mut sat = vec![0usize; (h + 1) * (w + 1)];
    for i in 0..h {
        for j in 0..w {
            sat[(i + 1) * (w + 1) + j + 1] =
                mask[i * w + j] as usize + sat[i * (w + 1) + j + 1] + sat[(i + 1) * (w + 1) + j] - sat[i * (w + 1) + j];
        }
    }
    let win = cfg.window;
    let need = cfg.mask_coverage * (win * win) as f64;
    let covered = |r: usize, c: usize| {
        let at = |i: usize, j: usize| sat[i * (w + 1) + j];
        let n = at(r + win, c + win) + at(r, c) - at(r, c + win) - at(r + win, c);
        n > 0 && n as f64 >= need
    };
    mean_over_windows(a, b, dims, cfg, covered).ok_or(EvalError::EmptyMask)
}

//! The regression benchmark over a test set and its CSV/PNG report.

use std::fmt;
use std::io::Write;
use std::path::Path;

use super::baselines::{mogp_baseline, nn_baseline, MogpConfig};
use super::diagnostics::{compare_paths, sigma_sweep, ConvergenceCurve, SWEEP_SCALES};
use super::images::{image_grid, save_png};
use super::ssim::{masked_ssim, ssim, SsimConfig};
use super::{median, EvalError};
use crate::data::{split_observed, Dataset, ImageDims, SequencePair, SplitStrategy};
use crate::gp::GpConfig;
use crate::model::Model;
use crate::regress::{regress, subsequence};
use crate::training::{finetune_with, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Proposed,
    RVae,
    Mogp,
    Nn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Proposed, Method::RVae, Method::Mogp, Method::Nn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::RVae => "r-vae",
            Method::Mogp => "mogp",
            Method::Nn => "nn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub observed: usize,
    pub split: SplitStrategy,
    pub split_seed: u64,
    /// Fine-tuning setup of the proposed model; the ablation uses the same
    /// setup with no regressed pairs. The seed is offset by the sequence
    /// index.
    pub finetune: TrainConfig,
    pub run_finetune: bool,
    pub gp: GpConfig,
    pub ssim: SsimConfig,
    pub mogp: MogpConfig,
    pub sweep_scales: Vec<f64>,
    pub sweep_seeds: Vec<u64>,
    /// Record KL / NLL-ratio curves during fine-tuning.
    pub diagnostics: bool,
    /// Held-out frames shown in each sequence's PNG grid.
    pub grid_columns: usize,
    pub threads: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            observed: 20,
            split: SplitStrategy::UniformSpaced,
            split_seed: 0,
            finetune: TrainConfig::default(),
            run_finetune: true,
            gp: GpConfig::default(),
            ssim: SsimConfig::default(),
            mogp: MogpConfig::default(),
            sweep_scales: SWEEP_SCALES.to_vec(),
            sweep_seeds: (0..5).collect(),
            diagnostics: true,
            grid_columns: 10,
            threads: 1,
        }
    }
}

/// Mean SSIM of one method over the held-out frames of one sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodScore {
    pub method: Method,
    pub full: f64,
    pub masked: f64,
}

/// Per-query SSIM of one sweep run on one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub method: Method,
    pub seed: u64,
    /// `ssim[s][q]`, aligned with the configured scales.
    pub ssim: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceReport {
    pub id: String,
    pub scores: Vec<MethodScore>,
    pub sweeps: Vec<SweepRecord>,
    /// `(method, curve)` for the two learned methods, when recorded.
    pub curves: Vec<(Method, ConvergenceCurve)>,
    /// Rows: observed frames, then proposed, r-vae and ground truth at the
    /// grid columns.
    pub grid: Vec<Vec<Vec<f64>>>,
}

impl SequenceReport {
    pub fn score(&self, method: Method) -> Option<&MethodScore> {
        self.scores.iter().find(|s| s.method == method)
    }

    pub fn curve(&self, method: Method) -> Option<&ConvergenceCurve> {
        self.curves.iter().find(|(m, _)| *m == method).map(|(_, c)| c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dims: ImageDims,
    pub sweep_scales: Vec<f64>,
    pub sweep_seeds: Vec<u64>,
    pub sequences: Vec<SequenceReport>,
}

impl EvalReport {
    /// Median over sequences of `(full, masked)` SSIM.
    pub fn median_scores(&self, method: Method) -> (f64, f64) {
        let (full, masked): (Vec<f64>, Vec<f64>) = self
            .sequences
            .iter()
            .filter_map(|s| s.score(method))
            .map(|s| (s.full, s.masked))
            .unzip();
        (median(&full), median(&masked))
    }

    /// Median SSIM per scale for one sweep seed, pooling the queries of
    /// every sequence.
    pub fn sweep_medians(&self, method: Method, seed: u64) -> Vec<f64> {
        (0..self.sweep_scales.len())
            .map(|s| {
                let pooled: Vec<f64> = self
                    .sequences
                    .iter()
                    .flat_map(|seq| &seq.sweeps)
                    .filter(|r| r.method == method && r.seed == seed)
                    .flat_map(|r| r.ssim[s].iter().copied())
                    .collect();
                median(&pooled)
            })
            .collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn score(
    method: Method,
    predictions: &[Vec<f64>],
    truth: &SequencePair,
    masks: &[Vec<bool>],
    dims: ImageDims,
    cfg: &SsimConfig,
) -> Result<MethodScore, EvalError> {
    let mut full = Vec::with_capacity(predictions.len());
    let mut masked = Vec::with_capacity(predictions.len());
    for ((p, y), m) in predictions.iter().zip(&truth.y).zip(masks) {
        full.push(ssim(p, y, dims, cfg)?);
        match masked_ssim(p, y, m, dims, cfg) {
            Ok(v) => masked.push(v),
            Err(EvalError::EmptyMask) => {}
            Err(e) => return Err(e),
        }
    }
    if masked.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    Ok(MethodScore {
        method,
        full: mean(&full),
        masked: mean(&masked),
    })
}

/// Fine-tunes a copy of `base` on `observed`, optionally recording the
/// convergence curve against `held_out`.
fn tuned(
    base: &Model,
    observed: &SequencePair,
    held_out: &SequencePair,
    train: &[SequencePair],
    tcfg: &TrainConfig,
    cfg: &BenchmarkConfig,
) -> Result<(Model, Option<ConvergenceCurve>), EvalError> {
    let mut model = base.clone();
    let mut curve = cfg.diagnostics.then(ConvergenceCurve::default);
    if cfg.run_finetune {
        let mut failure = None;
        finetune_with(&mut model, observed, train, tcfg, |_, m| {
            if let Some(c) = curve.as_mut() {
                let recorded = compare_paths(m, observed, held_out, cfg.gp).and_then(|p| c.record(&p));
                if let Err(e) = recorded {
                    failure.get_or_insert(e);
                }
            }
            Ok(())
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
    } else if let Some(c) = curve.as_mut() {
        c.record(&compare_paths(&model, observed, held_out, cfg.gp)?)?;
    }
    Ok((model, curve))
}

fn evaluate_sequence(
    index: usize,
    proposed: &Model,
    ablation: &Model,
    train: &[SequencePair],
    test: &Dataset,
    cfg: &BenchmarkConfig,
) -> Result<SequenceReport, EvalError> {
    let seq = &test.sequences[index];
    let dims = test.dims;
    let split = split_observed(seq.len(), cfg.observed, cfg.split, cfg.split_seed)?;
    let observed = subsequence(seq, &split.observed);
    let held_out = subsequence(seq, &split.held_out);
    let all_masks = test.masks(index);
    let masks: Vec<Vec<bool>> = split.held_out.iter().map(|&i| all_masks[i].clone()).collect();

    let mut tcfg = cfg.finetune.clone();
    tcfg.seed = cfg.finetune.seed.wrapping_add(index as u64);
    let (prop, prop_curve) = tuned(proposed, &observed, &held_out, train, &tcfg, cfg)?;
    tcfg.regressed_per_sequence = 0;
    let (rvae, rvae_curve) = tuned(ablation, &observed, &held_out, train, &tcfg, cfg)?;

    let prop_images = regress(&prop, &observed, &held_out.x, cfg.gp, 0.0, 0)?.images;
    let rvae_images = regress(&rvae, &observed, &held_out.x, cfg.gp, 0.0, 0)?.images;
    let mogp_images = mogp_baseline(&observed, &held_out.x, &cfg.mogp)?;
    let nn_images = nn_baseline(&rvae, &observed, &held_out.x)?;

    let scores = [
        (Method::Proposed, &prop_images),
        (Method::RVae, &rvae_images),
        (Method::Mogp, &mogp_images),
        (Method::Nn, &nn_images),
    ]
    .into_iter()
    .map(|(m, imgs)| score(m, imgs, &held_out, &masks, dims, &cfg.ssim))
    .collect::<Result<Vec<_>, _>>()?;

    let mut sweeps = Vec::new();
    for (method, model) in [(Method::Proposed, &prop), (Method::RVae, &rvae)] {
        for &seed in &cfg.sweep_seeds {
            let noise_seed = seed.wrapping_mul(1_000_003).wrapping_add(index as u64);
            let table = sigma_sweep(model, &observed, &held_out, &cfg.sweep_scales, cfg.gp, dims, &cfg.ssim, noise_seed)?;
            sweeps.push(SweepRecord {
                method,
                seed,
                ssim: table.ssim,
            });
        }
    }

    let cols = cfg.grid_columns.min(held_out.len());
    let pick: Vec<usize> = (0..cols).map(|i| i * held_out.len() / cols.max(1)).collect();
    let row = |imgs: &[Vec<f64>]| pick.iter().map(|&i| imgs[i].clone()).collect::<Vec<_>>();
    let grid = vec![observed.y.clone(), row(&prop_images), row(&rvae_images), row(&held_out.y)];

    let curves = [(Method::Proposed, prop_curve), (Method::RVae, rvae_curve)]
        .into_iter()
        .filter_map(|(m, c)| c.map(|c| (m, c)))
        .collect();
    Ok(SequenceReport {
        id: seq.id.clone(),
        scores,
        sweeps,
        curves,
        grid,
    })
}

/// Runs every method on every test sequence. Sequences are distributed
/// over `cfg.threads` workers; results keep test-set order.
pub fn run_benchmark(
    proposed: &Model,
    ablation: &Model,
    train: &Dataset,
    test: &Dataset,
    cfg: &BenchmarkConfig,
) -> Result<EvalReport, EvalError> {
    for (what, m) in [("proposed", proposed), ("ablation", ablation)] {
        let c = &m.config;
        if (c.image_height, c.image_width, c.channels) != (test.dims.height, test.dims.width, test.dims.channels)
            || c.domain_dim != test.domain_dim()
        {
            return Err(EvalError::Invalid(format!("{what} model does not match the test set's shapes")));
        }
    }
    if test.sequences.is_empty() {
        return Err(EvalError::Invalid("test set is empty".into()));
    }
    let n = test.sequences.len();
    let threads = cfg.threads.clamp(1, n);
    let mut results: Vec<Option<Result<SequenceReport, EvalError>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    (t..n)
                        .step_by(threads)
                        .map(|i| (i, evaluate_sequence(i, proposed, ablation, &train.sequences, test, cfg)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("evaluation worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let sequences = results
        .into_iter()
        .map(|r| r.expect("every sequence evaluated"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport {
        dims: test.dims,
        sweep_scales: cfg.sweep_scales.clone(),
        sweep_seeds: cfg.sweep_seeds.clone(),
        sequences,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, EvalError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<(), EvalError> {
    let io = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = create(path)?;
    writeln!(out, "{header}").map_err(io)?;
    for r in rows {
        writeln!(out, "{r}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Writes `scores.csv`, `summary.csv`, `sweep.csv`, `convergence.csv` and
/// one `grid_<id>.png` per sequence into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_csv(
        &dir.join("scores.csv"),
        "sequence,method,ssim_full,ssim_masked",
        report.sequences.iter().flat_map(|s| {
            s.scores
                .iter()
                .map(move |m| format!("{},{},{},{}", s.id, m.method, m.full, m.masked))
        }),
    )?;
    write_csv(
        &dir.join("summary.csv"),
        "method,median_ssim_full,median_ssim_masked",
        Method::ALL.iter().map(|&m| {
            let (f, k) = report.median_scores(m);
            format!("{m},{f},{k}")
        }),
    )?;
    let mut sweep_rows = Vec::new();
    for m in [Method::Proposed, Method::RVae] {
        for &seed in &report.sweep_seeds {
            for (scale, med) in report.sweep_scales.iter().zip(report.sweep_medians(m, seed)) {
                sweep_rows.push(format!("{m},{seed},{scale},{med}"));
            }
        }
    }
    write_csv(&dir.join("sweep.csv"), "method,seed,scale,median_ssim", sweep_rows)?;
    let mut curve_rows = Vec::new();
    for s in &report.sequences {
        for (m, c) in &s.curves {
            for (it, (kl, ratio)) in c.kl.iter().zip(&c.nll_ratio).enumerate() {
                curve_rows.push(format!("{},{m},{it},{kl},{ratio}", s.id));
            }
        }
    }
    write_csv(
        &dir.join("convergence.csv"),
        "sequence,method,iteration,kl_median,nll_ratio",
        curve_rows,
    )?;
    for s in &report.sequences {
        let (img, dims) = image_grid(&s.grid, report.dims, 1.0)?;
        save_png(&dir.join(format!("grid_{}.png", s.id)), &img, dims)?;
    }
    Ok(())
}

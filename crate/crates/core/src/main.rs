use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use varegress::config::RunConfig;
use varegress::data::{
    generate, load_dataset, save_dataset, split_observed, Dataset, GeneratorSpec, ImageDims, SequencePair,
    DEFAULT_LINKS,
};
use varegress::eval::{image_grid, masked_ssim, run_benchmark, save_png, ssim, write_report, EvalError, Method};
use varegress::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use varegress::regress::{query_grid, regress, subsequence};
use varegress::training::{finetune, save_loss_csv, train, TrainConfig};

#[derive(Parser)]
#[command(name = "varegress", version, about = "Image regression through a VAE latent space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train and test sets.
    GenData(GenDataArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Fine-tune a checkpoint on the observed frames of one test sequence.
    Finetune(FinetuneArgs),
    /// Regress images of one test sequence at query points.
    Regress(RegressArgs),
    /// Score every method on a test set and write the report bundle.
    Eval(EvalArgs),
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Configuration override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed; falls back to the config file, then VAREGRESS_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        let seed = cfg.resolved_seed()?;
        cfg.seed = Some(seed);
        cfg.train.seed = seed;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    RotatingBar,
    PendulumJoints,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    /// Output directory; `train/` and `test/` are created inside.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    train_sequences: usize,
    #[arg(long, default_value_t = 8)]
    test_sequences: usize,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    #[arg(long, default_value_t = 100)]
    test_frames: usize,
    #[arg(long, default_value_t = DEFAULT_LINKS)]
    links: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset directory or manifest.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss log; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Regressed pairs per sequence; 0 trains the ablation.
    #[arg(long)]
    regressed: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SequenceArgs {
    /// Test dataset directory or manifest.
    #[arg(long)]
    data: PathBuf,
    /// Training dataset used to fill fine-tuning batches.
    #[arg(long)]
    train_data: PathBuf,
    /// Index of the test sequence.
    #[arg(long, default_value_t = 0)]
    sequence: usize,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    observed: Option<usize>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    seq: SequenceArgs,
    /// Fine-tuned checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    regressed: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RegressArgs {
    #[command(flatten)]
    seq: SequenceArgs,
    /// Output directory for `regress.png` and `frames.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Number of evenly spaced queries in [0, 1] (scalar domains only;
    /// other domains use the held-out frames).
    #[arg(long)]
    queries: Option<usize>,
    /// Latent sampling scale around the GP mean.
    #[arg(long, default_value_t = 0.0)]
    scale: f64,
    #[arg(long)]
    no_finetune: bool,
    #[arg(long)]
    regressed: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint trained with the regression term.
    #[arg(long)]
    proposed: PathBuf,
    /// Checkpoint trained without it.
    #[arg(long)]
    ablation: PathBuf,
    #[arg(long)]
    train_data: PathBuf,
    #[arg(long)]
    test_data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    no_finetune: bool,
    #[command(flatten)]
    common: Common,
}

fn load_data(path: &Path, what: &str) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading {what} data"))
}

fn load_model(path: &Path) -> Result<Model> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let seed = cfg.seed.unwrap_or(0);
    let spec = match args.kind {
        Kind::RotatingBar => GeneratorSpec::RotatingBar,
        Kind::PendulumJoints => GeneratorSpec::PendulumJoints { links: args.links },
    };
    let dims = ImageDims::new(args.height, args.width, args.channels);
    let name = spec.name();
    let train = generate(&spec, name, dims, args.train_sequences, args.frames, seed, 0)?;
    let test = generate(
        &spec,
        name,
        dims,
        args.test_sequences,
        args.test_frames,
        seed,
        args.train_sequences as u64,
    )?;
    for (ds, sub) in [(&train, "train"), (&test, "test")] {
        let dir = args.out.join(sub);
        save_dataset(ds, &dir)?;
        println!(
            "{sub}: {} sequences × {} frames of {}×{}×{} ({}, n(X) = {}) -> {}",
            ds.sequences.len(),
            ds.sequences[0].len(),
            dims.height,
            dims.width,
            dims.channels,
            name,
            ds.domain_dim(),
            dir.display()
        );
    }
    Ok(())
}

fn model_config(cfg: &RunConfig, ds: &Dataset) -> ModelConfig {
    ModelConfig {
        image_height: ds.dims.height,
        image_width: ds.dims.width,
        channels: ds.dims.channels,
        domain_dim: ds.domain_dim(),
        ..cfg.model.clone()
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(m) = args.regressed {
        cfg.train.regressed_per_sequence = m;
    }
    let ds = load_data(&args.data, "training")?;
    let mut model = Model::new(model_config(&cfg, &ds), cfg.train.seed)?;
    let log = train(&mut model, &ds.sequences, &cfg.train)?;
    save_checkpoint(&model, &args.out)?;
    let csv = args.loss_csv.unwrap_or_else(|| args.out.with_extension("loss.csv"));
    save_loss_csv(&log, &csv)?;
    match log.last() {
        Some(r) => println!("{} steps, final loss {:.4} -> {}", log.len(), r.loss.total, args.out.display()),
        None => println!("0 steps -> {}", args.out.display()),
    }
    Ok(())
}

struct Prepared {
    model: Model,
    train: Dataset,
    test: Dataset,
    index: usize,
    observed: SequencePair,
    held_out: Vec<usize>,
}

fn prepare(seq: &SequenceArgs, cfg: &RunConfig) -> Result<Prepared> {
    let model = load_model(&seq.checkpoint)?;
    let test = load_data(&seq.data, "test")?;
    let train = load_data(&seq.train_data, "training")?;
    let Some(sequence) = test.sequences.get(seq.sequence) else {
        bail!("test set has {} sequences, index {} requested", test.sequences.len(), seq.sequence);
    };
    let n = seq.observed.unwrap_or(cfg.observed);
    let split = split_observed(sequence.len(), n, cfg.split, cfg.seed.unwrap_or(0))?;
    let observed = subsequence(sequence, &split.observed);
    Ok(Prepared {
        model,
        index: seq.sequence,
        observed,
        held_out: split.held_out,
        train,
        test,
    })
}

fn finetune_config(cfg: &RunConfig, regressed: Option<usize>) -> TrainConfig {
    let mut t = cfg.train.clone();
    if let Some(m) = regressed {
        t.regressed_per_sequence = m;
    }
    t
}

fn cmd_finetune(args: FinetuneArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let mut p = prepare(&args.seq, &cfg)?;
    let tcfg = finetune_config(&cfg, args.regressed);
    let log = finetune(&mut p.model, &p.observed, &p.train.sequences, &tcfg)?;
    save_checkpoint(&p.model, &args.out)?;
    save_loss_csv(&log, &args.out.with_extension("loss.csv"))?;
    println!(
        "fine-tuned on {} observed frames of {} for {} iterations -> {}",
        p.observed.len(),
        p.test.sequences[p.index].id,
        log.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_regress(args: RegressArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let mut p = prepare(&args.seq, &cfg)?;
    if !args.no_finetune {
        let tcfg = finetune_config(&cfg, args.regressed);
        finetune(&mut p.model, &p.observed, &p.train.sequences, &tcfg)?;
    }
    let dims = p.test.dims;
    let params = p.test.sequence_params(p.index);
    let sequence = &p.test.sequences[p.index];
    let queries: Vec<Vec<f64>> = if sequence.domain_dim() == 1 {
        query_grid(args.queries.unwrap_or(cfg.queries))
    } else {
        if args.queries.is_some() {
            bail!("--queries needs a scalar domain; this dataset has n(X) = {}", sequence.domain_dim());
        }
        p.held_out.iter().map(|&i| sequence.x[i].clone()).collect()
    };
    let truth: Vec<Vec<f64>> = queries.iter().map(|x| params.render(dims, x)).collect();
    let masks: Vec<Vec<bool>> = queries.iter().map(|x| params.mask(dims, x)).collect();
    let out = regress(&p.model, &p.observed, &queries, cfg.gp(), args.scale, cfg.seed.unwrap_or(0))?;

    let xs: Vec<&[f64]> = p.observed.x.iter().map(Vec::as_slice).collect();
    let ys: Vec<&[f64]> = p.observed.y.iter().map(Vec::as_slice).collect();
    let means: Vec<Vec<f64>> = p.model.encode_pairs(&xs, &ys)?.into_iter().map(|e| e.mean).collect();
    let recon = p.model.decode_latents(&means)?;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let csv_path = args.out.join("frames.csv");
    let mut csv = std::io::BufWriter::new(
        std::fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?,
    );
    writeln!(csv, "kind,index,x,ssim,ssim_masked")?;
    let fmt_x = |x: &[f64]| x.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
    for (i, (r, y)) in recon.iter().zip(&p.observed.y).enumerate() {
        let full = ssim(r, y, dims, &cfg.ssim)?;
        let mask = params.mask(dims, &p.observed.x[i]);
        writeln!(csv, "observed,{i},{},{full},{}", fmt_x(&p.observed.x[i]), masked_cell(r, y, &mask, dims, &cfg)?)?;
    }
    for (i, ((img, y), m)) in out.images.iter().zip(&truth).zip(&masks).enumerate() {
        let full = ssim(img, y, dims, &cfg.ssim)?;
        writeln!(csv, "query,{i},{},{full},{}", fmt_x(&queries[i]), masked_cell(img, y, m, dims, &cfg)?)?;
    }
    csv.flush()?;
    let rows = vec![p.observed.y.clone(), recon, out.images, truth];
    let (grid, gdims) = image_grid(&rows, dims, 1.0)?;
    save_png(&args.out.join("regress.png"), &grid, gdims)?;
    println!(
        "regressed {} queries from {} observed frames -> {}",
        queries.len(),
        p.observed.len(),
        args.out.display()
    );
    Ok(())
}

/// Masked SSIM, or an empty cell when no window is foreground.
fn masked_cell(a: &[f64], b: &[f64], mask: &[bool], dims: ImageDims, cfg: &RunConfig) -> Result<String> {
    match masked_ssim(a, b, mask, dims, &cfg.ssim) {
        Ok(v) => Ok(v.to_string()),
        Err(EvalError::EmptyMask) => Ok(String::new()),
        Err(e) => Err(e.into()),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    let missing: Vec<String> = [
        ("proposed checkpoint", &args.proposed),
        ("ablation checkpoint", &args.ablation),
        ("training data", &args.train_data),
        ("test data", &args.test_data),
    ]
    .iter()
    .filter(|(_, p)| !p.exists())
    .map(|(what, p)| format!("{what} ({})", p.display()))
    .collect();
    if !missing.is_empty() {
        bail!("missing inputs: {}", missing.join(", "));
    }
    let proposed = load_model(&args.proposed)?;
    let ablation = load_model(&args.ablation)?;
    let train = load_data(&args.train_data, "training")?;
    let test = load_data(&args.test_data, "test")?;
    let mut bench = cfg.benchmark(cfg.seed.unwrap_or(0));
    bench.run_finetune = !args.no_finetune;
    let report = run_benchmark(&proposed, &ablation, &train, &test, &bench)?;
    write_report(&report, &args.out)?;
    for m in Method::ALL {
        let (full, masked) = report.median_scores(m);
        println!("{:>9}: ssim {full:.4}  masked {masked:.4}", m.name());
    }
    println!("report -> {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Regress(a) => cmd_regress(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

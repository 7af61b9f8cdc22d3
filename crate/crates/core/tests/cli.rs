use std::path::Path;
use std::process::{Command, Output};

use varegress::data::{generate, load_dataset, GeneratorSpec, ImageDims};
use varegress::model::{save_checkpoint, Model, ModelConfig};

const BIN: &str = env!("CARGO_BIN_EXE_varegress");

const SMALL: &[&str] = &[
    "--set",
    "encoder_hidden=16",
    "--set",
    "decoder_hidden=16",
    "--set",
    "latent_y_dim=3",
    "--set",
    "ssim_window=4",
    "--set",
    "finetune_iters=2",
    "--set",
    "observed=5",
];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("VAREGRESS_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn gen(dir: &Path, out: &str, seed: &str) {
    ok(
        dir,
        &[
            "gen-data",
            "--kind",
            "rotating-bar",
            "--out",
            out,
            "--height",
            "16",
            "--width",
            "16",
            "--train-sequences",
            "5",
            "--test-sequences",
            "2",
            "--frames",
            "12",
            "--test-frames",
            "16",
            "--seed",
            seed,
        ],
    );
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(SMALL).copied().collect()
}

/// Every regular file under `dir`, relative path and bytes, sorted.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn pipeline(dir: &Path) {
    gen(dir, "data", "3");
    ok(dir, &with_small(&["train", "--data", "data/train", "--out", "p.varw", "--epochs", "2"]));
    ok(
        dir,
        &with_small(&["train", "--data", "data/train", "--out", "a.varw", "--epochs", "2", "--regressed", "0"]),
    );
    ok(
        dir,
        &with_small(&[
            "finetune",
            "--data",
            "data/test",
            "--train-data",
            "data/train",
            "--checkpoint",
            "p.varw",
            "--out",
            "f.varw",
        ]),
    );
    ok(
        dir,
        &with_small(&[
            "regress",
            "--data",
            "data/test",
            "--train-data",
            "data/train",
            "--checkpoint",
            "p.varw",
            "--out",
            "reg",
            "--queries",
            "7",
            "--scale",
            "1",
        ]),
    );
    ok(
        dir,
        &with_small(&[
            "eval",
            "--proposed",
            "p.varw",
            "--ablation",
            "a.varw",
            "--train-data",
            "data/train",
            "--test-data",
            "data/test",
            "--out",
            "report",
        ]),
    );
}

#[test]
fn every_command_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let sa = snapshot(a.path());
    let sb = snapshot(b.path());
    let names: Vec<&str> = sa.iter().map(|(n, _)| n.as_str()).collect();
    for expected in [
        "p.varw",
        "p.loss.csv",
        "f.varw",
        "reg/regress.png",
        "reg/frames.csv",
        "report/summary.csv",
        "report/sweep.csv",
        "report/convergence.csv",
    ] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
    assert_eq!(sa.len(), sb.len());
    for ((na, da), (nb, db)) in sa.iter().zip(&sb) {
        assert_eq!(na, nb);
        assert!(da == db, "{na} differs between runs");
    }
}

#[test]
fn different_seeds_give_different_data() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "one", "1");
    gen(d.path(), "two", "2");
    assert_ne!(snapshot(&d.path().join("one")), snapshot(&d.path().join("two")));
}

#[test]
fn environment_seed_is_used_when_no_flag_is_given() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "flag", "7");
    let out = Command::new(BIN)
        .current_dir(d.path())
        .env("VAREGRESS_SEED", "7")
        .args(["gen-data", "--kind", "rotating-bar", "--out", "env", "--height", "16", "--width", "16"])
        .args(["--train-sequences", "5", "--test-sequences", "2", "--frames", "12", "--test-frames", "16"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(snapshot(&d.path().join("flag")), snapshot(&d.path().join("env")));
}

#[test]
fn generated_data_matches_the_library_generator() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(
        d.path(),
        &[
            "gen-data",
            "--kind",
            "pendulum-joints",
            "--links",
            "2",
            "--out",
            "pend",
            "--height",
            "16",
            "--width",
            "16",
            "--train-sequences",
            "3",
            "--test-sequences",
            "2",
            "--frames",
            "6",
            "--test-frames",
            "9",
            "--seed",
            "11",
        ],
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("n(X) = 4"));
    let spec = GeneratorSpec::PendulumJoints { links: 2 };
    let dims = ImageDims::new(16, 16, 1);
    let train = generate(&spec, spec.name(), dims, 3, 6, 11, 0).unwrap();
    let test = generate(&spec, spec.name(), dims, 2, 9, 11, 3).unwrap();
    assert_eq!(load_dataset(&d.path().join("pend/train")).unwrap(), train);
    assert_eq!(load_dataset(&d.path().join("pend/test")).unwrap(), test);
}

#[test]
fn zero_epochs_write_the_initialization() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "data", "3");
    ok(
        d.path(),
        &with_small(&["train", "--data", "data/train", "--out", "zero.varw", "--epochs", "0", "--seed", "9"]),
    );
    let cfg = ModelConfig {
        image_height: 16,
        image_width: 16,
        channels: 1,
        domain_dim: 1,
        encoder_hidden: vec![16],
        decoder_hidden: vec![16],
        latent_y_dim: 3,
        ..ModelConfig::default()
    };
    let init = d.path().join("init.varw");
    save_checkpoint(&Model::new(cfg, 9).unwrap(), &init).unwrap();
    assert_eq!(std::fs::read(init).unwrap(), std::fs::read(d.path().join("zero.varw")).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &["gen-data", "--out", "x"]).status.code(), Some(2));
    assert_eq!(run(d.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(d.path(), &["train", "--data", "x"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_one_and_name_the_problem() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "data", "3");
    let out = run(
        d.path(),
        &[
            "eval",
            "--proposed",
            "gone.varw",
            "--ablation",
            "also_gone.varw",
            "--train-data",
            "data/train",
            "--test-data",
            "data/test",
            "--out",
            "r",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gone.varw") && err.contains("also_gone.varw"), "{err}");

    let out = run(
        d.path(),
        &with_small(&[
            "train",
            "--data",
            "data/train",
            "--out",
            "bad.varw",
            "--epochs",
            "3",
            "--set",
            "learning_rate=1e200",
        ]),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("non-finite loss at step"), "{err}");

    let out = run(d.path(), &["train", "--data", "data/train", "--out", "x.varw", "--set", "bogus=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn config_file_and_overrides_combine() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "data", "3");
    std::fs::write(
        d.path().join("run.cfg"),
        "# small model\nencoder_hidden = 16\ndecoder_hidden = 16\nlatent_y_dim = 3\nepochs = 5\nseed = 4\n",
    )
    .unwrap();
    ok(
        d.path(),
        &["train", "--data", "data/train", "--out", "c.varw", "--config", "run.cfg", "--set", "epochs=1"],
    );
    let log = std::fs::read_to_string(d.path().join("c.loss.csv")).unwrap();
    // 5 sequences × 12 frames at the default batch geometry give 2 steps per epoch
    assert_eq!(log.lines().count(), 1 + 2);
}

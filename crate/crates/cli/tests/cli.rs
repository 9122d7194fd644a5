use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const PIPELINE: &str = "\
seed = 3
manifest = data/manifest.tsv
tokenizer = tok/word

[synth]
out_dir = data
classes = 3
pieces_per_class = 10
pages_per_piece = 2
columns_per_page = 160

[train-tokenizer]
kind = word

[pretrain]
arch = causal
embed_dim = 16
hidden_dim = 16
n_heads = 2
context = 34
epochs = 1
batch_size = 16
pieces = train
out = lm.ckpt
log = lm.log
report = lm.report

[finetune]
init = lm.ckpt
fragment_length = 32
train_per_class = 30
val_per_class = 10
steps = 10
out = clf.ckpt
log = clf.log
report = clf.report

[evaluate]
checkpoint = clf.ckpt
fragment_length = 32
crop = 32
per_class = 10
report = test.report

[predict]
checkpoint = clf.ckpt
crop = 32
out = predictions.tsv

[embed]
checkpoint = clf.ckpt
out = embeddings.tsv
";

const STAGES: [&str; 7] = [
    "synth",
    "train-tokenizer",
    "pretrain",
    "finetune",
    "evaluate",
    "predict",
    "embed",
];

fn stylus(config: &Path, stage: &str, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stylus"))
        .arg(stage)
        .arg("--config")
        .arg(config)
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn pipeline(dir: &Path) -> PathBuf {
    let config = dir.join("run.conf");
    fs::write(&config, PIPELINE).unwrap();
    for stage in STAGES {
        let out = stylus(&config, stage, &[]);
        assert!(out.status.success(), "{stage}: {}", stderr(&out));
    }
    config
}

#[test]
fn missing_manifest_is_a_field_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.conf");
    fs::write(&config, "seed = 1\nmanifest = nowhere.tsv\n").unwrap();
    let out = stylus(&config, "train-tokenizer", &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("manifest"), "{err}");
    assert!(
        err.contains("tokenizer"),
        "missing output prefix also reported: {err}"
    );
}

#[test]
fn missing_seed_is_a_field_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.conf");
    fs::write(&config, "[synth]\nout_dir = data\n").unwrap();
    let out = stylus(&config, "synth", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("seed"));
    // The flag fills the gap.
    let out = stylus(
        &config,
        "synth",
        &["--seed", "4", "--override", "pieces_per_class=2"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("data/manifest.tsv").exists());
}

#[test]
fn unknown_and_malformed_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.conf");
    fs::write(&config, "seed = 1\n[synth]\nout_dir = data\nclases = 3\n").unwrap();
    let out = stylus(&config, "synth", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("clases"));

    fs::write(
        &config,
        "seed = 1\n[synth]\nout_dir = data\nclasses = three\n",
    )
    .unwrap();
    let out = stylus(&config, "synth", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("classes"));

    let out = stylus(&config, "synth", &["--override", "no_equals_sign"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn artifacts_carry_the_config_hash_and_reruns_are_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for file in [
        "lm.report",
        "clf.report",
        "test.report",
        "predictions.tsv",
        "embeddings.tsv",
        "lm.log",
    ] {
        let x = fs::read_to_string(a.path().join(file)).unwrap();
        assert!(x.contains("config_hash"), "{file} lacks the hash");
        assert_eq!(
            x,
            fs::read_to_string(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
    for file in ["lm.ckpt", "clf.ckpt", "tok/word.meta", "data/manifest.tsv"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
    let test = fs::read_to_string(a.path().join("test.report")).unwrap();
    assert!(test.contains("macro"), "{test}");

    // A different seed changes the hash and the outcome.
    let out = stylus(
        &a.path().join("run.conf"),
        "finetune",
        &["--seed", "4", "--override", "out=other.ckpt"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_ne!(
        fs::read(a.path().join("other.ckpt")).unwrap(),
        fs::read(a.path().join("clf.ckpt")).unwrap()
    );
}

#[test]
fn evaluate_refuses_a_foreign_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let config = pipeline(dir.path());
    let out = stylus(
        &config,
        "train-tokenizer",
        &[
            "--override",
            "kind=bpe",
            "--override",
            "vocab_size=300",
            "--override",
            "tokenizer=tok/bpe",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let out = stylus(&config, "evaluate", &["--override", "tokenizer=tok/bpe"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("vocab"), "{}", stderr(&out));
}

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use stylus_core::bootleg::{
    encode_symbolic, filter_filler, parse_note_list, PitchMap, DEFAULT_MIN_FEATURES,
};
use stylus_core::corpus::{
    build_lm_stream, sample_fragments, split_by_piece, split_by_piece_stratified,
    tokenize_manifest, LabelSet, Manifest, SplitRatios, SynthConfig, SyntheticCorpus,
    TokenizedPage,
};
use stylus_core::inference::{
    extract_embedding, predict_page, render_embeddings, render_predictions,
};
use stylus_core::nn::{Arch, Checkpoint, DropoutConfig, Model, ModelConfig};
use stylus_core::tokenizer::{Tokenizer, TokenizerKind, DEFAULT_MAX_VOCAB};
use stylus_core::train::{
    argmax, compute_metrics, evaluate_fragments, finetune_classifier, fingerprint_files,
    init_classifier, pretrain_lm, render_lm_report, render_report, AdamWConfig, FinetunePlan,
    LmTrainConfig, OneCycleConfig, RunMetadata, StepLog,
};

use crate::config::{ConfigError, Fields, RunConfig, Stage};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] stylus_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cfg: &RunConfig) -> Result<()> {
    match cfg.stage {
        Stage::Synth => synth(cfg),
        Stage::Encode => encode(cfg),
        Stage::TrainTokenizer => train_tokenizer(cfg),
        Stage::Pretrain => language_model(cfg, false),
        Stage::LmFinetune => language_model(cfg, true),
        Stage::Finetune => finetune(cfg),
        Stage::Evaluate => evaluate(cfg),
        Stage::Predict => predict(cfg),
        Stage::Embed => embed(cfg),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        }),
        None => Ok(()),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_log(path: &Path, hash: &str, log: &[StepLog]) -> Result<()> {
    let mut s = format!("# config_hash={hash}\n# step, lr, momentum, loss\n");
    for l in log {
        s.push_str(&l.line());
        s.push('\n');
    }
    write(path, s)
}

fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write(path, ck.to_bytes())
}

fn meta(cfg: &RunConfig, manifest: &Manifest) -> Result<RunMetadata> {
    let names: Vec<&Path> = manifest.records.iter().map(|r| r.path.as_path()).collect();
    Ok(RunMetadata {
        stage: cfg.stage.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        data_fingerprint: fingerprint_files(&manifest.base_dir, names)?,
    })
}

const DATA_KEYS: [&str; 3] = ["manifest", "min_features", "split_seed"];

/// Manifest with filler pages dropped.
struct Data {
    manifest: Manifest,
    split_seed: u64,
}

fn data_fields(f: &mut Fields<'_>) -> (PathBuf, usize, u64) {
    let path = f.input_path("manifest");
    let min = f.get("min_features", DEFAULT_MIN_FEATURES);
    let split_seed = f.get("split_seed", 0u64);
    (path, min, split_seed)
}

fn load_data(path: &Path, min_features: usize, split_seed: u64) -> Result<Data> {
    let manifest = Manifest::load(path)?;
    let kept = filter_filler(&manifest.records, min_features);
    if kept.len() < manifest.len() {
        log::info!("dropped {} filler pages", manifest.len() - kept.len());
    }
    Ok(Data {
        manifest: manifest.with_records(kept),
        split_seed,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Part {
    Train,
    Val,
    Test,
    All,
}

impl std::str::FromStr for Part {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Part::Train),
            "val" => Ok(Part::Val),
            "test" => Ok(Part::Test),
            "all" => Ok(Part::All),
            _ => Err("expected train, val, test or all".into()),
        }
    }
}

impl Data {
    /// Classification split by piece; every stage that uses the same
    /// `split_seed` sees the same partition.
    fn part(&self, part: Part) -> Result<Manifest> {
        if part == Part::All {
            return Ok(self.manifest.clone());
        }
        let s = split_by_piece_stratified(
            &self.manifest,
            SplitRatios::CLASSIFICATION,
            self.split_seed,
        )?;
        Ok(match part {
            Part::Train => s.train,
            Part::Val => s.val,
            Part::Test => s.test,
            Part::All => unreachable!(),
        })
    }
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let mut f = cfg.fields(&[
        "out_dir",
        "classes",
        "pieces_per_class",
        "pages_per_piece",
        "columns_per_page",
        "alphabet",
        "shared_alphabet",
        "class_mix",
        "peakiness",
    ]);
    let d = SynthConfig::default();
    let out_dir = f.output_path("out_dir");
    let sc = SynthConfig {
        classes: f.get("classes", d.classes),
        pieces_per_class: f.get("pieces_per_class", d.pieces_per_class),
        pages_per_piece: f.get("pages_per_piece", d.pages_per_piece),
        columns_per_page: f.get("columns_per_page", d.columns_per_page),
        alphabet: f.get("alphabet", d.alphabet),
        shared_alphabet: f.get("shared_alphabet", d.shared_alphabet),
        class_mix: f.get("class_mix", d.class_mix),
        peakiness: f.get("peakiness", d.peakiness),
        seed: cfg.seed,
    };
    f.check(sc.classes >= 2, "classes", "must be at least 2");
    f.check(
        sc.pieces_per_class > 0,
        "pieces_per_class",
        "must be positive",
    );
    f.check(
        (0.0..=1.0).contains(&sc.class_mix),
        "class_mix",
        "must lie in [0, 1]",
    );
    f.finish()?;
    let manifest = SyntheticCorpus::new(sc)?.write(&out_dir)?;
    let text = format!("# config_hash={}\n{}", cfg.hash(), manifest.to_text());
    write(&out_dir.join("manifest.tsv"), text)?;
    log::info!("wrote {} pages to {}", manifest.len(), out_dir.display());
    Ok(())
}

fn encode(cfg: &RunConfig) -> Result<()> {
    let mut f = cfg.fields(&[
        "notes",
        "pitch_map",
        "out",
        "manifest",
        "min_features",
        "filtered_manifest",
    ]);
    let notes = f.opt_input_path("notes");
    let pitch_map = f.opt_input_path("pitch_map");
    let out = notes.as_ref().map(|_| f.output_path("out"));
    let manifest = f.opt_input_path("manifest");
    let min = f.get("min_features", DEFAULT_MIN_FEATURES);
    let filtered = manifest
        .as_ref()
        .map(|_| f.output_path("filtered_manifest"));
    if notes.is_none() && manifest.is_none() {
        f.fail(
            "notes",
            "either `notes` (to encode) or `manifest` (to filter) is required",
        );
    }
    f.finish()?;

    if let (Some(notes), Some(out)) = (notes, out) {
        let map = match pitch_map {
            Some(p) => PitchMap::parse(&read(&p)?)?,
            None => PitchMap::default(),
        };
        let events = parse_note_list(&read(&notes)?)?;
        let score = encode_symbolic(&events, &map)?;
        write(&out, score.to_bytes())?;
        log::info!("encoded {} columns into {}", score.len(), out.display());
    }
    if let (Some(path), Some(out)) = (manifest, filtered) {
        let m = Manifest::load(&path)?;
        let kept = m.with_records(filter_filler(&m.records, min));
        let text = format!("# config_hash={}\n{}", cfg.hash(), kept.to_text());
        write(&out, text)?;
        log::info!("kept {} of {} pages", kept.len(), m.len());
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_scores(manifest: &Manifest) -> Result<Vec<stylus_core::bootleg::BootlegScore>> {
    manifest
        .records
        .iter()
        .map(|r| {
            Ok(stylus_core::bootleg::BootlegScore::load(
                manifest.resolve(r),
            )?)
        })
        .collect()
}

fn train_tokenizer(cfg: &RunConfig) -> Result<()> {
    let mut keys = vec!["kind", "vocab_size", "split", "tokenizer"];
    keys.extend(DATA_KEYS);
    let mut f = cfg.fields(&keys);
    let (path, min, split_seed) = data_fields(&mut f);
    let kind: TokenizerKind = f.get("kind", TokenizerKind::Word);
    let default_size = match kind {
        TokenizerKind::Word => DEFAULT_MAX_VOCAB,
        TokenizerKind::Bpe => 1000,
    };
    let vocab_size = f.get("vocab_size", default_size);
    let part: Part = f.get("split", Part::Train);
    let out = f.output_path("tokenizer");
    f.finish()?;

    let data = load_data(&path, min, split_seed)?;
    let manifest = data.part(part)?;
    let scores = load_scores(&manifest)?;
    let tok = Tokenizer::train(kind, &scores, vocab_size)?;
    ensure_parent(&out)?;
    tok.save(&out, &cfg.hash())?;
    log::info!("{kind} tokenizer with {} entries", tok.vocab_size());
    Ok(())
}

const MODEL_KEYS: [&str; 15] = [
    "arch",
    "embed_dim",
    "hidden_dim",
    "n_layers",
    "n_heads",
    "context",
    "head_dim",
    "cnn_kernel",
    "dropout_embedding",
    "dropout_input",
    "dropout_weight",
    "dropout_output",
    "dropout_attention",
    "dropout_residual",
    "dropout_scale",
];

fn model_fields(f: &mut Fields<'_>) -> (Arch, impl Fn(usize) -> ModelConfig) {
    let arch: Arch = f.get("arch", Arch::Causal);
    let d = ModelConfig::desk(arch, 0);
    let scale: f64 = f.get("dropout_scale", 1.0);
    let dd = DropoutConfig::default();
    let dropout = DropoutConfig {
        embedding: f.get("dropout_embedding", dd.embedding * scale),
        input: f.get("dropout_input", dd.input * scale),
        weight: f.get("dropout_weight", dd.weight * scale),
        output: f.get("dropout_output", dd.output * scale),
        attention: f.get("dropout_attention", dd.attention * scale),
        residual: f.get("dropout_residual", dd.residual * scale),
    };
    let base = ModelConfig {
        embed_dim: f.get("embed_dim", d.embed_dim),
        hidden_dim: f.get("hidden_dim", d.hidden_dim),
        n_layers: f.get("n_layers", d.n_layers),
        n_heads: f.get("n_heads", d.n_heads),
        context: f.get("context", d.context),
        head_dim: f.get("head_dim", d.head_dim),
        cnn_kernel: f.get("cnn_kernel", d.cnn_kernel),
        dropout,
        ..d
    };
    (arch, move |vocab_size| ModelConfig {
        vocab_size,
        ..base.clone()
    })
}

const CYCLE_KEYS: [&str; 9] = [
    "lr_max",
    "pct_start",
    "div_factor",
    "final_div_factor",
    "momentum_high",
    "momentum_low",
    "weight_decay",
    "clip",
    "batch_size",
];

fn cycle_fields(f: &mut Fields<'_>, lr_default: f64) -> (OneCycleConfig, AdamWConfig, f64) {
    let d = OneCycleConfig::new(lr_default, 1);
    let cycle = OneCycleConfig {
        lr_max: f.get("lr_max", d.lr_max),
        pct_start: f.get("pct_start", d.pct_start),
        div_factor: f.get("div_factor", d.div_factor),
        final_div_factor: f.get("final_div_factor", d.final_div_factor),
        momentum: (
            f.get("momentum_high", d.momentum.0),
            f.get("momentum_low", d.momentum.1),
        ),
        ..d
    };
    if let Err(e) = cycle.validate() {
        f.fail("lr_max", e.to_string());
    }
    let adam = AdamWConfig {
        weight_decay: f.get("weight_decay", AdamWConfig::default().weight_decay),
        ..AdamWConfig::default()
    };
    let clip = f.get("clip", 1.0);
    (cycle, adam, clip)
}

/// `pretrain` starts from a fresh model; `lm-finetune` continues from `init`.
fn language_model(cfg: &RunConfig, from_checkpoint: bool) -> Result<()> {
    let mut keys = vec![
        "tokenizer",
        "out",
        "log",
        "report",
        "epochs",
        "eval_every",
        "pieces",
    ];
    keys.extend(DATA_KEYS);
    keys.extend(CYCLE_KEYS);
    if from_checkpoint {
        keys.push("init");
    } else {
        keys.extend(MODEL_KEYS);
    }
    let mut f = cfg.fields(&keys);
    let (path, min, split_seed) = data_fields(&mut f);
    let tok_path = f.tokenizer_path("tokenizer");
    let init = from_checkpoint.then(|| f.input_path("init"));
    let (arch, make_config) = model_fields(&mut f);
    if !from_checkpoint {
        f.check(
            arch.supports_lm(),
            "arch",
            "this architecture has no language-model mode",
        );
    }
    let (cycle, adam, clip) = cycle_fields(&mut f, 3e-3);
    let epochs: usize = f.get("epochs", 1);
    f.check(epochs > 0, "epochs", "must be positive");
    let batch_size: usize = f.get("batch_size", 16);
    f.check(batch_size > 0, "batch_size", "must be positive");
    let eval_every = f.get("eval_every", 0);
    let pieces: Part = f.get("pieces", Part::All);
    f.check(
        matches!(pieces, Part::All | Part::Train),
        "pieces",
        "must be `all` or `train` (the classification train split)",
    );
    let out = f.output_path("out");
    let log_path = f.opt_output_path("log");
    let report = f.opt_output_path("report");
    f.finish()?;

    let tok = Tokenizer::load(&tok_path)?;
    let vocab_hash = tok.vocab().hash();
    let model = match init {
        Some(p) => {
            let ck = Checkpoint::load_for_vocab(&p, &vocab_hash)?;
            if ck.model.is_classifier() {
                return Err(stylus_core::Error::Config(
                    "`init` must be a language-model checkpoint".into(),
                )
                .into());
            }
            ck.model
        }
        None => Model::new(make_config(tok.vocab_size()).language_model(), cfg.seed)?,
    };
    let data = load_data(&path, min, split_seed)?;
    let pool = data.part(pieces)?;
    let lm_split = split_by_piece(&pool, SplitRatios::LANGUAGE_MODEL, split_seed)?;
    let window = model.config.context;
    let stream = |m: &Manifest| -> Result<Vec<Vec<u32>>> {
        let pages = tokenize_manifest(m, &tok, None)?;
        Ok(build_lm_stream(
            pages.iter().map(|p| p.ids.as_slice()),
            window,
        ))
    };
    let train = stream(&lm_split.train)?;
    let val = stream(&lm_split.val)?;
    log::info!(
        "{} training and {} validation windows of {window} tokens",
        train.len(),
        val.len()
    );
    let lm_cfg = LmTrainConfig {
        batch_size,
        epochs,
        cycle,
        adam,
        clip,
        eval_every,
        seed: cfg.seed,
        ..LmTrainConfig::default()
    };
    let result = pretrain_lm(model, &train, &val, &lm_cfg)?;
    let hash = cfg.hash();
    save_checkpoint(
        &out,
        &Checkpoint {
            model: result.model,
            vocab_hash,
            config_hash: hash.clone(),
            class_names: Vec::new(),
        },
    )?;
    if let Some(p) = log_path {
        write_log(&p, &hash, &result.log)?;
    }
    if let Some(p) = report {
        let m = meta(cfg, &pool)?;
        let ppl = result.best_val_ppl.unwrap_or(f64::NAN);
        write(&p, render_lm_report(&m, ppl, &result.val_trace))?;
    }
    if let Some(ppl) = result.best_val_ppl {
        log::info!("best validation perplexity {ppl:.3}");
    }
    Ok(())
}

fn finetune(cfg: &RunConfig) -> Result<()> {
    let mut keys = vec![
        "tokenizer",
        "init",
        "out",
        "log",
        "report",
        "fragment_length",
        "train_per_class",
        "val_per_class",
        "steps",
        "factor",
        "schedule",
    ];
    keys.extend(DATA_KEYS);
    keys.extend(CYCLE_KEYS);
    keys.extend(MODEL_KEYS);
    let mut f = cfg.fields(&keys);
    let (path, min, split_seed) = data_fields(&mut f);
    let tok_path = f.tokenizer_path("tokenizer");
    let init = f.opt_input_path("init");
    let (_, make_config) = model_fields(&mut f);
    let (cycle, adam, clip) = cycle_fields(&mut f, 2e-3);
    let length: usize = f.get("fragment_length", 64);
    if init.is_none() {
        let mc = make_config(0);
        f.check(
            !mc.arch.is_transformer() || mc.context >= length + 2,
            "context",
            "must hold a fragment plus <s> and </s>",
        );
    }
    let train_n: usize = f.get("train_per_class", 900);
    let val_n: usize = f.get("val_per_class", 300);
    let steps: usize = f.get("steps", 400);
    let batch_size: usize = f.get("batch_size", 32);
    let factor: f64 = f.get("factor", 2.6);
    f.check(length > 0, "fragment_length", "must be positive");
    f.check(train_n > 0, "train_per_class", "must be positive");
    f.check(steps > 0, "steps", "must be positive");
    f.check(batch_size > 0, "batch_size", "must be positive");
    f.check(factor > 1.0, "factor", "must exceed 1");
    let default_schedule = if init.is_some() {
        "gradual"
    } else {
        "unfrozen"
    };
    let schedule: String = f.get("schedule", default_schedule.to_string());
    f.check(
        schedule == "gradual" || schedule == "unfrozen",
        "schedule",
        "must be `gradual` or `unfrozen`",
    );
    let out = f.output_path("out");
    let log_path = f.opt_output_path("log");
    let report = f.opt_output_path("report");
    f.finish()?;

    let tok = Tokenizer::load(&tok_path)?;
    let vocab_hash = tok.vocab().hash();
    let data = load_data(&path, min, split_seed)?;
    let labels = LabelSet::from_manifest(&data.manifest);
    let pretrained = match &init {
        Some(p) => Some(Checkpoint::load_for_vocab(p, &vocab_hash)?.model),
        None => None,
    };
    let config = match &pretrained {
        Some(m) => m.config.clone(),
        None => make_config(tok.vocab_size()),
    }
    .classifier(labels.len());
    let model = init_classifier(config, pretrained.as_ref(), cfg.seed)?;
    let pages = |part: Part| -> Result<Vec<TokenizedPage>> {
        Ok(tokenize_manifest(&data.part(part)?, &tok, Some(&labels))?)
    };
    let train = sample_fragments(&pages(Part::Train)?, &labels, length, train_n, cfg.seed)?;
    let val = if val_n > 0 {
        sample_fragments(
            &pages(Part::Val)?,
            &labels,
            length,
            val_n,
            cfg.seed.wrapping_add(1),
        )?
    } else {
        Vec::new()
    };
    let mut plan = if schedule == "gradual" {
        FinetunePlan::gradual(model.n_groups(), cycle.lr_max, steps, cfg.seed)
    } else {
        FinetunePlan::unfrozen(model.n_groups(), cycle.lr_max, steps, cfg.seed)
    };
    plan.factor = factor;
    plan.batch_size = batch_size;
    plan.cycle = cycle;
    plan.adam = adam;
    plan.clip = clip;
    let result = finetune_classifier(model, &train, &val, &plan)?;
    let hash = cfg.hash();
    save_checkpoint(
        &out,
        &Checkpoint {
            model: result.model,
            vocab_hash,
            config_hash: hash.clone(),
            class_names: labels.names().to_vec(),
        },
    )?;
    if let Some(p) = log_path {
        write_log(&p, &hash, &result.log)?;
    }
    if let (Some(p), Some(r)) = (report, &result.val_report) {
        let m = meta(cfg, &data.part(Part::Val)?)?;
        write(&p, render_report(&m, r, labels.names()))?;
    }
    if let Some(r) = &result.val_report {
        log::info!(
            "validation accuracy {:.4}, macro-F1 {:.4}",
            r.accuracy,
            r.macro_f1
        );
    }
    Ok(())
}

/// Classifier checkpoint checked against the tokenizer's vocabulary.
fn load_classifier(ck_path: &Path, tok_path: &Path) -> Result<(Checkpoint, Tokenizer)> {
    let tok = Tokenizer::load(tok_path)?;
    let ck = Checkpoint::load_for_vocab(ck_path, &tok.vocab().hash())?;
    if !ck.model.is_classifier() {
        return Err(stylus_core::Error::Config("`checkpoint` is not a classifier".into()).into());
    }
    Ok((ck, tok))
}

fn crop_fields(f: &mut Fields<'_>) -> (usize, Option<bool>) {
    let crop: usize = f.get("crop", 64);
    f.check(crop > 0, "crop", "must be positive");
    (crop, f.opt("multicrop"))
}

fn evaluate(cfg: &RunConfig) -> Result<()> {
    let mut keys = vec![
        "checkpoint",
        "tokenizer",
        "split",
        "level",
        "fragment_length",
        "per_class",
        "crop",
        "multicrop",
        "report",
    ];
    keys.extend(DATA_KEYS);
    let mut f = cfg.fields(&keys);
    let (path, min, split_seed) = data_fields(&mut f);
    let ck_path = f.input_path("checkpoint");
    let tok_path = f.tokenizer_path("tokenizer");
    let part: Part = f.get("split", Part::Test);
    let level: String = f.get("level", "fragment".to_string());
    f.check(
        level == "fragment" || level == "page",
        "level",
        "must be `fragment` or `page`",
    );
    let length: usize = f.get("fragment_length", 64);
    let per_class: usize = f.get("per_class", 300);
    let (crop, multicrop) = crop_fields(&mut f);
    let report = f.output_path("report");
    f.finish()?;

    let (ck, tok) = load_classifier(&ck_path, &tok_path)?;
    let labels = LabelSet::new(ck.class_names.clone());
    let data = load_data(&path, min, split_seed)?;
    let manifest = data.part(part)?;
    let pages = tokenize_manifest(&manifest, &tok, Some(&labels))?;
    let model = &ck.model;
    let metrics = if level == "fragment" {
        let frags = sample_fragments(&pages, &labels, length, per_class, cfg.seed)?;
        evaluate_fragments(model, &frags, 64)?
    } else {
        let multicrop = multicrop.unwrap_or(model.config.arch.default_multicrop());
        let mut preds = Vec::new();
        let mut gold = Vec::new();
        for p in pages.iter().filter(|p| !p.ids.is_empty()) {
            preds.push(argmax(&predict_page(model, &p.ids, crop, multicrop)?.probs));
            gold.push(p.label.expect("labels attached above"));
        }
        compute_metrics(&preds, &gold, labels.len())?
    };
    let m = meta(cfg, &manifest)?;
    write(&report, render_report(&m, &metrics, labels.names()))?;
    log::info!(
        "accuracy {:.4}, macro-F1 {:.4}",
        metrics.accuracy,
        metrics.macro_f1
    );
    Ok(())
}

fn predict(cfg: &RunConfig) -> Result<()> {
    let mut keys = vec!["checkpoint", "tokenizer", "crop", "multicrop", "out"];
    keys.extend(DATA_KEYS);
    let mut f = cfg.fields(&keys);
    let (path, min, split_seed) = data_fields(&mut f);
    let ck_path = f.input_path("checkpoint");
    let tok_path = f.tokenizer_path("tokenizer");
    let (crop, multicrop) = crop_fields(&mut f);
    let out = f.output_path("out");
    f.finish()?;

    let (ck, tok) = load_classifier(&ck_path, &tok_path)?;
    let multicrop = multicrop.unwrap_or(ck.model.config.arch.default_multicrop());
    let data = load_data(&path, min, split_seed)?;
    let mut rows = Vec::new();
    for p in tokenize_manifest(&data.manifest, &tok, None)? {
        if p.ids.is_empty() {
            log::warn!("page {} has no tokens; skipped", p.record.page_id());
            continue;
        }
        rows.push((
            p.record.page_id(),
            predict_page(&ck.model, &p.ids, crop, multicrop)?,
        ));
    }
    write(
        &out,
        render_predictions(&cfg.hash(), &ck.class_names, &rows),
    )
}

fn embed(cfg: &RunConfig) -> Result<()> {
    let mut keys = vec!["checkpoint", "tokenizer", "out"];
    keys.extend(DATA_KEYS);
    let mut f = cfg.fields(&keys);
    let (path, min, split_seed) = data_fields(&mut f);
    let ck_path = f.input_path("checkpoint");
    let tok_path = f.tokenizer_path("tokenizer");
    let out = f.output_path("out");
    f.finish()?;

    let (ck, tok) = load_classifier(&ck_path, &tok_path)?;
    let data = load_data(&path, min, split_seed)?;
    let mut rows = Vec::new();
    for p in tokenize_manifest(&data.manifest, &tok, None)? {
        if p.ids.is_empty() {
            log::warn!("page {} has no tokens; skipped", p.record.page_id());
            continue;
        }
        rows.push(extract_embedding(&ck.model, &p.ids, &p.record.page_id())?);
    }
    write(&out, render_embeddings(&cfg.hash(), &rows))
}

//! Flat `key = value` run configs with per-stage `[section]`s.
//!
//! Keys before the first section are shared by every stage; keys inside a
//! section apply only to that stage and win over shared ones. Overrides
//! from the command line win over both.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Stage {
    Encode,
    TrainTokenizer,
    Pretrain,
    LmFinetune,
    Finetune,
    Evaluate,
    Predict,
    Embed,
    Synth,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Encode,
        Stage::TrainTokenizer,
        Stage::Pretrain,
        Stage::LmFinetune,
        Stage::Finetune,
        Stage::Evaluate,
        Stage::Predict,
        Stage::Embed,
        Stage::Synth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Encode => "encode",
            Stage::TrainTokenizer => "train-tokenizer",
            Stage::Pretrain => "pretrain",
            Stage::LmFinetune => "lm-finetune",
            Stage::Finetune => "finetune",
            Stage::Evaluate => "evaluate",
            Stage::Predict => "predict",
            Stage::Embed => "embed",
            Stage::Synth => "synth",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One problem with one config field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid config")]
    Fields(Vec<FieldError>),
}

/// Parsed config file: shared keys plus one map per section.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigFile {
    pub shared: BTreeMap<String, String>,
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut file = ConfigFile::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| ConfigError::Syntax {
                line: i + 1,
                message,
            };
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| syntax(format!("unterminated section header `{line}`")))?
                    .trim();
                if !Stage::ALL.iter().any(|s| s.name() == name) {
                    return Err(syntax(format!("unknown stage section `[{name}]`")));
                }
                file.sections.entry(name.to_string()).or_default();
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(syntax("empty key".into()));
            }
            let map = match &section {
                Some(s) => file.sections.get_mut(s).expect("section inserted above"),
                None => &mut file.shared,
            };
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(syntax(format!("duplicate key `{k}`")));
            }
        }
        Ok(file)
    }
}

/// The effective settings of one stage run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub stage: Stage,
    pub seed: u64,
    /// Relative paths resolve against this directory (the config's own).
    pub base_dir: PathBuf,
    pub values: BTreeMap<String, String>,
    /// Keys set in the stage's own section or by an override.
    pub local: BTreeSet<String>,
}

impl RunConfig {
    pub fn load(
        path: &Path,
        stage: Stage,
        seed: Option<u64>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(&text, base, stage, seed, overrides)
    }

    pub fn from_text(
        text: &str,
        base_dir: PathBuf,
        stage: Stage,
        seed: Option<u64>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let file = ConfigFile::parse(text)?;
        let mut values = file.shared.clone();
        let mut local = BTreeSet::new();
        if let Some(sec) = file.sections.get(stage.name()) {
            for (k, v) in sec {
                values.insert(k.clone(), v.clone());
                local.insert(k.clone());
            }
        }
        let mut errors = Vec::new();
        for o in overrides {
            match o.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    values.insert(k.trim().to_string(), v.trim().to_string());
                    local.insert(k.trim().to_string());
                }
                _ => errors.push(FieldError {
                    field: "--override".into(),
                    message: format!("expected `key=value`, got `{o}`"),
                }),
            }
        }
        let seed = match seed {
            Some(s) => Some(s),
            None => match values.get("seed") {
                Some(v) => match v.parse::<u64>() {
                    Ok(s) => Some(s),
                    Err(_) => {
                        errors.push(FieldError {
                            field: "seed".into(),
                            message: format!("expected an unsigned integer, got `{v}`"),
                        });
                        None
                    }
                },
                None => {
                    errors.push(FieldError {
                        field: "seed".into(),
                        message: "required (set `seed` in the config or pass --seed)".into(),
                    });
                    None
                }
            },
        };
        if !errors.is_empty() {
            return Err(ConfigError::Fields(errors));
        }
        let seed = seed.expect("seed checked above");
        values.insert("seed".into(), seed.to_string());
        Ok(RunConfig {
            stage,
            seed,
            base_dir,
            values,
            local,
        })
    }

    /// Hex digest over the stage name and every effective key, in key order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.stage.name().as_bytes());
        h.update(b"\n");
        for (k, v) in &self.values {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn fields(&self, known: &[&str]) -> Fields<'_> {
        let mut errors = Vec::new();
        for k in &self.local {
            if k != "seed" && !known.contains(&k.as_str()) {
                errors.push(FieldError {
                    field: k.clone(),
                    message: format!("unknown key for stage `{}`", self.stage),
                });
            }
        }
        Fields { cfg: self, errors }
    }
}

/// Typed field access that collects every problem before failing.
pub struct Fields<'a> {
    cfg: &'a RunConfig,
    errors: Vec<FieldError>,
}

impl Fields<'_> {
    pub fn fail(&mut self, field: &str, message: impl Into<String>) {
        self.errors.push(FieldError {
            field: field.to_string(),
            message: message.into(),
        });
    }

    pub fn has(&self, key: &str) -> bool {
        self.cfg.values.contains_key(key)
    }

    fn raw(&mut self, key: &str) -> Option<&str> {
        self.cfg.values.get(key).map(String::as_str)
    }

    pub fn opt<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key)?.to_string();
        match raw.parse::<T>() {
            Ok(v) => Some(v),
            Err(e) => {
                self.fail(key, format!("cannot parse `{raw}`: {e}"));
                None
            }
        }
    }

    pub fn get<T: FromStr>(&mut self, key: &str, default: T) -> T
    where
        T::Err: fmt::Display,
    {
        self.opt(key).unwrap_or(default)
    }

    fn resolve(&self, raw: &str) -> PathBuf {
        let p = PathBuf::from(raw);
        if p.is_absolute() {
            p
        } else {
            self.cfg.base_dir.join(p)
        }
    }

    /// A path that must already exist.
    pub fn input_path(&mut self, key: &str) -> PathBuf {
        match self.raw(key).map(str::to_string) {
            None => {
                self.fail(key, "required");
                PathBuf::new()
            }
            Some(raw) => {
                let p = self.resolve(&raw);
                if !p.exists() {
                    self.fail(key, format!("path `{}` does not exist", p.display()));
                }
                p
            }
        }
    }

    pub fn opt_input_path(&mut self, key: &str) -> Option<PathBuf> {
        if self.has(key) {
            Some(self.input_path(key))
        } else {
            None
        }
    }

    /// A tokenizer prefix: `<prefix>.meta` must exist.
    pub fn tokenizer_path(&mut self, key: &str) -> PathBuf {
        match self.raw(key).map(str::to_string) {
            None => {
                self.fail(key, "required");
                PathBuf::new()
            }
            Some(raw) => {
                let p = self.resolve(&raw);
                let meta = stylus_core::tokenizer::with_ext(&p, "meta");
                if !meta.exists() {
                    self.fail(key, format!("tokenizer `{}` not found", meta.display()));
                }
                p
            }
        }
    }

    /// An output path; its parent directory is created when the run starts.
    pub fn output_path(&mut self, key: &str) -> PathBuf {
        match self.raw(key).map(str::to_string) {
            None => {
                self.fail(key, "required");
                PathBuf::new()
            }
            Some(raw) => self.resolve(&raw),
        }
    }

    pub fn opt_output_path(&mut self, key: &str) -> Option<PathBuf> {
        self.raw(key)
            .map(str::to_string)
            .map(|raw| self.resolve(&raw))
    }

    pub fn check(&mut self, ok: bool, field: &str, message: &str) {
        if !ok {
            self.fail(field, message);
        }
    }

    pub fn finish(self) -> Result<(), ConfigError> {
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Fields(self.errors))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "seed = 3\nmanifest = data/m.tsv  # shared\n\n[pretrain]\nepochs = 2\n[finetune]\nepochs = 5\n";

    #[test]
    fn sections_override_shared_keys() {
        let cfg =
            RunConfig::from_text(TEXT, PathBuf::from("/x"), Stage::Finetune, None, &[]).unwrap();
        assert_eq!(cfg.values["epochs"], "5");
        assert_eq!(cfg.values["manifest"], "data/m.tsv");
        assert_eq!(cfg.seed, 3);
        let cfg =
            RunConfig::from_text(TEXT, PathBuf::from("/x"), Stage::Pretrain, None, &[]).unwrap();
        assert_eq!(cfg.values["epochs"], "2");
    }

    #[test]
    fn flags_beat_file_values() {
        let cfg = RunConfig::from_text(
            TEXT,
            PathBuf::from("/x"),
            Stage::Pretrain,
            Some(9),
            &["epochs=7".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.values["epochs"], "7");
        assert_eq!(cfg.values["seed"], "9");
    }

    #[test]
    fn seed_is_mandatory() {
        let err =
            RunConfig::from_text("[synth]\n", PathBuf::new(), Stage::Synth, None, &[]).unwrap_err();
        match err {
            ConfigError::Fields(f) => assert_eq!(f[0].field, "seed"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_tracks_effective_values() {
        let a = RunConfig::from_text(TEXT, PathBuf::new(), Stage::Pretrain, None, &[]).unwrap();
        let b = RunConfig::from_text(
            TEXT,
            PathBuf::new(),
            Stage::Pretrain,
            None,
            &["epochs=3".into()],
        )
        .unwrap();
        let c = RunConfig::from_text(
            TEXT,
            PathBuf::new(),
            Stage::Finetune,
            None,
            &["epochs=2".into()],
        )
        .unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        // Same values, different stage.
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn syntax_errors_name_the_line() {
        assert!(matches!(
            ConfigFile::parse("seed = 1\nnonsense\n"),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            ConfigFile::parse("[nope]\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            ConfigFile::parse("a = 1\na = 2\n"),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
    }

    #[test]
    fn field_errors_are_collected() {
        let cfg = RunConfig::from_text(
            "seed = 1\n[pretrain]\nepochs = two\ntypo = 1\n",
            PathBuf::from("/nonexistent"),
            Stage::Pretrain,
            None,
            &[],
        )
        .unwrap();
        let mut f = cfg.fields(&["epochs", "manifest"]);
        let _: usize = f.get("epochs", 1);
        let _ = f.input_path("manifest");
        let ConfigError::Fields(errs) = f.finish().unwrap_err() else {
            panic!("expected field errors")
        };
        let names: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(names, ["typo", "epochs", "manifest"]);
    }
}

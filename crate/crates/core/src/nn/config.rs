use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    /// Weight-dropped LSTM language model.
    Lstm,
    /// Decoder-only transformer with masked self-attention.
    Causal,
    /// Bidirectional transformer trained on corrupted inputs.
    Masked,
    /// Convolutional baseline: local features pooled over time.
    Cnn,
}

impl Arch {
    pub fn is_transformer(self) -> bool {
        matches!(self, Arch::Causal | Arch::Masked)
    }

    pub fn supports_lm(self) -> bool {
        !matches!(self, Arch::Cnn)
    }

    /// Whether classifier inputs must be wrapped in `<s> ... </s>`.
    pub fn needs_specials(self) -> bool {
        self.is_transformer()
    }

    /// Default page inference: single pass for the CNN, crops for the rest.
    pub fn default_multicrop(self) -> bool {
        !matches!(self, Arch::Cnn)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Lstm => "lstm",
            Arch::Causal => "causal",
            Arch::Masked => "masked",
            Arch::Cnn => "cnn",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(Arch::Lstm),
            "causal" => Ok(Arch::Causal),
            "masked" => Ok(Arch::Masked),
            "cnn" => Ok(Arch::Cnn),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutConfig {
    /// Drops whole embedding rows (LSTM).
    pub embedding: f64,
    /// Locked dropout on the embedded inputs (LSTM).
    pub input: f64,
    /// DropConnect on the recurrent weights (LSTM).
    pub weight: f64,
    /// Dropout on the final hidden states (all archs).
    pub output: f64,
    /// Dropout on attention weights.
    pub attention: f64,
    /// Dropout on embeddings and residual branches.
    pub residual: f64,
}

impl DropoutConfig {
    pub const NONE: DropoutConfig = DropoutConfig {
        embedding: 0.0,
        input: 0.0,
        weight: 0.0,
        output: 0.0,
        attention: 0.0,
        residual: 0.0,
    };

    fn rates(&self) -> [f64; 6] {
        [
            self.embedding,
            self.input,
            self.weight,
            self.output,
            self.attention,
            self.residual,
        ]
    }
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig {
            embedding: 0.02,
            input: 0.25,
            weight: 0.2,
            output: 0.1,
            attention: 0.1,
            residual: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub arch: Arch,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Longest input the model accepts, specials included.
    pub context: usize,
    pub dropout: DropoutConfig,
    /// Width of the hidden dense layer in the LSTM classifier head.
    pub head_dim: usize,
    pub cnn_kernel: usize,
    /// `Some` for classifiers, `None` for language models.
    pub n_classes: Option<usize>,
}

impl ModelConfig {
    /// Desk-scale defaults: two layers of width 128, context for a
    /// 128-token fragment plus `<s>`/`</s>`.
    pub fn desk(arch: Arch, vocab_size: usize) -> Self {
        ModelConfig {
            arch,
            vocab_size,
            embed_dim: 128,
            hidden_dim: 128,
            n_layers: 2,
            n_heads: 4,
            context: 130,
            dropout: DropoutConfig::default(),
            head_dim: 50,
            cnn_kernel: 3,
            n_classes: None,
        }
    }

    pub fn classifier(mut self, n_classes: usize) -> Self {
        self.n_classes = Some(n_classes);
        self
    }

    pub fn language_model(mut self) -> Self {
        self.n_classes = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 6 {
            return bad(format!("vocab_size {} is too small", self.vocab_size));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.n_layers == 0 || self.context == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.arch.is_transformer() {
            if self.embed_dim != self.hidden_dim {
                return bad("transformers need embed_dim == hidden_dim".into());
            }
            if self.n_heads == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
                return bad(format!(
                    "n_heads {} must divide hidden_dim {}",
                    self.n_heads, self.hidden_dim
                ));
            }
        }
        if self.arch == Arch::Cnn {
            if self.cnn_kernel == 0 {
                return bad("cnn_kernel must be positive".into());
            }
            if self.n_classes.is_none() {
                return bad("the CNN baseline has no language-model mode".into());
            }
        }
        if self.arch == Arch::Lstm && self.n_classes.is_some() && self.head_dim == 0 {
            return bad("head_dim must be positive".into());
        }
        if let Some(c) = self.n_classes {
            if c < 2 {
                return bad(format!("a classifier needs at least 2 classes, got {c}"));
            }
        }
        if self.dropout.rates().iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad("dropout rates must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Width of the vector entering the final classification layer.
    pub fn feature_dim(&self) -> usize {
        match self.arch {
            Arch::Lstm => self.head_dim,
            Arch::Causal | Arch::Masked => self.hidden_dim,
            Arch::Cnn => self.hidden_dim,
        }
    }

    /// Width of the LSTM's final layer (equal to `embed_dim` so the decoder
    /// can share the embedding matrix).
    pub fn lstm_output_dim(&self) -> usize {
        self.embed_dim
    }

    /// Smallest token count the CNN accepts without padding.
    pub fn cnn_min_len(&self) -> usize {
        self.n_layers * (self.cnn_kernel - 1) + 1
    }

    /// `key = value` lines describing the architecture.
    pub fn to_header(&self) -> Vec<(String, String)> {
        let d = &self.dropout;
        vec![
            ("arch".into(), self.arch.to_string()),
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("hidden_dim".into(), self.hidden_dim.to_string()),
            ("n_layers".into(), self.n_layers.to_string()),
            ("n_heads".into(), self.n_heads.to_string()),
            ("context".into(), self.context.to_string()),
            ("head_dim".into(), self.head_dim.to_string()),
            ("cnn_kernel".into(), self.cnn_kernel.to_string()),
            (
                "n_classes".into(),
                self.n_classes.map_or("none".to_string(), |c| c.to_string()),
            ),
            (
                "dropout".into(),
                format!(
                    "{},{},{},{},{},{}",
                    d.embedding, d.input, d.weight, d.output, d.attention, d.residual
                ),
            ),
        ]
    }

    pub fn from_header(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let field =
            |k: &str| get(k).ok_or_else(|| Error::Config(format!("checkpoint header lacks `{k}`")));
        let num = |k: &str| -> Result<usize> {
            field(k)?
                .parse()
                .map_err(|_| Error::Config(format!("checkpoint header `{k}` is not a number")))
        };
        let drops: Vec<f64> = field("dropout")?
            .split(',')
            .map(|x| {
                x.parse()
                    .map_err(|_| Error::Config("bad dropout header".into()))
            })
            .collect::<Result<_>>()?;
        if drops.len() != 6 {
            return Err(Error::Config("bad dropout header".into()));
        }
        let n_classes = match field("n_classes")?.as_str() {
            "none" => None,
            s => Some(
                s.parse()
                    .map_err(|_| Error::Config("bad n_classes header".into()))?,
            ),
        };
        let cfg = ModelConfig {
            arch: field("arch")?.parse()?,
            vocab_size: num("vocab_size")?,
            embed_dim: num("embed_dim")?,
            hidden_dim: num("hidden_dim")?,
            n_layers: num("n_layers")?,
            n_heads: num("n_heads")?,
            context: num("context")?,
            head_dim: num("head_dim")?,
            cnn_kernel: num("cnn_kernel")?,
            n_classes,
            dropout: DropoutConfig {
                embedding: drops[0],
                input: drops[1],
                weight: drops[2],
                output: drops[3],
                attention: drops[4],
                residual: drops[5],
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::desk(Arch::Causal, 300).validate().is_ok());
        let mut c = ModelConfig::desk(Arch::Causal, 300);
        c.n_heads = 3;
        assert!(c.validate().is_err());
        assert!(ModelConfig::desk(Arch::Cnn, 300).validate().is_err());
        assert!(ModelConfig::desk(Arch::Cnn, 300)
            .classifier(9)
            .validate()
            .is_ok());
        assert!(ModelConfig::desk(Arch::Lstm, 300)
            .classifier(1)
            .validate()
            .is_err());
    }

    #[test]
    fn header_round_trip() {
        let c = ModelConfig::desk(Arch::Masked, 777).classifier(9);
        let header = c.to_header();
        let back = ModelConfig::from_header(|k| {
            header
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
        })
        .unwrap();
        assert_eq!(back, c);
    }
}

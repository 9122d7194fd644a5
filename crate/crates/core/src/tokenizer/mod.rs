//! Tokenizers turning bootleg scores into id sequences.

mod bpe;
mod vocab;
mod word;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use bpe::{
    bpe_decode, bpe_encode, byte_id, train_bpe, BpeTokenizer, Merge, MergeTable, MIN_BPE_VOCAB,
};
pub use vocab::{
    from_hex, is_special, to_hex, Token, Vocabulary, BOS, EOS, MASK, N_SPECIALS, PAD,
    SPECIAL_NAMES, UNK,
};
pub use word::{
    build_word_vocab, column_to_word, word_to_column, WordTokenizer, DEFAULT_MAX_VOCAB,
};

use crate::bootleg::BootlegScore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenizerKind {
    Word,
    Bpe,
}

impl fmt::Display for TokenizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizerKind::Word => "word",
            TokenizerKind::Bpe => "bpe",
        })
    }
}

impl FromStr for TokenizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(TokenizerKind::Word),
            "bpe" => Ok(TokenizerKind::Bpe),
            other => Err(Error::Config(format!("unknown tokenizer kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub kind: TokenizerKind,
}

/// Wraps a sequence as `<s> ... </s>`.
pub fn add_specials(seq: &TokenSequence) -> TokenSequence {
    let mut ids = Vec::with_capacity(seq.ids.len() + 2);
    ids.push(BOS);
    ids.extend_from_slice(&seq.ids);
    ids.push(EOS);
    TokenSequence {
        ids,
        kind: seq.kind,
    }
}

/// Packed columns of a score, 8 bytes per column.
pub fn bytes_of(score: &BootlegScore) -> Vec<u8> {
    score.to_byte_stream()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tokenizer {
    Word(WordTokenizer),
    Bpe(BpeTokenizer),
}

impl Tokenizer {
    pub fn kind(&self) -> TokenizerKind {
        match self {
            Tokenizer::Word(_) => TokenizerKind::Word,
            Tokenizer::Bpe(_) => TokenizerKind::Bpe,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            Tokenizer::Word(t) => t.vocab(),
            Tokenizer::Bpe(t) => t.vocab(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab().len()
    }

    pub fn encode_score(&self, score: &BootlegScore) -> TokenSequence {
        let ids = match self {
            Tokenizer::Word(t) => t.encode(score),
            Tokenizer::Bpe(t) => t.encode(&bytes_of(score)),
        };
        TokenSequence {
            ids,
            kind: self.kind(),
        }
    }

    /// Trains a tokenizer of the given kind over a set of scores.
    pub fn train(kind: TokenizerKind, scores: &[BootlegScore], vocab_size: usize) -> Result<Self> {
        match kind {
            TokenizerKind::Word => {
                let cols = scores.iter().flat_map(|s| s.columns.iter().copied());
                Ok(Tokenizer::Word(build_word_vocab(cols, vocab_size)?))
            }
            TokenizerKind::Bpe => {
                let corpus: Vec<Vec<u8>> = scores.iter().map(bytes_of).collect();
                if corpus.iter().all(Vec::is_empty) {
                    return Err(Error::EmptyCorpus);
                }
                Ok(Tokenizer::Bpe(BpeTokenizer::train(&corpus, vocab_size)?))
            }
        }
    }

    /// Writes `<prefix>.vocab`, `<prefix>.merges` (BPE only) and `<prefix>.meta`.
    pub fn save(&self, prefix: &Path, config_hash: &str) -> Result<()> {
        std::fs::write(with_ext(prefix, "vocab"), self.vocab().to_text())?;
        if let Tokenizer::Bpe(t) = self {
            std::fs::write(with_ext(prefix, "merges"), t.merges().to_text(t.vocab()))?;
        }
        let meta = format!(
            "kind = {}\nvocab_size = {}\nvocab_hash = {}\nconfig_hash = {config_hash}\n",
            self.kind(),
            self.vocab_size(),
            self.vocab().hash()
        );
        std::fs::write(with_ext(prefix, "meta"), meta)?;
        Ok(())
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let meta = std::fs::read_to_string(with_ext(prefix, "meta"))?;
        let kind = meta
            .lines()
            .find_map(|l| l.strip_prefix("kind = "))
            .ok_or_else(|| Error::Config("tokenizer meta lacks `kind`".into()))?
            .parse::<TokenizerKind>()?;
        let vocab = Vocabulary::parse(&std::fs::read_to_string(with_ext(prefix, "vocab"))?)?;
        match kind {
            TokenizerKind::Word => Ok(Tokenizer::Word(WordTokenizer::from_vocab(vocab)?)),
            TokenizerKind::Bpe => {
                let merges = MergeTable::parse(
                    &std::fs::read_to_string(with_ext(prefix, "merges"))?,
                    &vocab,
                )?;
                Ok(Tokenizer::Bpe(BpeTokenizer::from_parts(vocab, merges)?))
            }
        }
    }
}

pub fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootleg::BootlegColumn;

    #[test]
    fn specials_wrap() {
        let seq = |ids: Vec<u32>| TokenSequence {
            ids,
            kind: TokenizerKind::Bpe,
        };
        assert_eq!(add_specials(&seq(vec![])).ids, vec![BOS, EOS]);
        assert_eq!(add_specials(&seq(vec![7])).ids, vec![BOS, 7, EOS]);
        assert_eq!(add_specials(&seq(vec![9; 40])).ids.len(), 42);
    }

    #[test]
    fn score_bytes() {
        assert!(bytes_of(&BootlegScore::default()).is_empty());
        let c = BootlegColumn::from_positions([0, 5]).unwrap();
        assert_eq!(
            bytes_of(&BootlegScore::new(vec![c])),
            vec![0x21, 0, 0, 0, 0, 0, 0, 0]
        );
        let d = BootlegColumn::from_positions([8]).unwrap();
        let b = bytes_of(&BootlegScore::new(vec![c, d]));
        assert_eq!(b.len(), 16);
        assert_eq!(&b[8..], &[0, 1, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn save_load_both_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let cols: Vec<BootlegColumn> = (0..40)
            .map(|i| BootlegColumn::from_positions([i % 7, 20 + i % 3]).unwrap())
            .collect();
        let scores = vec![
            BootlegScore::new(cols.clone()),
            BootlegScore::new(cols[5..].to_vec()),
        ];
        for kind in [TokenizerKind::Word, TokenizerKind::Bpe] {
            let tok = Tokenizer::train(kind, &scores, 300).unwrap();
            let prefix = dir.path().join(format!("tok-{kind}"));
            tok.save(&prefix, "cafe").unwrap();
            let back = Tokenizer::load(&prefix).unwrap();
            assert_eq!(back, tok);
            assert_eq!(back.encode_score(&scores[0]), tok.encode_score(&scores[0]));
        }
    }
}

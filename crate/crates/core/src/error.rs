use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("staff position {0} is outside 0..=61")]
    InvalidPosition(u32),
    #[error("corrupt column word {0:#018x}: reserved bits 62-63 are set")]
    CorruptColumn(u64),
    #[error("bad magic bytes in {what}")]
    BadMagic { what: &'static str },
    #[error("unsupported {what} version {version}")]
    UnsupportedVersion { what: &'static str, version: u32 },
    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("no staff position for {hand:?}-hand pitch {pitch}")]
    UnmappedPitch {
        hand: crate::bootleg::Hand,
        pitch: u8,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid token id {0}")]
    InvalidTokenId(u32),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("class `{0}` has no page long enough to sample a fragment")]
    InsufficientData(String),
    #[error("sequence of length {len} exceeds model context {context}")]
    ContextOverflow { len: usize, context: usize },
    #[error("input contract violated: {0}")]
    InputContract(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("no target positions in batch")]
    NoTargets,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("learning-rate range unusable: {0}")]
    UnusableRange(String),
    #[error("vocabulary hash mismatch: checkpoint {expected}, tokenizer {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Io(#[from] io::Error),
}

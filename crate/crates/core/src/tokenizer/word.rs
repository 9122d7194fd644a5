//! Word-level tokenization: every bootleg column is one word.

use std::collections::HashMap;

use super::vocab::{Vocabulary, N_SPECIALS, UNK};
use crate::bootleg::{BootlegColumn, BootlegScore, N_POSITIONS};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_VOCAB: usize = 30_000;

/// Renders a column as 62 characters, position 0 first.
pub fn column_to_word(col: BootlegColumn) -> String {
    (0..N_POSITIONS)
        .map(|p| if col.contains(p) { '1' } else { '0' })
        .collect()
}

pub fn word_to_column(word: &str) -> Result<BootlegColumn> {
    if word.len() != N_POSITIONS as usize {
        return Err(Error::Config(format!(
            "word must have {N_POSITIONS} characters, got {}",
            word.len()
        )));
    }
    let mut bits = 0u64;
    for (p, ch) in word.bytes().enumerate() {
        match ch {
            b'1' => bits |= 1 << p,
            b'0' => {}
            other => {
                return Err(Error::Config(format!(
                    "invalid word character `{}`",
                    other as char
                )))
            }
        }
    }
    BootlegColumn::from_bits(bits)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordTokenizer {
    vocab: Vocabulary,
}

impl WordTokenizer {
    pub fn from_vocab(vocab: Vocabulary) -> Result<Self> {
        for id in N_SPECIALS as u32..vocab.len() as u32 {
            if vocab.bytes_of(id).map(<[u8]>::len) != Some(8) {
                return Err(Error::Config(format!(
                    "word token {id} is not an 8-byte column"
                )));
            }
        }
        Ok(WordTokenizer { vocab })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn encode_column(&self, col: BootlegColumn) -> u32 {
        self.vocab.id_of(&col.pack()).unwrap_or(UNK)
    }

    pub fn encode(&self, score: &BootlegScore) -> Vec<u32> {
        score
            .columns
            .iter()
            .map(|&c| self.encode_column(c))
            .collect()
    }

    pub fn decode_column(&self, id: u32) -> Option<BootlegColumn> {
        let bytes: [u8; 8] = self.vocab.bytes_of(id)?.try_into().ok()?;
        BootlegColumn::unpack(bytes).ok()
    }
}

/// Keeps the `max_size - 5` most frequent columns; ties go to the column seen first.
pub fn build_word_vocab<I>(corpus: I, max_size: usize) -> Result<WordTokenizer>
where
    I: IntoIterator<Item = BootlegColumn>,
{
    if max_size < N_SPECIALS {
        return Err(Error::Config(format!(
            "max vocabulary size {max_size} cannot hold the {N_SPECIALS} special tokens"
        )));
    }
    // column -> (count, first occurrence)
    let mut stats: HashMap<BootlegColumn, (u64, usize)> = HashMap::new();
    let mut seen = 0usize;
    for col in corpus {
        let entry = stats.entry(col).or_insert((0, seen));
        entry.0 += 1;
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(BootlegColumn, u64, usize)> = stats
        .into_iter()
        .map(|(c, (n, first))| (c, n, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(max_size - N_SPECIALS);

    let mut vocab = Vocabulary::with_specials();
    for (col, _, _) in ranked {
        vocab.insert(col.pack().to_vec());
    }
    Ok(WordTokenizer { vocab })
}

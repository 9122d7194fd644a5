use std::collections::HashMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const MASK: u32 = 4;
pub const N_SPECIALS: usize = 5;
pub const SPECIAL_NAMES: [&str; N_SPECIALS] = ["<pad>", "<s>", "</s>", "<unk>", "<mask>"];

pub fn is_special(id: u32) -> bool {
    (id as usize) < N_SPECIALS
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Special(u32),
    Bytes(Vec<u8>),
}

/// Dense id space: specials at 0..5, then byte-string tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<Token>,
    token_to_id: HashMap<Vec<u8>, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::with_specials()
    }
}

impl Vocabulary {
    pub fn with_specials() -> Self {
        Vocabulary {
            id_to_token: (0..N_SPECIALS as u32).map(Token::Special).collect(),
            token_to_id: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Returns the id of `bytes`, appending it if new.
    pub fn insert(&mut self, bytes: Vec<u8>) -> u32 {
        if let Some(&id) = self.token_to_id.get(&bytes) {
            return id;
        }
        let id = self.id_to_token.len() as u32;
        self.token_to_id.insert(bytes.clone(), id);
        self.id_to_token.push(Token::Bytes(bytes));
        id
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<u32> {
        self.token_to_id.get(bytes).copied()
    }

    pub fn token(&self, id: u32) -> Option<&Token> {
        self.id_to_token.get(id as usize)
    }

    pub fn bytes_of(&self, id: u32) -> Option<&[u8]> {
        match self.token(id)? {
            Token::Bytes(b) => Some(b),
            Token::Special(_) => None,
        }
    }

    /// `<id>\t<hex-or-special-name>` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, tok) in self.id_to_token.iter().enumerate() {
            match tok {
                Token::Special(s) => writeln!(out, "{id}\t{}", SPECIAL_NAMES[*s as usize]),
                Token::Bytes(b) => writeln!(out, "{id}\t{}", to_hex(b)),
            }
            .unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut vocab = Vocabulary {
            id_to_token: Vec::new(),
            token_to_id: HashMap::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let bad = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let (id, tok) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("expected `<id>\\t<token>`, got `{line}`")))?;
            let id: usize = id.parse().map_err(|_| bad(format!("bad id `{id}`")))?;
            if id != vocab.id_to_token.len() {
                return Err(bad(format!(
                    "ids must be dense; expected {}, got {id}",
                    vocab.len()
                )));
            }
            if id < N_SPECIALS {
                if tok != SPECIAL_NAMES[id] {
                    return Err(bad(format!("id {id} must be {}", SPECIAL_NAMES[id])));
                }
                vocab.id_to_token.push(Token::Special(id as u32));
            } else {
                let bytes = from_hex(tok).ok_or_else(|| bad(format!("bad hex token `{tok}`")))?;
                if vocab.token_to_id.insert(bytes.clone(), id as u32).is_some() {
                    return Err(bad(format!("duplicate token `{tok}`")));
                }
                vocab.id_to_token.push(Token::Bytes(bytes));
            }
        }
        if vocab.len() < N_SPECIALS {
            return Err(Error::Parse {
                line: vocab.len() + 1,
                message: "vocabulary is missing reserved special tokens".into(),
            });
        }
        Ok(vocab)
    }

    /// SHA-256 over the serialized vocabulary, lowercase hex.
    pub fn hash(&self) -> String {
        to_hex(&Sha256::digest(self.to_text().as_bytes()))
    }
}

pub fn to_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

pub fn from_hex(s: &str) -> Option<Vec<u8>> {
    if s.is_empty() || !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| {
            let pair = s.get(i..i + 2)?;
            if pair
                .bytes()
                .all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
            {
                u8::from_str_radix(pair, 16).ok()
            } else {
                None
            }
        })
        .collect()
}

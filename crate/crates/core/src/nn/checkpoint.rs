//! Named-tensor checkpoint container.
//!
//! Layout: `STCK`, version byte, reserved byte, u32 header length, UTF-8
//! header of `key=value` lines, u32 tensor count, then per tensor a u16 name
//! length, the name, u32 rows, u32 cols and `rows × cols` little-endian f32.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::model::Model;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STCK";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab_hash: String,
    pub config_hash: String,
    /// Label names in class-id order; empty for language models.
    pub class_names: Vec<String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        for (k, v) in self.model.config.to_header() {
            header.push_str(&format!("{k}={v}\n"));
        }
        header.push_str(&format!("vocab_hash={}\n", self.vocab_hash));
        header.push_str(&format!("config_hash={}\n", self.config_hash));
        header.push_str(&format!("classes={}\n", self.class_names.join("\t")));

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.push(0);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.model.params.len() as u32).to_le_bytes());
        for (_, p) in self.model.params.iter() {
            out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
            for &x in p.value.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 6];
        read_exact(&mut r, &mut magic, "checkpoint header")?;
        if &magic[..4] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { what: "checkpoint" });
        }
        if magic[4] != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "checkpoint",
                version: magic[4] as u32,
            });
        }
        let header_len = read_u32(&mut r)? as usize;
        let mut header = vec![0u8; header_len];
        read_exact(&mut r, &mut header, "checkpoint header")?;
        let header = String::from_utf8(header)
            .map_err(|_| Error::Config("checkpoint header is not UTF-8".into()))?;
        let fields: BTreeMap<&str, &str> =
            header.lines().filter_map(|l| l.split_once('=')).collect();
        let get = |k: &str| fields.get(k).map(|v| v.to_string());
        let config = ModelConfig::from_header(get)?;
        let mut model = Model::new(config, 0)?;
        let vocab_hash = get("vocab_hash").unwrap_or_default();
        let config_hash = get("config_hash").unwrap_or_default();
        let class_names: Vec<String> = match get("classes") {
            Some(s) if !s.is_empty() => s.split('\t').map(str::to_string).collect(),
            _ => Vec::new(),
        };

        let count = read_u32(&mut r)? as usize;
        if count != model.params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {count} tensors, architecture expects {}",
                model.params.len()
            )));
        }
        for _ in 0..count {
            let mut len = [0u8; 2];
            read_exact(&mut r, &mut len, "checkpoint tensor")?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(&mut r, &mut name, "checkpoint tensor")?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Config("tensor name is not UTF-8".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| Error::Config(format!("unexpected tensor `{name}`")))?;
            if model.params.value(id).shape() != (rows, cols) {
                return Err(Error::Config(format!(
                    "tensor `{name}` has shape {rows}x{cols}"
                )));
            }
            let mut raw = vec![0u8; rows * cols * 4];
            read_exact(&mut r, &mut raw, "checkpoint tensor")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            *model.params.value_mut(id) = Tensor::from_vec(rows, cols, data);
        }
        if !r.is_empty() {
            return Err(Error::Config("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            model,
            vocab_hash,
            config_hash,
            class_names,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads and checks the vocabulary hash against the tokenizer in use.
    pub fn load_for_vocab(path: &Path, vocab_hash: &str) -> Result<Self> {
        let ck = Self::load(path)?;
        ck.check_vocab(vocab_hash)?;
        Ok(ck)
    }

    pub fn check_vocab(&self, vocab_hash: &str) -> Result<()> {
        if self.vocab_hash != vocab_hash {
            return Err(Error::VocabMismatch {
                expected: self.vocab_hash.clone(),
                found: vocab_hash.to_string(),
            });
        }
        Ok(())
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8], what: &'static str) -> Result<()> {
    let found = r.len();
    r.read_exact(buf).map_err(|_| Error::Truncated {
        what,
        expected: buf.len(),
        found,
    })
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, "checkpoint")?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::config::Arch;

    fn small(arch: Arch) -> ModelConfig {
        let mut c = ModelConfig::desk(arch, 40);
        c.embed_dim = 8;
        c.hidden_dim = 8;
        c.n_heads = 2;
        c.head_dim = 6;
        c.context = 12;
        c
    }

    #[test]
    fn round_trip_rounds_to_f32() {
        for cfg in [
            small(Arch::Causal),
            small(Arch::Lstm).classifier(3),
            small(Arch::Cnn).classifier(4),
        ] {
            let model = Model::new(cfg, 5).unwrap();
            let ck = Checkpoint {
                model,
                vocab_hash: "abc".into(),
                config_hash: "def".into(),
                class_names: vec!["a b".into(), "c".into()],
            };
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back.class_names, ck.class_names);
            assert_eq!(back.model.config, ck.model.config);
            for ((_, a), (_, b)) in ck.model.params.iter().zip(back.model.params.iter()) {
                assert_eq!(a.name, b.name);
                for (x, y) in a.value.data().iter().zip(b.value.data()) {
                    assert_eq!(*x as f32 as f64, *y);
                }
            }
            // Already-rounded weights survive bit-exactly.
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn vocab_hash_is_checked() {
        let ck = Checkpoint {
            model: Model::new(small(Arch::Causal), 1).unwrap(),
            vocab_hash: "abc".into(),
            config_hash: String::new(),
            class_names: Vec::new(),
        };
        assert!(ck.check_vocab("abc").is_ok());
        assert!(matches!(
            ck.check_vocab("xyz"),
            Err(Error::VocabMismatch { .. })
        ));
    }

    #[test]
    fn corrupt_inputs() {
        let ck = Checkpoint {
            model: Model::new(small(Arch::Causal), 1).unwrap(),
            vocab_hash: "h".into(),
            config_hash: String::new(),
            class_names: Vec::new(),
        };
        let bytes = ck.to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(b"XXXX\x01\x00"),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
    }
}

//! Byte-level BPE over packed bootleg columns.
//!
//! Training starts from the 256 byte tokens and repeatedly merges the most
//! frequent adjacent pair. Equal counts resolve to the smallest
//! `(left_id, right_id)`. Each page's byte stream is one contiguous word.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;

use super::vocab::{from_hex, is_special, to_hex, Vocabulary, N_SPECIALS};
use crate::error::{Error, Result};

/// Id of the token for raw byte `b`.
pub fn byte_id(b: u8) -> u32 {
    N_SPECIALS as u32 + b as u32
}

pub const MIN_BPE_VOCAB: usize = N_SPECIALS + 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Merge {
    pub left: u32,
    pub right: u32,
    /// Token produced by the merge. May repeat an earlier id when two merges
    /// spell the same byte string.
    pub id: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MergeTable {
    pub merges: Vec<Merge>,
}

impl MergeTable {
    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// `<left-hex> <right-hex>` per line, training order.
    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for m in &self.merges {
            let l = vocab
                .bytes_of(m.left)
                .expect("merge references a byte token");
            let r = vocab
                .bytes_of(m.right)
                .expect("merge references a byte token");
            writeln!(out, "{} {}", to_hex(l), to_hex(r)).unwrap();
        }
        out
    }

    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let mut produced: HashSet<u32> = (0..=255u8).map(byte_id).collect();
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("expected `<left-hex> <right-hex>`, got `{line}`")))?;
            let lb = from_hex(l).ok_or_else(|| bad(format!("bad hex `{l}`")))?;
            let rb = from_hex(r).ok_or_else(|| bad(format!("bad hex `{r}`")))?;
            let lookup = |b: &[u8]| {
                vocab
                    .id_of(b)
                    .ok_or_else(|| bad(format!("token `{}` not in vocabulary", to_hex(b))))
            };
            let left = lookup(&lb)?;
            let right = lookup(&rb)?;
            if !produced.contains(&left) || !produced.contains(&right) {
                return Err(bad("merge references a token not yet created".into()));
            }
            let joined: Vec<u8> = lb.iter().chain(&rb).copied().collect();
            let id = lookup(&joined)?;
            produced.insert(id);
            merges.push(Merge { left, right, id });
        }
        Ok(MergeTable { merges })
    }
}

fn base_vocab() -> Vocabulary {
    let mut vocab = Vocabulary::with_specials();
    for b in 0..=255u8 {
        let id = vocab.insert(vec![b]);
        debug_assert_eq!(id, byte_id(b));
    }
    vocab
}

const NONE: u32 = u32::MAX;
const DEAD: u32 = u32::MAX;

type Pair = (u32, u32);

/// Linked-list corpus with incremental pair statistics.
struct PairIndex {
    sym: Vec<u32>,
    prev: Vec<u32>,
    next: Vec<u32>,
    counts: HashMap<Pair, i64>,
    positions: HashMap<Pair, Vec<u32>>,
    heap: BinaryHeap<(i64, Reverse<Pair>)>,
}

impl PairIndex {
    fn new(corpus: &[Vec<u8>]) -> Self {
        let total: usize = corpus.iter().map(Vec::len).sum();
        let mut idx = PairIndex {
            sym: Vec::with_capacity(total),
            prev: Vec::with_capacity(total),
            next: Vec::with_capacity(total),
            counts: HashMap::new(),
            positions: HashMap::new(),
            heap: BinaryHeap::new(),
        };
        for stream in corpus {
            let start = idx.sym.len() as u32;
            for (k, &b) in stream.iter().enumerate() {
                let i = start + k as u32;
                idx.sym.push(byte_id(b));
                idx.prev.push(if k == 0 { NONE } else { i - 1 });
                idx.next
                    .push(if k + 1 == stream.len() { NONE } else { i + 1 });
            }
        }
        for i in 0..idx.sym.len() as u32 {
            let j = idx.next[i as usize];
            if j != NONE {
                let pair = (idx.sym[i as usize], idx.sym[j as usize]);
                *idx.counts.entry(pair).or_insert(0) += 1;
                idx.positions.entry(pair).or_default().push(i);
            }
        }
        for (&pair, &c) in &idx.counts {
            idx.heap.push((c, Reverse(pair)));
        }
        idx
    }

    /// Most frequent pair with its count, smallest pair first among ties.
    fn best(&mut self) -> Option<(Pair, i64)> {
        while let Some((c, Reverse(pair))) = self.heap.pop() {
            let actual = self.counts.get(&pair).copied().unwrap_or(0);
            if actual == c {
                return Some((pair, c));
            }
            if actual > 0 {
                self.heap.push((actual, Reverse(pair)));
            }
        }
        None
    }

    fn bump(&mut self, pair: Pair, delta: i64, grown: &mut HashSet<Pair>) {
        let c = self.counts.entry(pair).or_insert(0);
        *c += delta;
        debug_assert!(*c >= 0);
        if delta > 0 {
            grown.insert(pair);
        }
    }

    fn apply(&mut self, pair: Pair, new_id: u32) {
        let (a, b) = pair;
        let mut sites = self.positions.remove(&pair).unwrap_or_default();
        sites.sort_unstable();
        sites.dedup();
        let mut grown = HashSet::new();
        for i in sites {
            let iu = i as usize;
            if self.sym[iu] != a {
                continue;
            }
            let j = self.next[iu];
            if j == NONE || self.sym[j as usize] != b {
                continue;
            }
            let l = self.prev[iu];
            let r = self.next[j as usize];
            self.bump(pair, -1, &mut grown);
            if l != NONE {
                let ls = self.sym[l as usize];
                self.bump((ls, a), -1, &mut grown);
                self.bump((ls, new_id), 1, &mut grown);
                self.positions.entry((ls, new_id)).or_default().push(l);
            }
            if r != NONE {
                let rs = self.sym[r as usize];
                self.bump((b, rs), -1, &mut grown);
                self.bump((new_id, rs), 1, &mut grown);
                self.positions.entry((new_id, rs)).or_default().push(i);
            }
            self.sym[iu] = new_id;
            self.sym[j as usize] = DEAD;
            self.next[iu] = r;
            if r != NONE {
                self.prev[r as usize] = i;
            }
        }
        for p in grown {
            let c = self.counts[&p];
            if c > 0 {
                self.heap.push((c, Reverse(p)));
            }
        }
    }
}

/// Learns merges until the vocabulary reaches `vocab_size` or no pair occurs twice.
pub fn train_bpe(corpus: &[Vec<u8>], vocab_size: usize) -> Result<(Vocabulary, MergeTable)> {
    if vocab_size < MIN_BPE_VOCAB {
        return Err(Error::Config(format!(
            "BPE vocabulary size {vocab_size} is below the {MIN_BPE_VOCAB} base tokens"
        )));
    }
    let mut vocab = base_vocab();
    let mut table = MergeTable::default();
    let mut index = PairIndex::new(corpus);
    while vocab.len() < vocab_size {
        let Some((pair, count)) = index.best() else {
            break;
        };
        if count < 2 {
            break;
        }
        let mut joined = vocab.bytes_of(pair.0).unwrap().to_vec();
        joined.extend_from_slice(vocab.bytes_of(pair.1).unwrap());
        let id = vocab.insert(joined);
        table.merges.push(Merge {
            left: pair.0,
            right: pair.1,
            id,
        });
        index.apply(pair, id);
    }
    Ok((vocab, table))
}

fn replace_pair(seq: &[u32], pair: Pair, id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(seq.len());
    let mut k = 0;
    while k < seq.len() {
        if k + 1 < seq.len() && seq[k] == pair.0 && seq[k + 1] == pair.1 {
            out.push(id);
            k += 2;
        } else {
            out.push(seq[k]);
            k += 1;
        }
    }
    out
}

/// Applies merges in training order; each merge replaces non-overlapping
/// occurrences left to right.
pub fn bpe_encode(bytes: &[u8], merges: &MergeTable) -> Vec<u32> {
    let mut seq: Vec<u32> = bytes.iter().map(|&b| byte_id(b)).collect();
    let mut present: HashSet<Pair> = seq.windows(2).map(|w| (w[0], w[1])).collect();
    for m in &merges.merges {
        if seq.len() < 2 {
            break;
        }
        if !present.contains(&(m.left, m.right)) {
            continue;
        }
        seq = replace_pair(&seq, (m.left, m.right), m.id);
        present.clear();
        present.extend(seq.windows(2).map(|w| (w[0], w[1])));
    }
    seq
}

/// Concatenates token bytes; special tokens are dropped.
pub fn bpe_decode(ids: &[u32], vocab: &Vocabulary) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for &id in ids {
        if is_special(id) && (id as usize) < vocab.len() {
            continue;
        }
        let bytes = vocab.bytes_of(id).ok_or(Error::InvalidTokenId(id))?;
        out.extend_from_slice(bytes);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeTokenizer {
    vocab: Vocabulary,
    merges: MergeTable,
}

impl BpeTokenizer {
    pub fn train(corpus: &[Vec<u8>], vocab_size: usize) -> Result<Self> {
        let (vocab, merges) = train_bpe(corpus, vocab_size)?;
        Ok(BpeTokenizer { vocab, merges })
    }

    pub fn from_parts(vocab: Vocabulary, merges: MergeTable) -> Result<Self> {
        for b in 0..=255u8 {
            if vocab.bytes_of(byte_id(b)) != Some(&[b][..]) {
                return Err(Error::Config(format!(
                    "vocabulary lacks byte token {b:#04x}"
                )));
            }
        }
        Ok(BpeTokenizer { vocab, merges })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn merges(&self) -> &MergeTable {
        &self.merges
    }

    pub fn encode(&self, bytes: &[u8]) -> Vec<u32> {
        bpe_encode(bytes, &self.merges)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        bpe_decode(ids, &self.vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(c: char) -> u32 {
        byte_id(c as u8)
    }

    #[test]
    fn hand_counted_merges() {
        let (vocab, table) = train_bpe(&[b"aaabdaaabac".to_vec()], 1000).unwrap();
        let pairs: Vec<(Vec<u8>, Vec<u8>)> = table
            .merges
            .iter()
            .map(|m| {
                (
                    vocab.bytes_of(m.left).unwrap().to_vec(),
                    vocab.bytes_of(m.right).unwrap().to_vec(),
                )
            })
            .collect();
        assert_eq!(
            pairs,
            vec![
                (b"a".to_vec(), b"a".to_vec()),
                (b"a".to_vec(), b"b".to_vec()),
                (b"aa".to_vec(), b"ab".to_vec()),
            ]
        );
    }

    #[test]
    fn repeated_byte_merges() {
        let (vocab, table) = train_bpe(&[b"aaaaaaaa".to_vec()], 1000).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.merges[0].left, id('a'));
        assert_eq!(vocab.bytes_of(table.merges[1].left), Some(&b"aa"[..]));
        assert_eq!(vocab.bytes_of(table.merges[1].right), Some(&b"aa"[..]));
    }

    #[test]
    fn distinct_bytes_never_merge() {
        let (vocab, table) = train_bpe(&[b"abcdefg".to_vec()], 1000).unwrap();
        assert!(table.is_empty());
        assert_eq!(vocab.len(), MIN_BPE_VOCAB);
    }

    #[test]
    fn vocab_size_bounds() {
        assert!(train_bpe(&[b"aa".to_vec()], MIN_BPE_VOCAB - 1).is_err());
        let (vocab, table) =
            train_bpe(&[b"abababababcdcdcdcd".to_vec()], MIN_BPE_VOCAB + 1).unwrap();
        assert_eq!(vocab.len(), MIN_BPE_VOCAB + 1);
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn encode_left_to_right() {
        let z = byte_id(b'z') + 1000;
        let table = MergeTable {
            merges: vec![Merge {
                left: id('a'),
                right: id('a'),
                id: z,
            }],
        };
        assert_eq!(bpe_encode(b"aaa", &table), vec![z, id('a')]);
        assert!(bpe_encode(b"", &table).is_empty());
        assert_eq!(bpe_encode(b"abc", &table), vec![id('a'), id('b'), id('c')]);
    }

    #[test]
    fn decode_inverts_and_strips_specials() {
        let tok = BpeTokenizer::train(&[b"aaabdaaabac".to_vec()], 1000).unwrap();
        let enc = tok.encode(b"aaa");
        assert_eq!(enc.len(), 2);
        assert_eq!(tok.decode(&enc).unwrap(), b"aaa");
        let mut wrapped = vec![super::super::vocab::BOS];
        wrapped.extend(&enc);
        wrapped.push(super::super::vocab::EOS);
        assert_eq!(tok.decode(&wrapped).unwrap(), b"aaa");
        assert!(matches!(
            tok.decode(&[99_999]),
            Err(Error::InvalidTokenId(99_999))
        ));
    }

    #[test]
    fn merges_text_round_trip() {
        let tok =
            BpeTokenizer::train(&[b"aaabdaaabac".to_vec(), b"xyxyxyxy".to_vec()], 1000).unwrap();
        let text = tok.merges().to_text(tok.vocab());
        assert_eq!(text.lines().next(), Some("61 61"));
        let parsed = MergeTable::parse(&text, tok.vocab()).unwrap();
        assert_eq!(&parsed, tok.merges());
        assert!(MergeTable::parse("6161 61\n", tok.vocab()).is_err());
    }
}

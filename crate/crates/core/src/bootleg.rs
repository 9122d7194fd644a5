//! Bootleg score data model.
//!
//! A bootleg score is a 62 × N binary matrix: each column marks the staff
//! positions of filled noteheads at one note-onset event, covering both
//! hands. Columns are stored as 64-bit words with bit `p` set for staff
//! position `p`; bits 62 and 63 are reserved and always zero.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use num_rational::Rational64;

use crate::corpus::PageRecord;
use crate::error::{Error, Result};

/// Number of staff positions in a column.
pub const N_POSITIONS: u32 = 62;

const RESERVED_MASK: u64 = !((1u64 << N_POSITIONS) - 1);

pub const SCORE_MAGIC: &[u8; 4] = b"BSCR";
pub const SCORE_VERSION: u8 = 0x01;
pub const SCORE_HEADER_LEN: usize = 10;

/// One note-onset event: the set of occupied staff positions.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BootlegColumn(u64);

impl BootlegColumn {
    pub const EMPTY: BootlegColumn = BootlegColumn(0);

    pub fn from_positions<I: IntoIterator<Item = u32>>(positions: I) -> Result<Self> {
        let mut bits = 0u64;
        for p in positions {
            if p >= N_POSITIONS {
                return Err(Error::InvalidPosition(p));
            }
            bits |= 1 << p;
        }
        Ok(BootlegColumn(bits))
    }

    /// Builds a column from a raw word, rejecting reserved bits.
    pub fn from_bits(bits: u64) -> Result<Self> {
        if bits & RESERVED_MASK != 0 {
            return Err(Error::CorruptColumn(bits));
        }
        Ok(BootlegColumn(bits))
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, position: u32) -> bool {
        position < N_POSITIONS && self.0 & (1 << position) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn positions(self) -> impl Iterator<Item = u32> {
        (0..N_POSITIONS).filter(move |&p| self.0 & (1 << p) != 0)
    }

    pub fn union(self, other: BootlegColumn) -> BootlegColumn {
        BootlegColumn(self.0 | other.0)
    }

    /// Eight bytes, least-significant first.
    pub fn pack(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    pub fn unpack(word: [u8; 8]) -> Result<Self> {
        Self::from_bits(u64::from_le_bytes(word))
    }
}

impl fmt::Debug for BootlegColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.positions()).finish()
    }
}

pub fn pack_column(col: BootlegColumn) -> [u8; 8] {
    col.pack()
}

pub fn unpack_column(word: [u8; 8]) -> Result<BootlegColumn> {
    BootlegColumn::unpack(word)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BootlegScore {
    pub columns: Vec<BootlegColumn>,
}

impl BootlegScore {
    pub fn new(columns: Vec<BootlegColumn>) -> Self {
        BootlegScore { columns }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Packed columns concatenated in order, 8 bytes each.
    pub fn to_byte_stream(&self) -> Vec<u8> {
        self.columns.iter().flat_map(|c| c.pack()).collect()
    }

    pub fn write_to<W: Write>(&self, mut sink: W) -> Result<()> {
        let n = u32::try_from(self.columns.len())
            .map_err(|_| Error::Config("score has more than u32::MAX columns".into()))?;
        let mut header = [0u8; SCORE_HEADER_LEN];
        header[..4].copy_from_slice(SCORE_MAGIC);
        header[4] = SCORE_VERSION;
        header[5] = 0;
        header[6..].copy_from_slice(&n.to_le_bytes());
        sink.write_all(&header)?;
        sink.write_all(&self.to_byte_stream())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut source: R) -> Result<Self> {
        let mut header = [0u8; SCORE_HEADER_LEN];
        let got = read_full(&mut source, &mut header)?;
        if got < 4 || &header[..4] != SCORE_MAGIC {
            return Err(Error::BadMagic {
                what: "bootleg score",
            });
        }
        if got < SCORE_HEADER_LEN {
            return Err(Error::Truncated {
                what: "bootleg score header",
                expected: SCORE_HEADER_LEN,
                found: got,
            });
        }
        if header[4] != SCORE_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "bootleg score",
                version: header[4] as u32,
            });
        }
        let n = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
        let mut payload = vec![0u8; n * 8];
        let got = read_full(&mut source, &mut payload)?;
        if got < payload.len() {
            return Err(Error::Truncated {
                what: "bootleg score payload",
                expected: payload.len(),
                found: got,
            });
        }
        let columns = payload
            .chunks_exact(8)
            .map(|w| BootlegColumn::unpack(w.try_into().unwrap()))
            .collect::<Result<Vec<_>>>()?;
        Ok(BootlegScore { columns })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SCORE_HEADER_LEN + 8 * self.len());
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

pub fn write_score<W: Write>(score: &BootlegScore, sink: W) -> Result<()> {
    score.write_to(sink)
}

pub fn read_score<R: Read>(source: R) -> Result<BootlegScore> {
    BootlegScore::read_from(source)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    fn index(self) -> usize {
        match self {
            Hand::Left => 0,
            Hand::Right => 1,
        }
    }
}

impl FromStr for Hand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" | "l" | "L" => Ok(Hand::Left),
            "right" | "r" | "R" => Ok(Hand::Right),
            other => Err(Error::Config(format!("unknown hand `{other}`"))),
        }
    }
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hand::Left => "left",
            Hand::Right => "right",
        })
    }
}

pub const PIANO_LOWEST: u8 = 21;
pub const PIANO_HIGHEST: u8 = 108;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoteEvent {
    /// Onset in beats.
    pub onset: Rational64,
    pub pitch: u8,
    pub hand: Hand,
}

impl NoteEvent {
    pub fn new(onset: Rational64, pitch: u8, hand: Hand) -> Self {
        NoteEvent { onset, pitch, hand }
    }
}

/// Parses a note list: one `<onset> <hand> <midi-pitch>` per line, onsets
/// written as integers, fractions (`3/2`) or decimals.
pub fn parse_note_list(text: &str) -> Result<Vec<NoteEvent>> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad(format!(
                "expected `<onset> <hand> <pitch>`, got `{line}`"
            )));
        }
        let onset =
            parse_onset(fields[0]).ok_or_else(|| bad(format!("bad onset `{}`", fields[0])))?;
        if onset < Rational64::from_integer(0) {
            return Err(bad("negative onset".into()));
        }
        let hand: Hand = fields[1].parse().map_err(|e: Error| bad(e.to_string()))?;
        let pitch: u8 = fields[2]
            .parse()
            .map_err(|_| bad(format!("bad pitch `{}`", fields[2])))?;
        events.push(NoteEvent::new(onset, pitch, hand));
    }
    Ok(events)
}

fn parse_onset(s: &str) -> Option<Rational64> {
    if let Some((n, d)) = s.split_once('/') {
        let d: i64 = d.parse().ok()?;
        if d == 0 {
            return None;
        }
        return Some(Rational64::new(n.parse().ok()?, d));
    }
    if let Some((whole, frac)) = s.split_once('.') {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 12 {
            return None;
        }
        let den = 10i64.pow(frac.len() as u32);
        let w: i64 = if whole.is_empty() {
            0
        } else {
            whole.parse().ok()?
        };
        let f: i64 = frac.parse().ok()?;
        return Some(Rational64::new(w * den + f, den));
    }
    s.parse::<i64>().ok().map(Rational64::from_integer)
}

/// Maps (hand, MIDI pitch) to a staff position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PitchMap {
    table: [[Option<u8>; 128]; 2],
}

const LEFT_SPAN: i32 = 28;
const RIGHT_SPAN: i32 = 34;

impl Default for PitchMap {
    /// Left hand takes positions 0..=27 as diatonic steps from A0, right
    /// hand 28..=61 from E3. Black keys share the position of the natural
    /// they sharpen; pitches beyond a hand's span clamp to its edge.
    fn default() -> Self {
        let mut table = [[None; 128]; 2];
        let a0 = diatonic_number(21);
        let e3 = diatonic_number(52);
        for pitch in PIANO_LOWEST..=PIANO_HIGHEST {
            let dn = diatonic_number(pitch);
            let left = (dn - a0).clamp(0, LEFT_SPAN - 1);
            let right = LEFT_SPAN + (dn - e3).clamp(0, RIGHT_SPAN - 1);
            table[Hand::Left.index()][pitch as usize] = Some(left as u8);
            table[Hand::Right.index()][pitch as usize] = Some(right as u8);
        }
        PitchMap { table }
    }
}

/// Index of the natural letter (sharp spelling) counted in staff steps from C-1.
fn diatonic_number(pitch: u8) -> i32 {
    const LETTER: [i32; 12] = [0, 0, 1, 1, 2, 3, 3, 4, 4, 5, 5, 6];
    let octave = pitch as i32 / 12;
    octave * 7 + LETTER[pitch as usize % 12]
}

impl PitchMap {
    pub fn empty() -> Self {
        PitchMap {
            table: [[None; 128]; 2],
        }
    }

    pub fn position(&self, hand: Hand, pitch: u8) -> Option<u8> {
        self.table[hand.index()]
            .get(pitch as usize)
            .copied()
            .flatten()
    }

    pub fn set(&mut self, hand: Hand, pitch: u8, position: u8) -> Result<()> {
        if position as u32 >= N_POSITIONS {
            return Err(Error::InvalidPosition(position as u32));
        }
        if pitch >= 128 {
            return Err(Error::UnmappedPitch { hand, pitch });
        }
        self.table[hand.index()][pitch as usize] = Some(position);
        Ok(())
    }

    /// Parses `<hand> <midi-pitch> <position>` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = PitchMap::empty();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(bad(format!(
                    "expected `<hand> <pitch> <position>`, got `{line}`"
                )));
            }
            let hand: Hand = fields[0].parse().map_err(|e: Error| bad(e.to_string()))?;
            let pitch: u8 = fields[1]
                .parse()
                .map_err(|_| bad(format!("bad pitch `{}`", fields[1])))?;
            let pos: u8 = fields[2]
                .parse()
                .map_err(|_| bad(format!("bad position `{}`", fields[2])))?;
            map.set(hand, pitch, pos).map_err(|e| bad(e.to_string()))?;
        }
        Ok(map)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for hand in [Hand::Left, Hand::Right] {
            for pitch in 0..128u8 {
                if let Some(p) = self.position(hand, pitch) {
                    out.push_str(&format!("{hand} {pitch} {p}\n"));
                }
            }
        }
        out
    }
}

/// Encodes symbolic notes: one column per distinct onset, in onset order.
pub fn encode_symbolic(events: &[NoteEvent], map: &PitchMap) -> Result<BootlegScore> {
    let mut keyed = Vec::with_capacity(events.len());
    for e in events {
        let pos = map.position(e.hand, e.pitch).ok_or(Error::UnmappedPitch {
            hand: e.hand,
            pitch: e.pitch,
        })?;
        keyed.push((e.onset, pos));
    }
    keyed.sort_by_key(|&(onset, _)| onset);

    let mut columns: Vec<BootlegColumn> = Vec::new();
    let mut current: Option<(Rational64, u64)> = None;
    for (onset, pos) in keyed {
        match current.as_mut() {
            Some((t, bits)) if *t == onset => *bits |= 1 << pos,
            _ => {
                if let Some((_, bits)) = current.take() {
                    columns.push(BootlegColumn(bits));
                }
                current = Some((onset, 1 << pos));
            }
        }
    }
    if let Some((_, bits)) = current {
        columns.push(BootlegColumn(bits));
    }
    columns.retain(|c| !c.is_empty());
    Ok(BootlegScore { columns })
}

/// Drops filler pages (title pages, forewords) with too few features.
pub fn filter_filler(pages: &[PageRecord], min_features: usize) -> Vec<PageRecord> {
    pages
        .iter()
        .filter(|p| p.n_features >= min_features)
        .cloned()
        .collect()
}

pub const DEFAULT_MIN_FEATURES: usize = 10;

#[cfg(test)]
mod tests {
    use super::*;

    fn col(ps: &[u32]) -> BootlegColumn {
        BootlegColumn::from_positions(ps.iter().copied()).unwrap()
    }

    #[test]
    fn pack_examples() {
        assert_eq!(pack_column(col(&[])), [0; 8]);
        assert_eq!(pack_column(col(&[0, 5])), [0x21, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(pack_column(col(&[61])), [0, 0, 0, 0, 0, 0, 0, 0x20]);
    }

    #[test]
    fn unpack_examples() {
        assert_eq!(
            unpack_column([0x21, 0, 0, 0, 0, 0, 0, 0]).unwrap(),
            col(&[0, 5])
        );
        assert_eq!(unpack_column([0; 8]).unwrap(), col(&[]));
        let err = unpack_column([0, 0, 0, 0, 0, 0, 0, 0x80]).unwrap_err();
        assert!(matches!(err, Error::CorruptColumn(_)));
        let err = unpack_column([0, 0, 0, 0, 0, 0, 0, 0x40]).unwrap_err();
        assert!(matches!(err, Error::CorruptColumn(_)));
    }

    #[test]
    fn out_of_range_position() {
        assert!(matches!(
            BootlegColumn::from_positions([62]),
            Err(Error::InvalidPosition(62))
        ));
    }

    #[test]
    fn file_sizes() {
        let empty = BootlegScore::default();
        assert_eq!(empty.to_bytes().len(), 10);
        assert_eq!(&empty.to_bytes()[..6], b"BSCR\x01\x00");
        let three = BootlegScore::new(vec![col(&[1]), col(&[2, 3]), col(&[61])]);
        let bytes = three.to_bytes();
        assert_eq!(bytes.len(), 10 + 24);
        assert_eq!(&bytes[6..10], &[3, 0, 0, 0]);
        assert_eq!(BootlegScore::from_bytes(&bytes).unwrap(), three);
    }

    #[test]
    fn parse_errors_are_distinct() {
        let score = BootlegScore::new(vec![col(&[4]), col(&[9])]);
        let mut bytes = score.to_bytes();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            BootlegScore::from_bytes(&bad_magic),
            Err(Error::BadMagic { .. })
        ));

        assert!(matches!(
            BootlegScore::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            BootlegScore::from_bytes(&bytes[..7]),
            Err(Error::Truncated { .. })
        ));

        let last = bytes.len() - 1;
        bytes[last] |= 0xC0;
        assert!(matches!(
            BootlegScore::from_bytes(&bytes),
            Err(Error::CorruptColumn(_))
        ));
    }

    #[test]
    fn default_map_is_total_and_split_by_hand() {
        let map = PitchMap::default();
        for pitch in PIANO_LOWEST..=PIANO_HIGHEST {
            let l = map.position(Hand::Left, pitch).unwrap();
            let r = map.position(Hand::Right, pitch).unwrap();
            assert!(l < 28, "left {pitch} -> {l}");
            assert!((28..62).contains(&r), "right {pitch} -> {r}");
        }
        assert_eq!(map.position(Hand::Left, 21), Some(0));
        assert_eq!(map.position(Hand::Right, 52), Some(28));
        assert_eq!(map.position(Hand::Right, 108), Some(61));
        // C#4 shares the C4 position.
        assert_eq!(map.position(Hand::Right, 61), map.position(Hand::Right, 60));
        assert_eq!(map.position(Hand::Left, 10), None);
    }

    #[test]
    fn pitch_map_text_round_trip() {
        let map = PitchMap::default();
        assert_eq!(PitchMap::parse(&map.to_text()).unwrap(), map);
        assert!(PitchMap::parse("left 60 62\n").is_err());
        assert!(PitchMap::parse("middle 60 3\n").is_err());
    }

    const C4: u8 = 60;
    const C3: u8 = 48;

    fn ev(onset: i64, pitch: u8, hand: Hand) -> NoteEvent {
        NoteEvent::new(Rational64::from_integer(onset), pitch, hand)
    }

    #[test]
    fn encode_examples() {
        let map = PitchMap::default();
        let c4 = map.position(Hand::Right, C4).unwrap() as u32;
        let c3 = map.position(Hand::Left, C3).unwrap() as u32;

        let s = encode_symbolic(&[ev(0, C4, Hand::Right)], &map).unwrap();
        assert_eq!(s.columns, vec![col(&[c4])]);

        let s = encode_symbolic(&[ev(0, C4, Hand::Right), ev(0, C3, Hand::Left)], &map).unwrap();
        assert_eq!(s.columns, vec![col(&[c3, c4])]);
        assert_eq!(s.columns[0].len(), 2);

        let s = encode_symbolic(&[ev(0, C4, Hand::Right), ev(1, C4, Hand::Right)], &map).unwrap();
        assert_eq!(s.columns, vec![col(&[c4]), col(&[c4])]);
    }

    #[test]
    fn encode_sorts_by_onset_and_rejects_unmapped() {
        let map = PitchMap::default();
        let s = encode_symbolic(
            &[
                ev(2, 70, Hand::Right),
                ev(0, 40, Hand::Left),
                ev(2, 30, Hand::Left),
            ],
            &map,
        )
        .unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.columns[0].len(), 1);
        assert_eq!(s.columns[1].len(), 2);

        let err = encode_symbolic(&[ev(0, 5, Hand::Left)], &map).unwrap_err();
        assert!(matches!(err, Error::UnmappedPitch { pitch: 5, .. }));
    }

    #[test]
    fn note_list_parsing() {
        let notes = parse_note_list("0 right 60\n3/2 left 48 # comment\n2.25 r 72\n\n").unwrap();
        assert_eq!(notes.len(), 3);
        assert_eq!(notes[1].onset, Rational64::new(3, 2));
        assert_eq!(notes[2].onset, Rational64::new(9, 4));
        assert!(parse_note_list("0 up 60").is_err());
        assert!(parse_note_list("-1 left 60").is_err());
        assert!(parse_note_list("1/0 left 60").is_err());
    }

    fn rec(id: &str, n: usize) -> PageRecord {
        PageRecord {
            piece_id: id.into(),
            composer: "x".into(),
            page: 0,
            path: format!("{id}.bscr").into(),
            n_features: n,
        }
    }

    #[test]
    fn filler_filtering() {
        let pages = vec![rec("p1", 3), rec("p2", 50)];
        let kept = filter_filler(&pages, 10);
        assert_eq!(kept, vec![rec("p2", 50)]);
        assert_eq!(filter_filler(&pages, 0), pages);
        assert!(filter_filler(&pages, 100).is_empty());
    }
}

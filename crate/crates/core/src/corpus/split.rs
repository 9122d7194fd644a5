use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::Manifest;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const CLASSIFICATION: SplitRatios = SplitRatios {
        train: 0.6,
        val: 0.2,
        test: 0.2,
    };
    pub const LANGUAGE_MODEL: SplitRatios = SplitRatios {
        train: 0.9,
        val: 0.1,
        test: 0.0,
    };

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split ratios must be in [0,1] and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Piece counts per split for `n` pieces.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.train * n as f64).round() as usize).min(n);
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
}

/// Seeded piece-level partition: all pages of a piece land in one split.
pub fn split_by_piece(manifest: &Manifest, ratios: SplitRatios, seed: u64) -> Result<Splits> {
    ratios.validate()?;
    if manifest.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut pieces: Vec<&str> = manifest.pieces().into_iter().collect();
    pieces.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val, _) = ratios.counts(pieces.len());
    let assign: HashMap<&str, usize> = pieces
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            (
                p,
                usize::from(k >= n_train) + usize::from(k >= n_train + n_val),
            )
        })
        .collect();
    Ok(partition(manifest, |piece| assign[piece]))
}

/// Like [`split_by_piece`], but partitions each composer's pieces
/// separately so every class appears in every non-empty split.
pub fn split_by_piece_stratified(
    manifest: &Manifest,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Splits> {
    ratios.validate()?;
    if manifest.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut by_composer: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in &manifest.records {
        let list = by_composer.entry(r.composer.as_str()).or_default();
        if !list.contains(&r.piece_id.as_str()) {
            list.push(&r.piece_id);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign: HashMap<&str, usize> = HashMap::new();
    for pieces in by_composer.values_mut() {
        pieces.sort_unstable();
        pieces.shuffle(&mut rng);
        let (n_train, n_val, _) = ratios.counts(pieces.len());
        for (k, &p) in pieces.iter().enumerate() {
            if assign
                .insert(
                    p,
                    usize::from(k >= n_train) + usize::from(k >= n_train + n_val),
                )
                .is_some()
            {
                return Err(Error::Config(format!(
                    "piece `{p}` is attributed to several composers"
                )));
            }
        }
    }
    Ok(partition(manifest, |piece| assign[piece]))
}

fn partition<'a>(manifest: &'a Manifest, which: impl Fn(&'a str) -> usize) -> Splits {
    let mut parts: [Vec<_>; 3] = Default::default();
    for r in &manifest.records {
        parts[which(r.piece_id.as_str())].push(r.clone());
    }
    let [train, val, test] = parts;
    Splits {
        train: manifest.with_records(train),
        val: manifest.with_records(val),
        test: manifest.with_records(test),
    }
}

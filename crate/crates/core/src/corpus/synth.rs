//! Seeded synthetic corpora: every composer is a Markov chain over bootleg
//! columns. Used as a desk-scale stand-in for real page collections.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{Manifest, PageRecord};
use crate::bootleg::{BootlegColumn, BootlegScore, N_POSITIONS};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub pieces_per_class: usize,
    pub pages_per_piece: usize,
    pub columns_per_page: usize,
    /// Columns per chain alphabet.
    pub alphabet: usize,
    /// When set, all classes walk the same columns and differ only in their
    /// transitions; otherwise each class owns a disjoint set of columns.
    pub shared_alphabet: bool,
    /// Weight of the class-specific transition matrix against the shared
    /// one (shared alphabets only). 1.0 makes classes fully distinct.
    pub class_mix: f64,
    /// Exponent applied to uniform draws when building transition rows;
    /// larger values make chains more predictable.
    pub peakiness: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 3,
            pieces_per_class: 20,
            pages_per_piece: 2,
            columns_per_page: 200,
            alphabet: 24,
            shared_alphabet: true,
            class_mix: 0.5,
            peakiness: 4.0,
            seed: 0,
        }
    }
}

/// One class: an alphabet of columns and a row-stochastic transition matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovChain {
    pub columns: Vec<BootlegColumn>,
    pub transitions: Vec<Vec<f64>>,
}

impl MarkovChain {
    fn step(&self, state: usize, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let row = &self.transitions[state];
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        row.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub config: SynthConfig,
    pub chains: Vec<MarkovChain>,
}

pub fn composer_name(class: usize) -> String {
    format!("composer_{class:02}")
}

fn random_row(n: usize, peakiness: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n)
        .map(|_| rng.gen::<f64>().powf(peakiness) + 1e-3)
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn random_column(rng: &mut ChaCha8Rng) -> BootlegColumn {
    let notes = rng.gen_range(1..=4);
    BootlegColumn::from_positions((0..notes).map(|_| rng.gen_range(0..N_POSITIONS)))
        .expect("positions drawn in range")
}

impl SyntheticCorpus {
    pub fn new(config: SynthConfig) -> Result<Self> {
        if config.classes < 2 {
            return Err(Error::Config(
                "synthetic corpus needs at least 2 classes".into(),
            ));
        }
        if config.alphabet < 2 {
            return Err(Error::Config(
                "chain alphabet needs at least 2 columns".into(),
            ));
        }
        if !(0.0..=1.0).contains(&config.class_mix) {
            return Err(Error::Config("class_mix must lie in [0, 1]".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.alphabet;
        let mut used = HashSet::new();
        let mut fresh_alphabet = |rng: &mut ChaCha8Rng| -> Vec<BootlegColumn> {
            let mut cols = Vec::with_capacity(n);
            while cols.len() < n {
                let c = random_column(rng);
                if used.insert(c) {
                    cols.push(c);
                }
            }
            cols
        };

        let chains = if config.shared_alphabet {
            let alphabet = fresh_alphabet(&mut rng);
            let shared: Vec<Vec<f64>> = (0..n)
                .map(|_| random_row(n, config.peakiness, &mut rng))
                .collect();
            (0..config.classes)
                .map(|_| {
                    let transitions = shared
                        .iter()
                        .map(|base| {
                            let own = random_row(n, config.peakiness, &mut rng);
                            base.iter()
                                .zip(own)
                                .map(|(b, o)| (1.0 - config.class_mix) * b + config.class_mix * o)
                                .collect()
                        })
                        .collect();
                    MarkovChain {
                        columns: alphabet.clone(),
                        transitions,
                    }
                })
                .collect()
        } else {
            (0..config.classes)
                .map(|_| MarkovChain {
                    columns: fresh_alphabet(&mut rng),
                    transitions: (0..n)
                        .map(|_| random_row(n, config.peakiness, &mut rng))
                        .collect(),
                })
                .collect()
        };
        Ok(SyntheticCorpus { config, chains })
    }

    /// Pages for every piece, in (class, piece, page) order.
    pub fn pages(&self) -> Vec<(PageRecord, BootlegScore)> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x05ee_d0f9_a9e5);
        let mut out = Vec::new();
        for (class, chain) in self.chains.iter().enumerate() {
            for piece in 0..cfg.pieces_per_class {
                let piece_id = format!("c{class:02}_piece{piece:03}");
                let mut state = rng.gen_range(0..chain.columns.len());
                for page in 0..cfg.pages_per_piece {
                    let mut columns = Vec::with_capacity(cfg.columns_per_page);
                    for _ in 0..cfg.columns_per_page {
                        columns.push(chain.columns[state]);
                        state = chain.step(state, &mut rng);
                    }
                    let record = PageRecord {
                        piece_id: piece_id.clone(),
                        composer: composer_name(class),
                        page: page as u32,
                        path: format!("scores/{piece_id}_p{page}.bscr").into(),
                        n_features: columns.len(),
                    };
                    out.push((record, BootlegScore::new(columns)));
                }
            }
        }
        out
    }

    /// Writes score files under `out_dir/scores/` and `out_dir/manifest.tsv`.
    pub fn write(&self, out_dir: &Path) -> Result<Manifest> {
        std::fs::create_dir_all(out_dir.join("scores"))?;
        let mut records = Vec::new();
        for (record, score) in self.pages() {
            score.save(out_dir.join(&record.path))?;
            records.push(record);
        }
        let manifest = Manifest::new(records, out_dir)?;
        manifest.save(&out_dir.join("manifest.tsv"))?;
        Ok(manifest)
    }
}

pub fn generate_synthetic_corpus(config: SynthConfig, out_dir: &Path) -> Result<Manifest> {
    SyntheticCorpus::new(config)?.write(out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            classes: 2,
            pieces_per_class: 3,
            pages_per_piece: 2,
            columns_per_page: 40,
            alphabet: 6,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn rows_are_stochastic() {
        let corpus = SyntheticCorpus::new(small(1)).unwrap();
        for chain in &corpus.chains {
            for row in &chain.transitions {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p > 0.0));
            }
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_synthetic_corpus(small(9), a.path()).unwrap();
        let mb = generate_synthetic_corpus(small(9), b.path()).unwrap();
        assert_eq!(ma.to_text(), mb.to_text());
        for r in &ma.records {
            let x = std::fs::read(a.path().join(&r.path)).unwrap();
            let y = std::fs::read(b.path().join(&r.path)).unwrap();
            assert_eq!(x, y);
        }
        assert_eq!(ma.len(), 12);
        assert_eq!(ma.pieces().len(), 6);
    }

    #[test]
    fn disjoint_alphabets_separate_classes() {
        let corpus = SyntheticCorpus::new(SynthConfig {
            shared_alphabet: false,
            ..small(4)
        })
        .unwrap();
        let a: HashSet<_> = corpus.chains[0].columns.iter().collect();
        let b: HashSet<_> = corpus.chains[1].columns.iter().collect();
        assert!(a.is_disjoint(&b));
        for (rec, score) in corpus.pages() {
            let own: HashSet<_> = if rec.composer == composer_name(0) {
                &a
            } else {
                &b
            }
            .clone();
            assert!(score.columns.iter().all(|c| own.contains(c)));
        }
    }

    #[test]
    fn needs_two_classes() {
        assert!(SyntheticCorpus::new(SynthConfig {
            classes: 1,
            ..small(0)
        })
        .is_err());
    }
}

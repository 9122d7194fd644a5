use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{LabelSet, Manifest, PageRecord};
use crate::bootleg::BootlegScore;
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

/// Fragment lengths used for the proxy task.
pub const FRAGMENT_LENGTHS: [usize; 3] = [64, 128, 256];

/// A fixed-length token window with its composer label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub ids: Vec<u32>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedPage {
    pub record: PageRecord,
    pub label: Option<usize>,
    pub ids: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerConfig {
    pub fragment_length: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl SamplerConfig {
    /// Per-class counts that keep `length × count` fixed relative to a
    /// reference length, so every fragment length sees the same coverage.
    pub fn with_constant_coverage(
        fragment_length: usize,
        reference_length: usize,
        reference: (usize, usize, usize),
        seed: u64,
    ) -> Result<Self> {
        let scale = |count: usize| {
            let tokens = count * reference_length;
            if !tokens.is_multiple_of(fragment_length) {
                return Err(Error::Config(format!(
                    "coverage {tokens} is not divisible by fragment length {fragment_length}"
                )));
            }
            Ok(tokens / fragment_length)
        };
        Ok(SamplerConfig {
            fragment_length,
            train_per_class: scale(reference.0)?,
            val_per_class: scale(reference.1)?,
            test_per_class: scale(reference.2)?,
            seed,
        })
    }
}

/// Loads and tokenizes every page of a manifest, attaching label ids.
pub fn tokenize_manifest(
    manifest: &Manifest,
    tokenizer: &Tokenizer,
    labels: Option<&LabelSet>,
) -> Result<Vec<TokenizedPage>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let score = BootlegScore::load(manifest.resolve(r))?;
            let label = match labels {
                Some(set) => Some(set.id(&r.composer).ok_or_else(|| {
                    Error::Config(format!("composer `{}` is not in the label set", r.composer))
                })?),
                None => None,
            };
            Ok(TokenizedPage {
                record: r.clone(),
                label,
                ids: tokenizer.encode_score(&score).ids,
            })
        })
        .collect()
}

/// Draws `per_class` windows of `length` tokens for every class: a uniformly
/// chosen eligible page, then a uniformly chosen complete window within it.
pub fn sample_fragments(
    pages: &[TokenizedPage],
    labels: &LabelSet,
    length: usize,
    per_class: usize,
    seed: u64,
) -> Result<Vec<Fragment>> {
    if length == 0 {
        return Err(Error::Config("fragment length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * labels.len());
    for class in 0..labels.len() {
        let eligible: Vec<&TokenizedPage> = pages
            .iter()
            .filter(|p| p.label == Some(class) && p.ids.len() >= length)
            .collect();
        if eligible.is_empty() {
            return Err(Error::InsufficientData(labels.name(class).to_string()));
        }
        for _ in 0..per_class {
            let page = eligible[rng.gen_range(0..eligible.len())];
            let start = rng.gen_range(0..=page.ids.len() - length);
            out.push(Fragment {
                ids: page.ids[start..start + length].to_vec(),
                label: class,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(label: usize, ids: Vec<u32>) -> TokenizedPage {
        TokenizedPage {
            record: PageRecord {
                piece_id: format!("p{label}"),
                composer: format!("c{label}"),
                page: 0,
                path: "x".into(),
                n_features: ids.len(),
            },
            label: Some(label),
            ids,
        }
    }

    fn labels(n: usize) -> LabelSet {
        LabelSet::new((0..n).map(|i| format!("c{i}")).collect())
    }

    #[test]
    fn balanced_counts() {
        let pages: Vec<_> = (0..9).map(|c| page(c, (0..300).collect())).collect();
        let frags = sample_fragments(&pages, &labels(9), 64, 3600, 7).unwrap();
        assert_eq!(frags.len(), 32_400);
        for c in 0..9 {
            assert_eq!(frags.iter().filter(|f| f.label == c).count(), 3600);
        }
        assert!(frags.iter().all(|f| f.ids.len() == 64));
    }

    #[test]
    fn exact_length_page_has_one_window() {
        let pages = vec![page(0, (100..164).collect())];
        let frags = sample_fragments(&pages, &labels(1), 64, 20, 1).unwrap();
        assert!(frags
            .iter()
            .all(|f| f.ids == (100..164).collect::<Vec<_>>()));
    }

    #[test]
    fn windows_are_contiguous_and_complete() {
        let pages = vec![page(0, (0..90).collect()), page(0, (1000..1010).collect())];
        let frags = sample_fragments(&pages, &labels(1), 32, 200, 3).unwrap();
        for f in &frags {
            assert!(f.ids.windows(2).all(|w| w[1] == w[0] + 1));
            assert!(f.ids[31] < 90);
        }
    }

    #[test]
    fn class_without_long_page_is_named() {
        let pages = vec![page(0, (0..100).collect()), page(1, (0..10).collect())];
        match sample_fragments(&pages, &labels(2), 64, 5, 0) {
            Err(Error::InsufficientData(name)) => assert_eq!(name, "c1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn seeded() {
        let pages: Vec<_> = (0..3).map(|c| page(c, (0..500).collect())).collect();
        let a = sample_fragments(&pages, &labels(3), 64, 50, 11).unwrap();
        let b = sample_fragments(&pages, &labels(3), 64, 50, 11).unwrap();
        let c = sample_fragments(&pages, &labels(3), 64, 50, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn constant_coverage_scheme() {
        for len in FRAGMENT_LENGTHS {
            let cfg =
                SamplerConfig::with_constant_coverage(len, 64, (3600, 1200, 1200), 0).unwrap();
            assert_eq!(cfg.train_per_class * len, 3600 * 64);
            assert_eq!(cfg.val_per_class * len, 1200 * 64);
        }
        let c256 = SamplerConfig::with_constant_coverage(256, 64, (3600, 1200, 1200), 0).unwrap();
        assert_eq!(
            (c256.train_per_class * 9, c256.val_per_class * 9),
            (8100, 2700)
        );
        assert!(SamplerConfig::with_constant_coverage(100, 64, (3, 1, 1), 0).is_err());
    }
}

//! Input corruption for masked language modelling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tokenizer::{is_special, MASK, N_SPECIALS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskConfig {
    /// Chance that a non-special position becomes a prediction target.
    pub p_select: f64,
    /// Of the selected positions: share replaced by `<mask>`.
    pub p_mask: f64,
    /// Of the selected positions: share replaced by a random token.
    /// The remainder keeps the original token.
    pub p_random: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            p_select: 0.15,
            p_mask: 0.8,
            p_random: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedInput {
    pub tokens: Vec<u32>,
    /// `(position, original id)` for every selected position.
    pub targets: Vec<(usize, u32)>,
}

pub fn mask_inputs(
    tokens: &[u32],
    cfg: &MaskConfig,
    vocab_size: usize,
    rng: &mut impl Rng,
) -> MaskedInput {
    let mut out = tokens.to_vec();
    let mut targets = Vec::new();
    for (i, &id) in tokens.iter().enumerate() {
        if is_special(id) || rng.gen::<f64>() >= cfg.p_select {
            continue;
        }
        targets.push((i, id));
        let u = rng.gen::<f64>();
        if u < cfg.p_mask {
            out[i] = MASK;
        } else if u < cfg.p_mask + cfg.p_random && vocab_size > N_SPECIALS {
            out[i] = rng.gen_range(N_SPECIALS as u32..vocab_size as u32);
        }
    }
    MaskedInput {
        tokens: out,
        targets,
    }
}

pub fn mask_inputs_seeded(
    tokens: &[u32],
    cfg: &MaskConfig,
    vocab_size: usize,
    seed: u64,
) -> MaskedInput {
    mask_inputs(
        tokens,
        cfg,
        vocab_size,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{BOS, EOS};

    fn sample() -> Vec<u32> {
        let mut v = vec![BOS];
        v.extend((0..200).map(|i| 5 + (i * 7) % 40));
        v.push(EOS);
        v
    }

    #[test]
    fn zero_probability_is_identity() {
        let t = sample();
        let cfg = MaskConfig {
            p_select: 0.0,
            ..MaskConfig::default()
        };
        let m = mask_inputs_seeded(&t, &cfg, 64, 3);
        assert_eq!(m.tokens, t);
        assert!(m.targets.is_empty());
    }

    #[test]
    fn full_masking_without_split() {
        let t = sample();
        let cfg = MaskConfig {
            p_select: 1.0,
            p_mask: 1.0,
            p_random: 0.0,
        };
        let m = mask_inputs_seeded(&t, &cfg, 64, 3);
        assert_eq!(m.tokens[0], BOS);
        assert_eq!(*m.tokens.last().unwrap(), EOS);
        assert!(m.tokens[1..t.len() - 1].iter().all(|&x| x == MASK));
        assert_eq!(m.targets.len(), t.len() - 2);
    }

    #[test]
    fn seeded_selection_is_reproducible() {
        let t = sample();
        let cfg = MaskConfig::default();
        assert_eq!(
            mask_inputs_seeded(&t, &cfg, 64, 9),
            mask_inputs_seeded(&t, &cfg, 64, 9)
        );
        assert_ne!(
            mask_inputs_seeded(&t, &cfg, 64, 9),
            mask_inputs_seeded(&t, &cfg, 64, 10)
        );
    }

    #[test]
    fn random_replacements_avoid_specials() {
        let t = sample();
        let cfg = MaskConfig {
            p_select: 1.0,
            p_mask: 0.0,
            p_random: 1.0,
        };
        let m = mask_inputs_seeded(&t, &cfg, 64, 4);
        assert!(m.tokens[1..t.len() - 1]
            .iter()
            .all(|&x| (5..64).contains(&x)));
    }
}

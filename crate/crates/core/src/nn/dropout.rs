//! Dropout mask builders. Masks are pre-scaled by `1 / (1 - p)`.

use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor;

fn draw(rng: &mut impl Rng, p: f64) -> f64 {
    if rng.gen::<f64>() < p {
        0.0
    } else {
        1.0 / (1.0 - p)
    }
}

/// Independent mask per element.
pub fn element_mask(rng: &mut impl Rng, rows: usize, cols: usize, p: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| draw(rng, p)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// One mask per sequence, repeated over its `seq` time steps.
pub fn locked_mask(rng: &mut impl Rng, blocks: usize, seq: usize, cols: usize, p: f64) -> Tensor {
    let mut out = Tensor::zeros(blocks * seq, cols);
    for b in 0..blocks {
        let row: Vec<f64> = (0..cols).map(|_| draw(rng, p)).collect();
        for t in 0..seq {
            out.row_mut(b * seq + t).copy_from_slice(&row);
        }
    }
    out
}

/// Drops whole vocabulary entries: every occurrence of a dropped id is zeroed.
pub fn token_mask(rng: &mut impl Rng, ids: &[u32], cols: usize, p: f64) -> Tensor {
    let mut keep: HashMap<u32, f64> = HashMap::new();
    let mut out = Tensor::zeros(ids.len(), cols);
    for (r, id) in ids.iter().enumerate() {
        let k = *keep.entry(*id).or_insert_with(|| draw(rng, p));
        out.row_mut(r).iter_mut().for_each(|x| *x = k);
    }
    out
}

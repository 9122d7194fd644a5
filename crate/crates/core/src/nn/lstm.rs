//! Weight-dropped LSTM body and its concat-pooling classifier head.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::dropout::{element_mask, locked_mask, token_mask};
use super::graph::{Graph, Var};
use super::model::{BnUpdate, ClassForward, Init, Model};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub(super) fn layer_dims(cfg: &ModelConfig, i: usize) -> (usize, usize) {
    let input = if i == 0 {
        cfg.embed_dim
    } else {
        cfg.hidden_dim
    };
    let output = if i + 1 == cfg.n_layers {
        cfg.lstm_output_dim()
    } else {
        cfg.hidden_dim
    };
    (input, output)
}

pub(super) fn init(cfg: &ModelConfig, init: &mut Init<'_>) {
    init.embedding("embed.tok", cfg.vocab_size, cfg.embed_dim, 0);
    for i in 0..cfg.n_layers {
        let (n_in, h) = layer_dims(cfg, i);
        let a = 1.0 / (h as f64).sqrt();
        init.uniform(&format!("lstm.{i}.w_ih"), n_in, 4 * h, a, 1 + i);
        init.uniform(&format!("lstm.{i}.w_hh"), h, 4 * h, a, 1 + i);
        init.constant(&format!("lstm.{i}.b"), 4 * h, 0.0, 1 + i);
    }
}

pub(super) fn init_head(cfg: &ModelConfig, n_classes: usize, init: &mut Init<'_>) {
    let head = cfg.n_layers + 1;
    let pooled = 3 * cfg.lstm_output_dim();
    init.norm("head.bn1", pooled, head, true);
    init.linear("head.fc1", pooled, cfg.head_dim, head);
    init.norm("head.bn2", cfg.head_dim, head, true);
    init.linear("head.fc2", cfg.head_dim, n_classes, head);
}

pub(super) fn body<'p>(
    model: &'p Model,
    g: &mut Graph<'p>,
    ids: &[u32],
    seq: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Var {
    let cfg = &model.config;
    let drop = cfg.dropout;
    let nb = ids.len() / seq;
    let tok = model.p(g, "embed.tok");
    let mut x = g.gather(tok, ids);
    if let Some(r) = rng.as_deref_mut() {
        if drop.embedding > 0.0 {
            let mask = token_mask(r, ids, cfg.embed_dim, drop.embedding);
            x = g.mul_const(x, mask);
        }
        if drop.input > 0.0 {
            let mask = locked_mask(r, nb, seq, cfg.embed_dim, drop.input);
            x = g.mul_const(x, mask);
        }
    }
    for i in 0..cfg.n_layers {
        let gx = model.linear_named(g, x, &format!("lstm.{i}.w_ih"), &format!("lstm.{i}.b"));
        let mut w = model.p(g, &format!("lstm.{i}.w_hh"));
        if let Some(r) = rng.as_deref_mut() {
            if drop.weight > 0.0 {
                let (rows, cols) = g.value(w).shape();
                let mask = element_mask(r, rows, cols, drop.weight);
                w = g.mul_const(w, mask);
            }
        }
        x = g.lstm_blocks(gx, w, seq);
    }
    x
}

/// `[last; max over time; mean over time]` for each block of `seq` rows.
pub(super) fn concat_pool_var(g: &mut Graph<'_>, hidden: Var, seq: usize) -> Var {
    let nb = g.value(hidden).rows() / seq;
    let last: Vec<u32> = (0..nb).map(|b| (b * seq + seq - 1) as u32).collect();
    let last = g.gather(hidden, &last);
    let max = g.max_blocks(hidden, seq);
    let mean = g.mean_blocks(hidden, seq);
    g.concat_cols(&[last, max, mean])
}

/// Concat pooling of a `T × d` matrix into a `3d` vector.
pub fn concat_pool(hidden: &Tensor) -> Result<Vec<f64>> {
    let (t, d) = hidden.shape();
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    let mut out = hidden.row(t - 1).to_vec();
    let mut max = hidden.row(0).to_vec();
    let mut mean = vec![0.0; d];
    for r in 0..t {
        for (c, &v) in hidden.row(r).iter().enumerate() {
            max[c] = max[c].max(v);
            mean[c] += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    out.extend(max);
    out.extend(mean);
    Ok(out)
}

fn batch_norm(
    model: &Model,
    g: &mut Graph<'_>,
    x: Var,
    name: &str,
    train: bool,
    updates: &mut Vec<BnUpdate>,
) -> Var {
    let gain = model.p(g, &format!("{name}.g"));
    let bias = model.p(g, &format!("{name}.b"));
    let mean_id = model.params.id(&format!("{name}.mean")).expect("bn buffer");
    let var_id = model.params.id(&format!("{name}.var")).expect("bn buffer");
    let rows = g.value(x).rows();
    if train && rows > 1 {
        let y = g.batch_norm(x, gain, bias);
        let (m, v) = g.batch_stats(y).expect("batch-norm node");
        let unbiased = v.map(|s| s * rows as f64 / (rows - 1) as f64);
        updates.push(BnUpdate {
            mean: mean_id,
            var: var_id,
            batch_mean: m.clone(),
            batch_var: unbiased,
        });
        y
    } else {
        let mean = model.params.value(mean_id);
        let var = model.params.value(var_id);
        g.norm_eval(x, mean, var, gain, bias)
    }
}

pub(super) fn head<'p>(
    model: &'p Model,
    g: &mut Graph<'p>,
    hidden: Var,
    nb: usize,
    seq: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<ClassForward> {
    let p = model.config.dropout.output;
    let train = rng.is_some();
    let mut updates = Vec::new();
    let pooled = concat_pool_var(g, hidden, seq);
    let mut x = batch_norm(model, g, pooled, "head.bn1", train, &mut updates);
    x = head_dropout(g, x, p, &mut rng);
    x = model.linear(g, x, "head.fc1");
    let features = g.relu(x);
    let mut x = batch_norm(model, g, features, "head.bn2", train, &mut updates);
    x = head_dropout(g, x, p, &mut rng);
    let logits = model.linear(g, x, "head.fc2");
    debug_assert_eq!(g.value(logits).rows(), nb);
    Ok(ClassForward {
        features,
        logits,
        bn_updates: updates,
    })
}

fn head_dropout(g: &mut Graph<'_>, x: Var, p: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
    match rng {
        Some(r) if p > 0.0 => {
            let (rows, cols) = g.value(x).shape();
            let mask = element_mask(&mut **r, rows, cols, p);
            g.mul_const(x, mask)
        }
        _ => x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_pool_example() {
        let h = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0]]);
        assert_eq!(concat_pool(&h).unwrap(), vec![3.0, 0.0, 3.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn concat_pool_single_row() {
        let h = Tensor::from_rows(&[vec![0.5, -1.0, 2.0]]);
        let p = concat_pool(&h).unwrap();
        assert_eq!(&p[0..3], h.row(0));
        assert_eq!(&p[3..6], h.row(0));
        assert_eq!(&p[6..9], h.row(0));
    }

    #[test]
    fn concat_pool_empty() {
        assert!(matches!(
            concat_pool(&Tensor::zeros(0, 4)),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn concat_pool_permutation() {
        let a = Tensor::from_rows(&[vec![1.0, 5.0], vec![4.0, -2.0], vec![0.0, 3.0]]);
        let b = Tensor::from_rows(&[vec![4.0, -2.0], vec![1.0, 5.0], vec![0.0, 3.0]]);
        let c = Tensor::from_rows(&[vec![0.0, 3.0], vec![4.0, -2.0], vec![1.0, 5.0]]);
        let (pa, pb, pc) = (
            concat_pool(&a).unwrap(),
            concat_pool(&b).unwrap(),
            concat_pool(&c).unwrap(),
        );
        assert_eq!(pa, pb);
        assert_eq!(&pa[2..], &pc[2..]);
        assert_ne!(&pa[..2], &pc[..2]);
    }

    #[test]
    fn graph_pool_matches_tensor_pool() {
        let store = super::super::params::ParamStore::default();
        let mut g = Graph::new(&store);
        let h = Tensor::from_rows(&[
            vec![1.0, 2.0],
            vec![3.0, 0.0],
            vec![-1.0, 4.0],
            vec![2.0, 2.0],
        ]);
        let x = g.input(h.clone());
        let pooled = concat_pool_var(&mut g, x, 2);
        let v = g.value(pooled);
        assert_eq!(
            v.row(0),
            concat_pool(&h.slice_rows(0, 2)).unwrap().as_slice()
        );
        assert_eq!(
            v.row(1),
            concat_pool(&h.slice_rows(2, 2)).unwrap().as_slice()
        );
    }
}

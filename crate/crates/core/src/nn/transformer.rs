//! Pre-norm transformer body shared by the causal and masked models.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::dropout::element_mask;
use super::graph::{Graph, Var};
use super::model::{Init, Model};

pub(super) fn init(cfg: &ModelConfig, init: &mut Init<'_>) {
    let d = cfg.hidden_dim;
    init.embedding("embed.tok", cfg.vocab_size, d, 0);
    init.embedding("embed.pos", cfg.context, d, 0);
    for i in 0..cfg.n_layers {
        let grp = 1 + i;
        init.norm(&format!("layers.{i}.ln1"), d, grp, false);
        init.linear(&format!("layers.{i}.attn.qkv"), d, 3 * d, grp);
        init.linear(&format!("layers.{i}.attn.out"), d, d, grp);
        init.norm(&format!("layers.{i}.ln2"), d, grp, false);
        init.linear(&format!("layers.{i}.mlp.fc"), d, 4 * d, grp);
        init.linear(&format!("layers.{i}.mlp.proj"), 4 * d, d, grp);
    }
    init.norm("final_ln", d, cfg.n_layers, false);
}

fn dropout(g: &mut Graph<'_>, x: Var, p: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
    match rng {
        Some(r) if p > 0.0 => {
            let (rows, cols) = g.value(x).shape();
            let mask = element_mask(&mut **r, rows, cols, p);
            g.mul_const(x, mask)
        }
        _ => x,
    }
}

fn norm(model: &Model, g: &mut Graph<'_>, x: Var, name: &str) -> Var {
    let gain = model.p(g, &format!("{name}.g"));
    let bias = model.p(g, &format!("{name}.b"));
    g.layer_norm(x, gain, bias)
}

pub(super) fn body<'p>(
    model: &'p Model,
    g: &mut Graph<'p>,
    ids: &[u32],
    seq: usize,
    causal: bool,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Var {
    let cfg = &model.config;
    let nb = ids.len() / seq;
    let drop = cfg.dropout;
    let tok = model.p(g, "embed.tok");
    let pos = model.p(g, "embed.pos");
    let positions: Vec<u32> = (0..ids.len()).map(|r| (r % seq) as u32).collect();
    let te = g.gather(tok, ids);
    let pe = g.gather(pos, &positions);
    let mut x = g.add(te, pe);
    x = dropout(g, x, drop.residual, &mut rng);
    for i in 0..cfg.n_layers {
        let h = norm(model, g, x, &format!("layers.{i}.ln1"));
        let qkv = model.linear(g, h, &format!("layers.{i}.attn.qkv"));
        let masks = match &mut rng {
            Some(r) if drop.attention > 0.0 => Some(
                (0..nb * cfg.n_heads)
                    .map(|_| element_mask(&mut **r, seq, seq, drop.attention))
                    .collect(),
            ),
            _ => None,
        };
        let a = g.attention_with_dropout(qkv, cfg.n_heads, causal, seq, masks);
        let a = model.linear(g, a, &format!("layers.{i}.attn.out"));
        let a = dropout(g, a, drop.residual, &mut rng);
        x = g.add(x, a);
        let h = norm(model, g, x, &format!("layers.{i}.ln2"));
        let f = model.linear(g, h, &format!("layers.{i}.mlp.fc"));
        let f = g.gelu(f);
        let f = model.linear(g, f, &format!("layers.{i}.mlp.proj"));
        let f = dropout(g, f, drop.residual, &mut rng);
        x = g.add(x, f);
    }
    norm(model, g, x, "final_ln")
}

//! Convolutional baseline: stacked valid 1-D convolutions over token
//! embeddings, mean-pooled over time.

use super::config::ModelConfig;
use super::graph::{Graph, Var};
use super::model::{Init, Model};

pub(super) fn init(cfg: &ModelConfig, init: &mut Init<'_>) {
    init.embedding("embed.tok", cfg.vocab_size, cfg.embed_dim, 0);
    let mut width = cfg.embed_dim;
    for i in 0..cfg.n_layers {
        init.linear(
            &format!("conv.{i}"),
            cfg.cnn_kernel * width,
            cfg.hidden_dim,
            1 + i,
        );
        width = cfg.hidden_dim;
    }
}

/// Returns the pooled `B × hidden_dim` features (one row per sequence).
pub(super) fn body<'p>(model: &'p Model, g: &mut Graph<'p>, ids: &[u32], seq: usize) -> Var {
    let cfg = &model.config;
    let tok = model.p(g, "embed.tok");
    let mut x = g.gather(tok, ids);
    let mut len = seq;
    for i in 0..cfg.n_layers {
        let u = g.unfold_blocks(x, cfg.cnn_kernel, len);
        let y = model.linear(g, u, &format!("conv.{i}"));
        x = g.relu(y);
        len -= cfg.cnn_kernel - 1;
    }
    g.mean_blocks(x, len)
}

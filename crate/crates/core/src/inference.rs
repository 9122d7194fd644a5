//! Page-level prediction by single pass or overlapping crops, and export of
//! the features feeding the final classification layer.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::{softmax, Graph, Model};
use crate::tokenizer::{BOS, EOS};
use crate::train::argmax;

#[derive(Clone, Debug, PartialEq)]
pub struct PagePrediction {
    pub probs: Vec<f64>,
    pub label: usize,
    pub crops: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleEmbedding {
    pub features: Vec<f64>,
    pub page_id: String,
}

/// Wraps content ids in `<s> ... </s>` when the architecture expects it.
pub fn model_input(model: &Model, ids: &[u32]) -> Vec<u32> {
    if model.config.arch.needs_specials() {
        let mut out = Vec::with_capacity(ids.len() + 2);
        out.push(BOS);
        out.extend_from_slice(ids);
        out.push(EOS);
        out
    } else {
        ids.to_vec()
    }
}

/// Longest content sequence a single forward pass accepts, if bounded.
fn content_limit(model: &Model) -> Option<usize> {
    let cfg = &model.config;
    cfg.arch
        .is_transformer()
        .then(|| cfg.context.saturating_sub(2))
}

/// Keeps the head of an over-long input, with a warning.
fn truncate(model: &Model, tokens: &[u32]) -> Result<Vec<u32>> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    match content_limit(model) {
        Some(limit) if tokens.len() > limit => {
            log::warn!(
                "input of {} tokens exceeds the model context; keeping the first {limit}",
                tokens.len()
            );
            Ok(model_input(model, &tokens[..limit]))
        }
        _ => Ok(model_input(model, tokens)),
    }
}

/// Eval-mode class probabilities for equal-length content sequences.
pub fn predict_batch(model: &Model, batch: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
    let inputs: Vec<Vec<u32>> = batch.iter().map(|ids| model_input(model, ids)).collect();
    let refs: Vec<&[u32]> = inputs.iter().map(Vec::as_slice).collect();
    let mut g = Graph::new(&model.params);
    let out = model.forward_classifier(&mut g, &refs, None)?;
    let logits = g.value(out.logits);
    Ok((0..logits.rows()).map(|r| softmax(logits.row(r))).collect())
}

/// One forward pass over the whole (possibly truncated) sequence.
pub fn predict_single(model: &Model, tokens: &[u32]) -> Result<PagePrediction> {
    let input = truncate(model, tokens)?;
    let probs = model.class_probs(&input)?;
    Ok(PagePrediction {
        label: argmax(&probs),
        probs,
        crops: 1,
    })
}

/// Windows of length `c` at stride `c / 2`, plus a right-aligned tail
/// window when the last one stops short of `t`. Inputs shorter than `c`
/// give the single window `(0, t)`.
pub fn enumerate_crops(t: usize, c: usize) -> Vec<(usize, usize)> {
    let c = c.max(1);
    if t <= c {
        return vec![(0, t)];
    }
    let stride = (c / 2).max(1);
    let mut crops: Vec<(usize, usize)> = (0..)
        .map(|k| k * stride)
        .take_while(|&s| s + c <= t)
        .map(|s| (s, s + c))
        .collect();
    if crops.last().is_some_and(|&(_, e)| e < t) {
        crops.push((t - c, t));
    }
    crops
}

/// Mean of per-crop probabilities over [`enumerate_crops`].
pub fn predict_multicrop(model: &Model, tokens: &[u32], c: usize) -> Result<PagePrediction> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    let crops = enumerate_crops(tokens.len(), c);
    if crops.len() == 1 {
        return predict_single(model, tokens);
    }
    let windows: Vec<&[u32]> = crops.iter().map(|&(s, e)| &tokens[s..e]).collect();
    let per_crop = predict_batch(model, &windows)?;
    let probs = mean_probs(&per_crop);
    Ok(PagePrediction {
        label: argmax(&probs),
        probs,
        crops: crops.len(),
    })
}

/// Arithmetic mean in crop order.
pub fn mean_probs(per_crop: &[Vec<f64>]) -> Vec<f64> {
    let n = per_crop.len() as f64;
    let mut out = vec![0.0; per_crop[0].len()];
    for p in per_crop {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Single pass or multi-crop as chosen.
pub fn predict_page(
    model: &Model,
    tokens: &[u32],
    crop: usize,
    multicrop: bool,
) -> Result<PagePrediction> {
    if multicrop {
        predict_multicrop(model, tokens, crop)
    } else {
        predict_single(model, tokens)
    }
}

/// Features entering the final classification layer for one page.
pub fn extract_embedding(model: &Model, tokens: &[u32], page_id: &str) -> Result<StyleEmbedding> {
    let input = truncate(model, tokens)?;
    let (_, features) = model.classify(&input)?;
    Ok(StyleEmbedding {
        features,
        page_id: page_id.to_string(),
    })
}

/// One line per page: id, predicted class name, crop count, probabilities.
pub fn render_predictions(
    config_hash: &str,
    class_names: &[String],
    rows: &[(String, PagePrediction)],
) -> String {
    let mut s =
        format!("# config_hash={config_hash}\n# page_id\tpredicted\tcrops\tprobabilities\n");
    for (id, p) in rows {
        let probs: Vec<String> = p.probs.iter().map(|v| format!("{v:.6}")).collect();
        let name = class_names.get(p.label).map_or("?", String::as_str);
        let _ = writeln!(s, "{id}\t{name}\t{}\t{}", p.crops, probs.join(","));
    }
    s
}

/// Header with the dimension, then one row of f32 decimals per page.
pub fn render_embeddings(config_hash: &str, rows: &[StyleEmbedding]) -> String {
    let dim = rows.first().map_or(0, |r| r.features.len());
    let mut s = format!("# dim={dim} config_hash={config_hash}\n");
    for r in rows {
        let vals: Vec<String> = r.features.iter().map(|&v| (v as f32).to_string()).collect();
        let _ = writeln!(s, "{}\t{}", r.page_id, vals.join(" "));
    }
    s
}

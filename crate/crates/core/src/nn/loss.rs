//! Training objectives on top of forward outputs.

use super::graph::{Graph, Var};
use super::model::LmForward;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    NextToken,
    Masked,
    XentClass,
}

/// Positions `0..T-1` of each sequence predict positions `1..T`.
pub fn next_token_loss(g: &mut Graph<'_>, out: &LmForward, batch: &[&[u32]]) -> Result<Var> {
    if out.seq < 2 {
        return Err(Error::NoTargets);
    }
    let targets: Vec<(usize, usize)> = batch
        .iter()
        .enumerate()
        .flat_map(|(b, s)| (0..out.seq - 1).map(move |t| (b * out.seq + t, s[t + 1] as usize)))
        .collect();
    Ok(g.cross_entropy(out.logits, &targets))
}

/// Loss over the corrupted positions only; `targets[b]` lists `(position, id)`.
pub fn masked_loss(
    g: &mut Graph<'_>,
    out: &LmForward,
    targets: &[Vec<(usize, u32)>],
) -> Result<Var> {
    let flat: Vec<(usize, usize)> = targets
        .iter()
        .enumerate()
        .flat_map(|(b, t)| t.iter().map(move |&(p, id)| (b * out.seq + p, id as usize)))
        .collect();
    if flat.is_empty() {
        return Err(Error::NoTargets);
    }
    Ok(g.cross_entropy(out.logits, &flat))
}

/// One label per row of `logits`.
pub fn class_loss(g: &mut Graph<'_>, logits: Var, labels: &[usize]) -> Result<Var> {
    let (rows, n_classes) = g.value(logits).shape();
    if labels.len() != rows {
        return Err(Error::Config(format!(
            "{} labels for {rows} inputs",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Config(format!(
            "label {bad} does not fit a {n_classes}-way classifier"
        )));
    }
    if labels.is_empty() {
        return Err(Error::NoTargets);
    }
    let targets: Vec<(usize, usize)> = labels.iter().copied().enumerate().collect();
    Ok(g.cross_entropy(logits, &targets))
}

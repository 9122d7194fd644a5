//! Language-model pretraining (also used for finetuning an existing LM on a
//! second corpus).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{clip_grad_norm, AdamW, AdamWConfig};
use super::schedule::{one_cycle, OneCycleConfig};
use crate::error::{Error, Result};
use crate::nn::{mask_inputs, masked_loss, next_token_loss, Arch, Graph, MaskConfig, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct LmTrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Shape of the learning-rate cycle; `total_steps` is filled in from
    /// the data size.
    pub cycle: OneCycleConfig,
    pub adam: AdamWConfig,
    pub clip: f64,
    pub mask: MaskConfig,
    /// Validate every this many steps; 0 validates at epoch ends only.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            batch_size: 16,
            epochs: 1,
            cycle: OneCycleConfig::new(3e-3, 1),
            adam: AdamWConfig::default(),
            clip: 1.0,
            mask: MaskConfig::default(),
            eval_every: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub momentum: f64,
    pub loss: f64,
}

impl StepLog {
    pub fn line(&self) -> String {
        format!(
            "{}, {:e}, {}, {}",
            self.step, self.lr, self.momentum, self.loss
        )
    }
}

#[derive(Clone, Debug)]
pub struct LmTrainResult {
    /// Parameters at the best validation perplexity (the final ones when
    /// there is no validation data).
    pub model: Model,
    pub log: Vec<StepLog>,
    /// `(step, validation perplexity)`.
    pub val_trace: Vec<(usize, f64)>,
    pub best_val_ppl: Option<f64>,
}

/// Perplexity of `model` on `seqs`, weighted by predicted tokens. Masked
/// models are scored on a corruption drawn from `seed`.
pub fn lm_perplexity(
    model: &Model,
    seqs: &[Vec<u32>],
    mask: &MaskConfig,
    seed: u64,
    batch_size: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in seqs.chunks(batch_size.max(1)) {
        let mut g = Graph::new(&model.params);
        let (loss, n) = if model.config.arch == Arch::Masked {
            let masked: Vec<_> = chunk
                .iter()
                .map(|s| mask_inputs(s, mask, model.config.vocab_size, &mut rng))
                .collect();
            let inputs: Vec<&[u32]> = masked.iter().map(|m| m.tokens.as_slice()).collect();
            let targets: Vec<_> = masked.iter().map(|m| m.targets.clone()).collect();
            let n: usize = targets.iter().map(Vec::len).sum();
            if n == 0 {
                continue;
            }
            let out = model.forward_lm(&mut g, &inputs, None)?;
            (masked_loss(&mut g, &out, &targets)?, n)
        } else {
            let inputs: Vec<&[u32]> = chunk.iter().map(Vec::as_slice).collect();
            let out = model.forward_lm(&mut g, &inputs, None)?;
            if out.seq < 2 {
                continue;
            }
            (
                next_token_loss(&mut g, &out, &inputs)?,
                chunk.len() * (out.seq - 1),
            )
        };
        total += g.scalar(loss) * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::NoTargets);
    }
    Ok((total / count as f64).exp())
}

/// Trains `model` on equal-length windows with one one-cycle run spanning
/// all epochs.
pub fn pretrain_lm(
    mut model: Model,
    train: &[Vec<u32>],
    val: &[Vec<u32>],
    cfg: &LmTrainConfig,
) -> Result<LmTrainResult> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config(
            "batch_size and epochs must be positive".into(),
        ));
    }
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let cycle = OneCycleConfig {
        total_steps: per_epoch * cfg.epochs,
        ..cfg.cycle
    };
    cycle.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.adam, model.params.len());
    let frozen = vec![false; model.n_groups()];
    let mut log = Vec::with_capacity(cycle.total_steps);
    let mut val_trace = Vec::new();
    let mut best: Option<(f64, Model)> = None;
    let mut step = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut validate =
        |model: &Model, step: usize, best: &mut Option<(f64, Model)>| -> Result<()> {
            if val.is_empty() {
                return Ok(());
            }
            let ppl = lm_perplexity(model, val, &cfg.mask, cfg.seed ^ 0x5eed, cfg.batch_size)?;
            val_trace.push((step, ppl));
            if best.as_ref().is_none_or(|(b, _)| ppl < *b) {
                *best = Some((ppl, model.clone()));
            }
            Ok(())
        };

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let (lr, momentum) = one_cycle(&cycle, step)?;
            let batch: Vec<&[u32]> = idx.iter().map(|&i| train[i].as_slice()).collect();
            let trained = {
                let mut g = Graph::new(&model.params);
                let loss = if model.config.arch == Arch::Masked {
                    let masked: Vec<_> = batch
                        .iter()
                        .map(|s| mask_inputs(s, &cfg.mask, model.config.vocab_size, &mut rng))
                        .collect();
                    let inputs: Vec<&[u32]> = masked.iter().map(|m| m.tokens.as_slice()).collect();
                    let targets: Vec<_> = masked.iter().map(|m| m.targets.clone()).collect();
                    let out = model.forward_lm(&mut g, &inputs, Some(&mut rng))?;
                    match masked_loss(&mut g, &out, &targets) {
                        Err(Error::NoTargets) => None,
                        other => Some(other?),
                    }
                } else {
                    let out = model.forward_lm(&mut g, &batch, Some(&mut rng))?;
                    Some(next_token_loss(&mut g, &out, &batch)?)
                };
                match loss {
                    Some(loss) => {
                        let value = g.scalar(loss);
                        if !value.is_finite() {
                            return Err(Error::Diverged { step, loss: value });
                        }
                        Some((value, g.backward(loss)))
                    }
                    None => None,
                }
            };
            if let Some((value, mut grads)) = trained {
                if cfg.clip > 0.0 {
                    clip_grad_norm(&mut grads, cfg.clip);
                }
                let lrs = vec![lr; model.n_groups()];
                opt.step(&mut model.params, &grads, &lrs, momentum, &frozen);
                log.push(StepLog {
                    step,
                    lr,
                    momentum,
                    loss: value,
                });
            }
            step += 1;
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 && step < cycle.total_steps {
                validate(&model, step, &mut best)?;
            }
        }
        validate(&model, step, &mut best)?;
    }
    let (best_val_ppl, model) = match best {
        Some((ppl, m)) => (Some(ppl), m),
        None => (None, model),
    };
    Ok(LmTrainResult {
        model,
        log,
        val_trace,
        best_val_ppl,
    })
}

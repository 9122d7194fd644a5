//! Classifier finetuning with discriminative rates and gradual unfreezing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lm::StepLog;
use super::metrics::{compute_metrics, MetricsReport};
use super::optim::{clip_grad_norm, AdamW, AdamWConfig};
use super::schedule::{discriminative_lrs, one_cycle, OneCycleConfig};
use crate::corpus::Fragment;
use crate::error::{Error, Result};
use crate::inference::{model_input, predict_batch};
use crate::nn::{class_loss, Graph, Model};

pub const DEFAULT_FACTOR: f64 = 2.6;

/// One one-cycle run with the `unfrozen` output-side groups trainable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage {
    pub unfrozen: usize,
    pub steps: usize,
    pub lr_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetunePlan {
    pub stages: Vec<Stage>,
    /// Ratio between the rates of adjacent layer groups.
    pub factor: f64,
    pub batch_size: usize,
    /// Shape of each stage's cycle; `lr_max` and `total_steps` come from the stage.
    pub cycle: OneCycleConfig,
    pub adam: AdamWConfig,
    pub clip: f64,
    pub seed: u64,
}

impl FinetunePlan {
    fn base(stages: Vec<Stage>, seed: u64) -> Self {
        FinetunePlan {
            stages,
            factor: DEFAULT_FACTOR,
            batch_size: 32,
            cycle: OneCycleConfig::new(1e-3, 1),
            adam: AdamWConfig::default(),
            clip: 1.0,
            seed,
        }
    }

    /// Every group trainable from the first step.
    pub fn unfrozen(n_groups: usize, lr_max: f64, steps: usize, seed: u64) -> Self {
        Self::base(
            vec![Stage {
                unfrozen: n_groups,
                steps,
                lr_max,
            }],
            seed,
        )
    }

    /// Head first, then one more group per stage until all are trainable;
    /// `steps` is split evenly across the stages.
    pub fn gradual(n_groups: usize, lr_max: f64, steps: usize, seed: u64) -> Self {
        let n = n_groups.max(1);
        let stages = (1..=n)
            .map(|k| Stage {
                unfrozen: k,
                steps: steps / n + usize::from(k <= steps % n),
                lr_max,
            })
            .collect();
        Self::base(stages, seed)
    }

    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.steps).sum()
    }

    pub fn validate(&self, n_groups: usize) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("finetune plan has no stages".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for s in &self.stages {
            if s.unfrozen == 0 || s.unfrozen > n_groups {
                return Err(Error::Config(format!(
                    "stage unfreezes {} of {n_groups} groups",
                    s.unfrozen
                )));
            }
        }
        discriminative_lrs(1.0, n_groups, self.factor)?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneResult {
    pub model: Model,
    pub log: Vec<StepLog>,
    pub val_report: Option<MetricsReport>,
}

/// Fresh classifier, with the body copied from `pretrained` when given.
pub fn init_classifier(
    config: crate::nn::ModelConfig,
    pretrained: Option<&Model>,
    seed: u64,
) -> Result<Model> {
    let mut model = Model::new(config, seed)?;
    if let Some(lm) = pretrained {
        model.load_body_from(lm)?;
    }
    Ok(model)
}

/// Predicted classes and metrics for `fragments`.
pub fn evaluate_fragments(
    model: &Model,
    fragments: &[Fragment],
    batch_size: usize,
) -> Result<MetricsReport> {
    let n_classes = model
        .config
        .n_classes
        .ok_or_else(|| Error::Config("model has no classification head".into()))?;
    let mut preds = Vec::with_capacity(fragments.len());
    for chunk in fragments.chunks(batch_size.max(1)) {
        let ids: Vec<&[u32]> = chunk.iter().map(|f| f.ids.as_slice()).collect();
        for p in predict_batch(model, &ids)? {
            preds.push(super::metrics::argmax(&p));
        }
    }
    let labels: Vec<usize> = fragments.iter().map(|f| f.label).collect();
    compute_metrics(&preds, &labels, n_classes)
}

pub fn finetune_classifier(
    mut model: Model,
    train: &[Fragment],
    val: &[Fragment],
    plan: &FinetunePlan,
) -> Result<FinetuneResult> {
    let n_classes = model
        .config
        .n_classes
        .ok_or_else(|| Error::Config("model has no classification head".into()))?;
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(f) = train.iter().chain(val).find(|f| f.label >= n_classes) {
        return Err(Error::Config(format!(
            "label {} does not fit a {n_classes}-way classifier",
            f.label
        )));
    }
    let n_groups = model.n_groups();
    plan.validate(n_groups)?;
    let inputs: Vec<Vec<u32>> = train.iter().map(|f| model_input(&model, &f.ids)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut opt = AdamW::new(plan.adam, model.params.len());
    let mut log = Vec::with_capacity(plan.total_steps());
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut global = 0;
    for stage in &plan.stages {
        let cycle = OneCycleConfig {
            lr_max: stage.lr_max,
            total_steps: stage.steps,
            ..plan.cycle
        };
        if stage.steps > 0 {
            cycle.validate()?;
        }
        let frozen: Vec<bool> = (0..n_groups)
            .map(|g| g + stage.unfrozen < n_groups)
            .collect();
        for s in 0..stage.steps {
            let (lr, momentum) = one_cycle(&cycle, s)?;
            // Epoch-style passes over a fresh shuffle, carried across stages.
            let mut idx = Vec::with_capacity(plan.batch_size);
            while idx.len() < plan.batch_size.min(train.len()) {
                if cursor == order.len() {
                    order = (0..train.len()).collect();
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                idx.push(order[cursor]);
                cursor += 1;
            }
            let batch: Vec<&[u32]> = idx.iter().map(|&i| inputs[i].as_slice()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train[i].label).collect();
            let (value, mut grads, updates) = {
                let mut g = Graph::new(&model.params);
                let out = model.forward_classifier(&mut g, &batch, Some(&mut rng))?;
                let loss = class_loss(&mut g, out.logits, &labels)?;
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        step: global,
                        loss: value,
                    });
                }
                (value, g.backward(loss), out.bn_updates)
            };
            if plan.clip > 0.0 {
                clip_grad_norm(&mut grads, plan.clip);
            }
            let lrs = discriminative_lrs(lr, n_groups, plan.factor)?;
            opt.step(&mut model.params, &grads, &lrs, momentum, &frozen);
            model.apply_bn_updates(&updates);
            log.push(StepLog {
                step: global,
                lr,
                momentum,
                loss: value,
            });
            global += 1;
        }
    }
    let val_report = if val.is_empty() {
        None
    } else {
        Some(evaluate_fragments(&model, val, 64)?)
    };
    Ok(FinetuneResult {
        model,
        log,
        val_report,
    })
}

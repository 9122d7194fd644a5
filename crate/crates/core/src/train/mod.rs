//! Training recipes: schedules, optimizer, LM pretraining, classifier
//! finetuning and evaluation metrics.

pub mod finetune;
pub mod lm;
pub mod metrics;
pub mod optim;
pub mod range_test;
pub mod report;
pub mod schedule;

pub use finetune::{
    evaluate_fragments, finetune_classifier, init_classifier, FinetunePlan, FinetuneResult, Stage,
};
pub use lm::{lm_perplexity, pretrain_lm, LmTrainConfig, LmTrainResult, StepLog};
pub use metrics::{
    argmax, compute_metrics, from_confusion, perplexity, ClassMetrics, MetricsReport,
};
pub use optim::{clip_grad_norm, AdamW, AdamWConfig};
pub use range_test::{lr_range_test, range_lr, RangeTestResult};
pub use report::{fingerprint_files, render_lm_report, render_report, RunMetadata};
pub use schedule::{discriminative_lrs, one_cycle, OneCycleConfig};

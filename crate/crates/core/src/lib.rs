//! Composer style classification over bootleg scores.
//!
//! The pipeline runs in three stages: language-model pretraining on
//! unlabeled scores, classifier finetuning on fixed-length fragments, and
//! page-level inference by averaging over overlapping crops.

pub mod bootleg;
pub mod corpus;
pub mod error;
pub mod inference;
pub mod nn;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};

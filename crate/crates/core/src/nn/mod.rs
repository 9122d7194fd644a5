//! Neural language models and classifiers on a small autodiff engine.

pub mod checkpoint;
mod cnn;
pub mod config;
pub mod dropout;
pub mod gradcheck;
pub mod graph;
pub mod loss;
mod lstm;
pub mod masking;
pub mod model;
pub mod params;
pub mod tensor;
mod transformer;

pub use checkpoint::Checkpoint;
pub use config::{Arch, DropoutConfig, ModelConfig};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{Graph, Var};
pub use loss::{class_loss, masked_loss, next_token_loss, LossKind};
pub use lstm::concat_pool;
pub use masking::{mask_inputs, mask_inputs_seeded, MaskConfig, MaskedInput};
pub use model::{BnUpdate, ClassForward, LmForward, Model};
pub use params::{Grads, Param, ParamId, ParamStore};
pub use tensor::{softmax, Tensor};

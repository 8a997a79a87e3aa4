//! Self-supervised and federated self-supervised pretraining for binary
//! image classification across two data sites.
//!
//! The crate carries its own small f64 tensor library with a tape-based
//! reverse-mode autodiff, a compact convolutional encoder, SimCLR-style
//! contrastive pretraining, serial federated schedules, fine-tuning with a
//! class-weighted BCE loss and the evaluation metrics.

pub mod augment;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod federation;
pub mod finetune;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod rng;
pub mod snapshot;
pub mod ssl;
pub mod stopping;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Execution;
pub use snapshot::{ModelSnapshot, Role};
pub use tensor::Tensor;

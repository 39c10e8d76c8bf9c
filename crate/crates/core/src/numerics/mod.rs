//! Dense `f64` arithmetic with reverse-mode gradients, the AdamW optimizer,
//! the cosine schedule, a finite-difference checker and the seeded RNG.

pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use gradcheck::{grad_check, max_relative_error, relative_error};
pub use graph::{sigmoid, Gradients, Graph, Var, NORM_EPS};
pub use ops::{cosine_affinity, multi_head_self_attention, AttentionWeights, LayerNormParams, Linear};
pub use optim::{adam_step, cosine_lr, AdamWConfig, OptimizerState};
pub use rng::Rng;
pub use tensor::{DiffTensor, Mat};

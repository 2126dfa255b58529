//! Dense tensors, a reverse-mode tape, graph-attention and linear layers,
//! Adam and a finite-difference gradient checker. Only what the pretraining
//! model needs.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use layers::{gat_forward, Activation, Binding, GatLayer, Linear, ParamId, ParamStore, Parameter};
pub use ops::{linear_backward, linear_forward, Adjacency};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

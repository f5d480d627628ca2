//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tensor`] is a shaped row-major buffer. Operations on tensors that
//! track gradients record a backward graph; [`Tensor::backward`] walks the
//! graph in reverse topological order and accumulates gradients into the
//! leaf parameters. The op set is deliberately small: matrix multiply,
//! broadcast add, elementwise arithmetic, a handful of activations,
//! reductions, concatenation, gather and slice along the last axis.
//!
//! The crate also carries the [`RmsProp`] optimizer with global-norm
//! gradient clipping and a value-exact text checkpoint format
//! ([`ParamSet`]).
//!
//! Everything is single-threaded by design: graphs are built and walked on
//! one thread, and parallel rollouts are expected to construct their own
//! parameter sets.

mod checkpoint;
mod kernels;
mod optim;
mod tensor;

pub use checkpoint::{parse_checkpoint, CheckpointError, ParamSet, CHECKPOINT_MAGIC};
pub use optim::{zero_grads, OptimError, RmsProp};
pub use tensor::{grad_enabled, no_grad, Tensor};

//! Causal-intervention keypoint estimation: an exact SCM oracle for the
//! backdoor adjustment, an uncertainty-gated counterfactual embedding
//! replacement, hierarchical graph reasoning over a skeleton, the
//! dual-path consistency objective and a planted-confounder benchmark.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, checkpoints
//! and the command line live in the `deconf` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod causal;
pub mod gradcheck;
pub mod gradsuite;
pub mod model;
pub mod objective;
pub mod trainer;
pub mod skeleton;
pub mod synth;
pub mod tensor;

pub use autodiff::{Gradients, Graph, GraphError, NodeId};
pub use tensor::{Tensor, TensorError};

//! Reverse-mode automatic differentiation over `f32` tensors, sized for
//! small convolutional video models on a CPU.

pub mod conv;
mod graph;
pub mod layers;
mod params;

pub use graph::{Gradients, Graph, Var};
pub use params::{AdamConfig, ParamId, ParamStore};

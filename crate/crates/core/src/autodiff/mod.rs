//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records one forward pass over a borrowed [`ParameterStore`];
//! `backward` returns [`Gradients`] which are staged into the store and
//! applied with [`ParameterStore::adam_step`].

mod graph;
mod params;

pub use graph::{Gradients, Graph, LstmParams, NodeId};
pub use params::{AdamConfig, Init, ParamId, Parameter, ParameterStore};

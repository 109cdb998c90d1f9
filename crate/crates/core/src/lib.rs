//! Joint part-of-speech tagging and graph-based dependency parsing with
//! BiLSTM features.

pub mod autodiff;
pub mod checkpoint;
pub mod conllu;
pub mod decoder;
pub mod error;
pub mod lexicon;
pub mod metrics;
pub mod network;
pub mod trainer;

pub use error::{Error, Result, Shape};

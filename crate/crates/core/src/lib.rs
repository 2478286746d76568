//! Low-bit fixed-point quantization of feed-forward networks with
//! gradient-free neuroevolution fine-tuning.
//!
//! The pipeline has two phases. [`evolution::sensitivity_rank`] quantizes
//! each weighted layer on its own and orders layers from least to most
//! damaged. [`evolution::finetune_model`] then walks that order and, per
//! layer, evolves a population of quantized weight tensors whose mutations
//! shift a few weights to neighbouring grid points.

pub mod error;
pub mod evolution;
pub mod io;
pub mod metrics;
pub mod netgraph;
pub mod quantizer;
pub mod tensor;

pub use error::{Error, Result};
pub use metrics::{DatasetEvaluator, Evaluator, Metric};
pub use netgraph::{Layer, LayerKind, LayerSpec, Model};
pub use quantizer::{QuantScheme, QuantizedLayer, SchemeMap};
pub use tensor::Tensor;

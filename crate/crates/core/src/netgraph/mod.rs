//! Sequential feed-forward models: layer descriptions, shape propagation,
//! the forward pass, and MAC/memory accounting.

pub mod complexity;

pub use complexity::{complexity, cycle_ratio, ComplexityReport, LayerComplexity};

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Conv2d,
    Relu,
    Maxpool2d,
    Flatten,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Maxpool2d => "maxpool2d",
            LayerKind::Flatten => "flatten",
        };
        f.write_str(s)
    }
}

/// A layer's operation together with its parameters.
///
/// Dense weights are laid out `[in_features, out_features]` so the layer
/// computes `x · W + b`; convolution weights are `[D, C, KH, KW]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        weights: Tensor,
        bias: Option<Tensor>,
    },
    Conv2d {
        weights: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        padding: usize,
    },
    Relu,
    Maxpool2d {
        kernel: usize,
        stride: usize,
    },
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::Conv2d { .. } => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::Maxpool2d { .. } => LayerKind::Maxpool2d,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    pub fn weights(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense { weights, .. } | Layer::Conv2d { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense { bias, .. } | Layer::Conv2d { bias, .. } => bias.as_ref(),
            _ => None,
        }
    }

    fn weights_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Dense { weights, .. } | Layer::Conv2d { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match self {
            Layer::Dense { weights, bias } => {
                let ws = weights.shape();
                if ws.len() != 2 {
                    return Err(format!("dense weights must be rank 2, got {ws:?}"));
                }
                if input != [ws[0]] {
                    return Err(format!(
                        "dense layer expects input [{}], got {input:?}",
                        ws[0]
                    ));
                }
                check_bias(bias.as_ref(), ws[1])?;
                Ok(vec![ws[1]])
            }
            Layer::Conv2d {
                weights,
                bias,
                stride,
                padding,
            } => {
                let ws = weights.shape();
                if ws.len() != 4 {
                    return Err(format!("conv2d weights must be rank 4, got {ws:?}"));
                }
                if input.len() != 3 || input[0] != ws[1] {
                    return Err(format!(
                        "conv2d with weights {ws:?} expects input [{}, H, W], got {input:?}",
                        ws[1]
                    ));
                }
                check_bias(bias.as_ref(), ws[0])?;
                let oh = tensor::conv_output_dim(input[1], ws[2], *stride, *padding);
                let ow = tensor::conv_output_dim(input[2], ws[3], *stride, *padding);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![ws[0], oh, ow]),
                    _ => Err(format!(
                        "kernel {}x{} (stride {stride}, padding {padding}) does not fit input {input:?}",
                        ws[2], ws[3]
                    )),
                }
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Maxpool2d { kernel, stride } => {
                if input.len() != 3 {
                    return Err(format!("maxpool2d expects [C, H, W], got {input:?}"));
                }
                let oh = tensor::conv_output_dim(input[1], *kernel, *stride, 0);
                let ow = tensor::conv_output_dim(input[2], *kernel, *stride, 0);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![input[0], oh, ow]),
                    _ => Err(format!(
                        "window {kernel} (stride {stride}) does not fit input {input:?}"
                    )),
                }
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense { weights, bias } => {
                let y = tensor::matmul(x, weights)?;
                match bias {
                    Some(b) => tensor::add_bias(&y, b),
                    None => Ok(y),
                }
            }
            Layer::Conv2d {
                weights,
                bias,
                stride,
                padding,
            } => {
                let y = tensor::conv2d(x, weights, *stride, *padding)?;
                match bias {
                    Some(b) => tensor::add_bias(&y, b),
                    None => Ok(y),
                }
            }
            Layer::Relu => Ok(tensor::relu(x)),
            Layer::Maxpool2d { kernel, stride } => tensor::maxpool2d(x, *kernel, *stride),
            Layer::Flatten => Ok(tensor::flatten(x)),
        }
    }
}

fn check_bias(bias: Option<&Tensor>, width: usize) -> std::result::Result<(), String> {
    match bias {
        Some(b) if b.shape() != [width] => Err(format!(
            "bias shape {:?} does not match width {width}",
            b.shape()
        )),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub layer: Layer,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, layer: Layer) -> Self {
        Self {
            name: name.into(),
            layer,
        }
    }

    pub fn kind(&self) -> LayerKind {
        self.layer.kind()
    }

    pub fn weights(&self) -> Option<&Tensor> {
        self.layer.weights()
    }
}

/// An ordered stack of layers applied to inputs of a fixed per-sample shape.
///
/// Construction validates name uniqueness and runs shape propagation, so a
/// `Model` value is always executable.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
}

impl Model {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Validation(format!(
                "input shape {input_shape:?} must be non-empty with positive dimensions"
            )));
        }
        let mut seen = HashSet::new();
        for spec in &layers {
            if !seen.insert(spec.name.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate layer name `{}`",
                    spec.name
                )));
            }
        }
        let model = Self {
            input_shape,
            layers,
        };
        model.propagate_shapes()?;
        Ok(model)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_weights(&self, name: &str) -> Result<&Tensor> {
        let spec = self
            .layer(name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))?;
        spec.weights()
            .ok_or_else(|| Error::layer(name, format!("{} layer has no weights", spec.kind())))
    }

    /// Names and weights of the dense/conv layers, in model order.
    pub fn weighted_layers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.layers
            .iter()
            .filter_map(|l| l.weights().map(|w| (l.name.as_str(), w)))
    }

    /// Per-sample output shape of every layer (batch axis excluded).
    pub fn propagate_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut current = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for spec in &self.layers {
            current = spec
                .layer
                .output_shape(&current)
                .map_err(|msg| Error::layer(&spec.name, msg))?;
            shapes.push(current.clone());
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.propagate_shapes()
            .expect("validated at construction")
            .pop()
            .unwrap_or_else(|| self.input_shape.clone())
    }

    /// Runs the batch `[N, input_shape...]` through every layer in order.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        if batch.rank() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..]
        {
            return Err(Error::Dimension(format!(
                "batch shape {:?} does not match model input [N, {}]",
                batch.shape(),
                self.input_shape
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        let mut x = batch.clone();
        for spec in &self.layers {
            x = spec
                .layer
                .apply(&x)
                .map_err(|e| Error::layer(&spec.name, e.to_string()))?;
        }
        Ok(x)
    }

    /// Returns a copy of the model with the named layer's weights replaced.
    pub fn with_layer_weights(&self, name: &str, weights: Tensor) -> Result<Model> {
        let current = self.layer_weights(name)?;
        if current.shape() != weights.shape() {
            return Err(Error::layer(
                name,
                format!(
                    "replacement weights {:?} do not match {:?}",
                    weights.shape(),
                    current.shape()
                ),
            ));
        }
        let mut next = self.clone();
        let slot = next
            .layers
            .iter_mut()
            .find(|l| l.name == name)
            .and_then(|l| l.layer.weights_mut())
            .expect("checked above");
        *slot = weights;
        Ok(next)
    }
}

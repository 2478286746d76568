//! MAC, memory and relative-cycle accounting.
//!
//! A layer with `C` input channels, `D` output channels, an `H x W` filter
//! and `P` output positions performs `P·C·D·H·W` multiply-accumulates and
//! stores `C·D·H·W` weights. Dense layers count as a `1 x 1` filter with a
//! single output position.
//!
//! The cycle model charges each MAC `(weight_bits - 1) · act_bits` units:
//! the magnitude bits of a signed weight times the bits of an unsigned
//! (post-ReLU) activation, i.e. the partial products of an array
//! multiplier. A 32-bit floating point MAC is charged the cost of nine
//! 8x8-bit integer MACs.

use num_rational::Ratio;
use serde::{Serialize, Serializer};

use super::{Layer, Model};
use crate::error::{Error, Result};

pub const MIN_BITS: u32 = 4;
pub const MAX_BITS: u32 = 32;

const FLOAT_MAC_COST: u64 = 9 * 7 * 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerComplexity {
    pub name: String,
    /// Output positions per sample.
    pub positions: u64,
    pub in_channels: u64,
    pub out_channels: u64,
    pub kernel_h: u64,
    pub kernel_w: u64,
    pub mac_count: u64,
    pub memory_words: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComplexityReport {
    pub layers: Vec<LayerComplexity>,
    pub total_macs: u64,
    pub total_memory_words: u64,
    pub weight_bits: u32,
    pub act_bits: u32,
    /// Cycles per MAC relative to the floating point baseline.
    #[serde(serialize_with = "ratio_as_string")]
    pub cycle_ratio: Ratio<u64>,
}

fn ratio_as_string<S: Serializer>(r: &Ratio<u64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

/// Relative per-MAC cycle cost of a `weight_bits` x `act_bits` configuration.
pub fn cycle_ratio(weight_bits: u32, act_bits: u32) -> Result<Ratio<u64>> {
    for (what, bits) in [("weight", weight_bits), ("activation", act_bits)] {
        if !(MIN_BITS..=MAX_BITS).contains(&bits) {
            return Err(Error::Config(format!(
                "{what} bit width {bits} outside [{MIN_BITS}, {MAX_BITS}]"
            )));
        }
    }
    let cost = u64::from(weight_bits - 1) * u64::from(act_bits);
    Ok(Ratio::new(cost, FLOAT_MAC_COST))
}

pub fn complexity(model: &Model, weight_bits: u32, act_bits: u32) -> Result<ComplexityReport> {
    let cycle_ratio = cycle_ratio(weight_bits, act_bits)?;
    let shapes = model.propagate_shapes()?;
    let mut layers = Vec::new();
    for (spec, out_shape) in model.layers().iter().zip(&shapes) {
        let (positions, c, d, h, w) = match &spec.layer {
            Layer::Dense { weights, .. } => {
                let s = weights.shape();
                (1, s[0], s[1], 1, 1)
            }
            Layer::Conv2d { weights, .. } => {
                let s = weights.shape();
                (out_shape[1] * out_shape[2], s[1], s[0], s[2], s[3])
            }
            _ => continue,
        };
        let [positions, c, d, h, w] = [positions, c, d, h, w].map(|v| v as u64);
        let memory_words = c * d * h * w;
        layers.push(LayerComplexity {
            name: spec.name.clone(),
            positions,
            in_channels: c,
            out_channels: d,
            kernel_h: h,
            kernel_w: w,
            mac_count: positions * memory_words,
            memory_words,
        });
    }
    Ok(ComplexityReport {
        total_macs: layers.iter().map(|l| l.mac_count).sum(),
        total_memory_words: layers.iter().map(|l| l.memory_words).sum(),
        layers,
        weight_bits,
        act_bits,
        cycle_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::LayerSpec;
    use crate::tensor::Tensor;

    #[test]
    fn conv_layer_counts() {
        // 2x4x4 input, 3 kernels of 3x3 without padding -> 2x2 output map (P = 4).
        let m = Model::new(
            vec![2, 4, 4],
            vec![LayerSpec::new(
                "conv",
                Layer::Conv2d {
                    weights: Tensor::zeros(vec![3, 2, 3, 3]).unwrap(),
                    bias: None,
                    stride: 1,
                    padding: 0,
                },
            )],
        )
        .unwrap();
        let r = complexity(&m, 8, 8).unwrap();
        assert_eq!(r.layers[0].positions, 4);
        assert_eq!(r.layers[0].mac_count, 216);
        assert_eq!(r.layers[0].memory_words, 54);
    }

    #[test]
    fn stated_ratios() {
        assert_eq!(cycle_ratio(8, 8).unwrap(), Ratio::new(1, 9));
        assert_eq!(cycle_ratio(8, 16).unwrap(), Ratio::new(2, 9));
        let four = cycle_ratio(4, 8).unwrap();
        assert!(four < cycle_ratio(8, 8).unwrap() / 2);
    }

    #[test]
    fn rejects_unsupported_bits() {
        assert!(matches!(cycle_ratio(3, 8), Err(Error::Config(_))));
        assert!(matches!(cycle_ratio(8, 33), Err(Error::Config(_))));
    }

    #[test]
    fn totals_sum_layers() {
        let m = Model::new(
            vec![1, 6, 6],
            vec![
                LayerSpec::new(
                    "c1",
                    Layer::Conv2d {
                        weights: Tensor::zeros(vec![2, 1, 3, 3]).unwrap(),
                        bias: None,
                        stride: 1,
                        padding: 1,
                    },
                ),
                LayerSpec::new("flat", Layer::Flatten),
                LayerSpec::new(
                    "fc",
                    Layer::Dense {
                        weights: Tensor::zeros(vec![72, 5]).unwrap(),
                        bias: None,
                    },
                ),
            ],
        )
        .unwrap();
        let r = complexity(&m, 4, 8).unwrap();
        assert_eq!(r.layers.len(), 2);
        assert_eq!(r.layers[0].mac_count, 36 * 18);
        assert_eq!(r.layers[1].mac_count, 360);
        assert_eq!(r.total_macs, 36 * 18 + 360);
        assert_eq!(r.total_memory_words, 18 + 360);
    }
}

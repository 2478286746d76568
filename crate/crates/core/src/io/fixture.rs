//! Random teacher networks labelled by their own predictions, for
//! measuring quantization damage as loss of agreement with the float model.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DatasetHandle;
use crate::error::{Error, Result};
use crate::metrics::argmax_rows;
use crate::netgraph::{Layer, LayerSpec, Model};
use crate::tensor::Tensor;

/// Layer widths of a ReLU MLP, input first: `64-32-10` is a 64-input,
/// 10-output network with one hidden layer of 32 units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MlpArch {
    widths: Vec<usize>,
}

impl MlpArch {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "architecture needs at least two positive widths, got {widths:?}"
            )));
        }
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }
}

impl FromStr for MlpArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let widths = s
            .split('-')
            .map(|w| {
                w.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad width `{w}` in architecture `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(widths)
    }
}

impl fmt::Display for MlpArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.widths.iter().map(usize::to_string).collect();
        f.write_str(&parts.join("-"))
    }
}

impl TryFrom<String> for MlpArch {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MlpArch> for String {
    fn from(a: MlpArch) -> Self {
        a.to_string()
    }
}

/// Builds a He-initialized MLP (`fc1`, `relu1`, `fc2`, ...) and `samples`
/// standard-normal inputs labelled with the model's own arg-max.
pub fn make_teacher_fixture(
    arch: &MlpArch,
    samples: usize,
    seed: u64,
) -> Result<(Model, DatasetHandle)> {
    if samples == 0 {
        return Err(Error::Config("fixture needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bias_dist = Normal::new(0.0, 0.1).expect("valid normal");
    let widths = arch.widths();
    let mut layers = Vec::new();
    for (i, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let scale = (2.0 / fan_in as f64).sqrt();
        let weights = Tensor::from_fn(vec![fan_in, fan_out], |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })?;
        let bias = Tensor::from_fn(vec![fan_out], |_| bias_dist.sample(&mut rng))?;
        layers.push(LayerSpec::new(
            format!("fc{}", i + 1),
            Layer::Dense {
                weights,
                bias: Some(bias),
            },
        ));
        if i + 2 < widths.len() {
            layers.push(LayerSpec::new(format!("relu{}", i + 1), Layer::Relu));
        }
    }
    let model = Model::new(vec![widths[0]], layers)?;
    let inputs = Tensor::from_fn(vec![samples, widths[0]], |_| {
        StandardNormal.sample(&mut rng)
    })?;
    let labels = argmax_rows(&model.forward(&inputs)?);
    let dataset = DatasetHandle::new(inputs, labels, Some(*widths.last().expect("non-empty")))?;
    Ok((model, dataset))
}

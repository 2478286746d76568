//! Scalar model-quality metrics and the evaluator abstraction the search
//! loops optimize against.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::Model;
use crate::tensor::Tensor;

/// Anything that scores a model; higher is better.
///
/// Implementations must be pure: the same model always yields the same
/// value. The fine-tuner relies on this to reuse fitness values and to
/// evaluate candidates concurrently.
pub trait Evaluator: Sync {
    fn evaluate(&self, model: &Model) -> Result<f64>;
}

impl<F> Evaluator for F
where
    F: Fn(&Model) -> Result<f64> + Sync,
{
    fn evaluate(&self, model: &Model) -> Result<f64> {
        self(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Fraction of samples whose arg-max matches the label.
    Top1,
    /// Binary F1 with the anomaly class (label 1) as positive.
    F1,
    /// Fraction of samples whose arg-max matches a teacher model's arg-max.
    Agreement,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Top1 => "top1",
            Metric::F1 => "f1",
            Metric::Agreement => "agreement",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top1" => Ok(Metric::Top1),
            "f1" => Ok(Metric::F1),
            "agreement" => Ok(Metric::Agreement),
            other => Err(Error::Config(format!(
                "unknown metric `{other}` (expected top1, f1 or agreement)"
            ))),
        }
    }
}

/// Index of the first maximum of each row.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    t.rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predicted.len(), labels.len());
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Binary F1 score; 1.0 when there are neither positives nor positive predictions.
pub fn f1_score(predicted: &[bool], actual: &[bool]) -> f64 {
    assert_eq!(predicted.len(), actual.len());
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Scores a model on a fixed labelled batch.
///
/// For [`Metric::F1`] each sample gets an anomaly score: the mean squared
/// reconstruction error when the model output has the input's size, the
/// single output when it is one-dimensional, otherwise the class-1 output
/// after arg-max. Samples scoring above `threshold` are flagged.
#[derive(Debug, Clone)]
pub struct DatasetEvaluator {
    inputs: Tensor,
    targets: Vec<usize>,
    metric: Metric,
    threshold: f64,
}

impl DatasetEvaluator {
    pub fn new(inputs: Tensor, labels: Vec<usize>, metric: Metric) -> Result<Self> {
        if inputs.shape()[0] != labels.len() {
            return Err(Error::Validation(format!(
                "{} inputs but {} labels",
                inputs.shape()[0],
                labels.len()
            )));
        }
        Ok(Self {
            inputs,
            targets: labels,
            metric,
            threshold: 0.5,
        })
    }

    /// Agreement with the arg-max of `teacher` on the same inputs.
    pub fn agreement(teacher: &Model, inputs: Tensor) -> Result<Self> {
        let batch = fit_batch(&inputs, teacher)?;
        let targets = argmax_rows(&as_rows(&teacher.forward(&batch)?)?);
        Self::new(inputs, targets, Metric::Agreement)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn anomaly_flags(&self, batch: &Tensor, output: &Tensor) -> Result<Vec<bool>> {
        let out = as_rows(output)?;
        let width = out.shape()[1];
        let flags = if output.len() == batch.len() {
            let inp = as_rows(batch)?;
            out.rows()
                .zip(inp.rows())
                .map(|(o, x)| {
                    let mse =
                        o.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / width as f64;
                    mse > self.threshold
                })
                .collect()
        } else if width == 1 {
            out.data().iter().map(|&s| s > self.threshold).collect()
        } else {
            argmax_rows(&out).into_iter().map(|c| c == 1).collect()
        };
        Ok(flags)
    }
}

impl Evaluator for DatasetEvaluator {
    fn evaluate(&self, model: &Model) -> Result<f64> {
        let batch = fit_batch(&self.inputs, model)?;
        let output = model.forward(&batch)?;
        match self.metric {
            Metric::Top1 | Metric::Agreement => {
                Ok(accuracy(&argmax_rows(&as_rows(&output)?), &self.targets))
            }
            Metric::F1 => {
                let actual: Vec<bool> = self.targets.iter().map(|&l| l == 1).collect();
                Ok(f1_score(&self.anomaly_flags(&batch, &output)?, &actual))
            }
        }
    }
}

/// Reshapes flat per-sample rows to the model's input shape when needed.
pub fn fit_batch(inputs: &Tensor, model: &Model) -> Result<Tensor> {
    let per_sample: usize = inputs.shape()[1..].iter().product();
    let wanted: usize = model.input_shape().iter().product();
    if inputs.shape()[1..] == *model.input_shape() {
        return Ok(inputs.clone());
    }
    if per_sample != wanted {
        return Err(Error::Dimension(format!(
            "inputs {:?} cannot feed a model with input shape {:?}",
            inputs.shape(),
            model.input_shape()
        )));
    }
    let mut shape = vec![inputs.shape()[0]];
    shape.extend_from_slice(model.input_shape());
    inputs.reshape(shape)
}

fn as_rows(t: &Tensor) -> Result<Tensor> {
    let n = t.shape()[0];
    t.reshape(vec![n, t.len() / n])
}

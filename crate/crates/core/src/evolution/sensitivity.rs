use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Evaluator;
use crate::netgraph::Model;
use crate::quantizer::quantize_layer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEntry {
    pub layer: String,
    /// Metric of the model with only this layer quantized.
    pub metric: f64,
}

/// Layers ordered from least to most sensitive to quantization.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SensitivityRanking {
    pub entries: Vec<SensitivityEntry>,
}

impl SensitivityRanking {
    /// Orders raw (layer, metric) measurements: highest metric first, ties
    /// keep the given order.
    pub fn from_measurements(mut entries: Vec<SensitivityEntry>) -> Self {
        entries.sort_by(|a, b| b.metric.total_cmp(&a.metric));
        Self { entries }
    }

    pub fn layers(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.layer.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Quantizes each weighted layer alone to `bits` and ranks layers by the
/// resulting metric.
pub fn sensitivity_rank<E: Evaluator + ?Sized>(
    model: &Model,
    evaluator: &E,
    bits: u32,
) -> Result<SensitivityRanking> {
    let names: Vec<&str> = model.weighted_layers().map(|(n, _)| n).collect();
    if names.is_empty() {
        return Err(Error::Validation("model has no weighted layers".into()));
    }
    let mut measured = Vec::with_capacity(names.len());
    for name in names {
        let (solo, _) = quantize_layer(model, name, bits)?;
        let metric = evaluator
            .evaluate(&solo)
            .and_then(|v| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFiniteMetric(v))
                }
            })
            .map_err(|e| Error::Evaluation {
                layer: name.to_string(),
                source: Box::new(e),
            })?;
        measured.push(SensitivityEntry {
            layer: name.to_string(),
            metric,
        });
    }
    Ok(SensitivityRanking::from_measurements(measured))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{Layer, LayerSpec};
    use crate::quantizer::{derive_scheme, quantize};
    use crate::tensor::Tensor;

    fn dense(name: &str, shape: [usize; 2], data: Vec<f64>) -> LayerSpec {
        LayerSpec::new(
            name,
            Layer::Dense {
                weights: Tensor::new(shape.to_vec(), data).unwrap(),
                bias: None,
            },
        )
    }

    #[test]
    fn single_layer_ranking() {
        let m = Model::new(vec![2], vec![dense("fc", [2, 1], vec![0.3, -0.2])]).unwrap();
        let r = sensitivity_rank(&m, &|_: &Model| Ok(0.5), 4).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.entries[0].layer, "fc");
    }

    #[test]
    fn on_grid_layers_tie_and_keep_order() {
        let s = derive_scheme(&Tensor::new(vec![1], vec![0.75]).unwrap(), 4).unwrap();
        let grid = |codes: &[i64]| codes.iter().map(|&c| s.value_of(c)).collect::<Vec<_>>();
        let m = Model::new(
            vec![2],
            vec![
                dense("a", [2, 2], grid(&[6, -3, 1, 2])),
                LayerSpec::new("r", Layer::Relu),
                dense("b", [2, 2], grid(&[-6, 5, 0, 3])),
            ],
        )
        .unwrap();
        let x = Tensor::new(vec![3, 2], vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]).unwrap();
        let reference = m.forward(&x).unwrap();
        let eval = |model: &Model| -> Result<f64> {
            let y = model.forward(&x)?;
            let err: f64 = y
                .data()
                .iter()
                .zip(reference.data())
                .map(|(a, b)| (a - b).abs())
                .sum();
            Ok(-err)
        };
        let r = sensitivity_rank(&m, &eval, 4).unwrap();
        assert_eq!(r.layers().collect::<Vec<_>>(), vec!["a", "b"]);
        assert!(r.entries.iter().all(|e| e.metric == 0.0));
    }

    #[test]
    fn matches_independent_solo_evaluation() {
        let m = Model::new(
            vec![3],
            vec![
                dense(
                    "narrow",
                    [3, 3],
                    vec![0.11, -0.07, 0.05, 0.02, 0.09, -0.13, 0.04, 0.01, -0.06],
                ),
                LayerSpec::new("r1", Layer::Relu),
                dense(
                    "wide",
                    [3, 3],
                    vec![7.3, -0.01, 0.02, 0.03, -5.9, 0.015, 0.4, 0.002, 0.6],
                ),
                LayerSpec::new("r2", Layer::Relu),
                dense("mid", [3, 2], vec![0.8, -0.33, 0.27, 0.51, -0.66, 0.19]),
            ],
        )
        .unwrap();
        let x = Tensor::from_fn(vec![16, 3], |i| ((i * 37 % 23) as f64 - 11.0) / 7.0).unwrap();
        let reference = m.forward(&x).unwrap();
        let eval = |model: &Model| -> Result<f64> {
            let y = model.forward(&x)?;
            Ok(-y
                .data()
                .iter()
                .zip(reference.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>())
        };

        // Brute force: build each solo-quantized model by hand.
        let mut oracle: Vec<(String, f64)> = m
            .weighted_layers()
            .map(|(name, w)| {
                let q = quantize(w, &derive_scheme(w, 4).unwrap());
                let solo = m.with_layer_weights(name, q.into_weights()).unwrap();
                (name.to_string(), eval(&solo).unwrap())
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());

        let r = sensitivity_rank(&m, &eval, 4).unwrap();
        let got: Vec<(String, f64)> = r
            .entries
            .iter()
            .map(|e| (e.layer.clone(), e.metric))
            .collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn evaluator_failure_carries_layer() {
        let m = Model::new(vec![2], vec![dense("fc", [2, 1], vec![0.3, -0.2])]).unwrap();
        let err =
            sensitivity_rank(&m, &|_: &Model| Err(Error::Config("boom".into())), 4).unwrap_err();
        match err {
            Error::Evaluation { layer, .. } => assert_eq!(layer, "fc"),
            other => panic!("{other:?}"),
        }
    }
}

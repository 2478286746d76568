use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mutation::{mutate, Candidate};
use super::rng::candidate_rng;
use super::{MutationConfig, SensitivityRanking};
use crate::error::{Error, Result};
use crate::metrics::Evaluator;
use crate::netgraph::Model;
use crate::quantizer::{check_on_grid, QuantScheme, SchemeMap};
use crate::tensor::Tensor;

/// Fitness summary of the surviving population after one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub best: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTuning {
    pub layer: String,
    pub weights: Tensor,
    /// Fitness of the untouched quantized layer; `None` when no iteration ran.
    pub initial_fitness: Option<f64>,
    pub history: Vec<IterationStats>,
}

impl LayerTuning {
    pub fn best_fitness(&self) -> Option<f64> {
        self.history.last().map(|s| s.best).or(self.initial_fitness)
    }
}

/// Stop once the metric is within `max_drop` of `reference_metric`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub reference_metric: f64,
    pub max_drop: f64,
}

impl EarlyStop {
    fn satisfied(&self, metric: f64) -> bool {
        metric >= self.reference_metric - self.max_drop
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: Model,
    /// Tuned layers in processing order.
    pub layers: Vec<LayerTuning>,
    pub initial_metric: f64,
    pub final_metric: f64,
    pub stopped_early: bool,
}

fn score<E: Evaluator + ?Sized>(evaluator: &E, model: &Model, layer: &str) -> Result<f64> {
    evaluator
        .evaluate(model)
        .and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteMetric(v))
            }
        })
        .map_err(|e| Error::Evaluation {
            layer: layer.to_string(),
            source: Box::new(e),
        })
}

/// Evolves the weights of one quantized layer, everything else held fixed.
pub fn finetune_layer<E: Evaluator + ?Sized>(
    model: &Model,
    layer: &str,
    scheme: &QuantScheme,
    config: &MutationConfig,
    evaluator: &E,
) -> Result<LayerTuning> {
    config.validate()?;
    let start = model.layer_weights(layer)?;
    check_on_grid(start, scheme).map_err(|e| Error::layer(layer, e.to_string()))?;
    if config.iterations == 0 {
        return Ok(LayerTuning {
            layer: layer.to_string(),
            weights: start.clone(),
            initial_fitness: None,
            history: Vec::new(),
        });
    }

    let initial = score(evaluator, model, layer)?;
    let mut population = vec![
        Candidate {
            weights: start.clone(),
            fitness: Some(initial),
        };
        config.population_size
    ];
    let mut history = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let spawn = |j: usize| -> Result<Candidate> {
            let parent = &population[j];
            let mut rng = candidate_rng(config.seed, layer, iteration, j);
            let mut child = mutate(parent, scheme, config, &mut rng)?;
            child.fitness = if child.weights == parent.weights {
                parent.fitness
            } else {
                let trial = model.with_layer_weights(layer, child.weights.clone())?;
                Some(score(evaluator, &trial, layer)?)
            };
            Ok(child)
        };
        let offspring: Vec<Candidate> = if config.parallel {
            (0..population.len())
                .into_par_iter()
                .map(spawn)
                .collect::<Result<_>>()?
        } else {
            (0..population.len()).map(spawn).collect::<Result<_>>()?
        };

        // Parents come first so that ties favour the incumbent.
        population.extend(offspring);
        population.sort_by(|a, b| fitness(b).total_cmp(&fitness(a)));
        population.truncate(config.population_size);

        let mean = population.iter().map(fitness).sum::<f64>() / population.len() as f64;
        history.push(IterationStats {
            iteration,
            best: fitness(&population[0]),
            mean,
        });
    }

    Ok(LayerTuning {
        layer: layer.to_string(),
        weights: population.swap_remove(0).weights,
        initial_fitness: Some(initial),
        history,
    })
}

fn fitness(c: &Candidate) -> f64 {
    c.fitness.expect("population members are evaluated")
}

/// Tunes layers one after another in ranking order, committing each
/// layer's best weights before moving to the next.
pub fn finetune_model<E: Evaluator + ?Sized>(
    model: &Model,
    ranking: &SensitivityRanking,
    schemes: &SchemeMap,
    config: &MutationConfig,
    evaluator: &E,
    early_stop: Option<EarlyStop>,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    let weighted: Vec<&str> = model.weighted_layers().map(|(n, _)| n).collect();
    for name in &weighted {
        if !ranking.layers().any(|l| l == *name) {
            return Err(Error::Validation(format!(
                "ranking does not cover layer `{name}`"
            )));
        }
    }
    for name in ranking.layers() {
        if !weighted.contains(&name) {
            return Err(Error::Validation(format!(
                "ranking names `{name}`, which is not a weighted layer"
            )));
        }
        if !schemes.contains_key(name) {
            return Err(Error::Validation(format!(
                "no quantization scheme for layer `{name}`"
            )));
        }
    }

    let initial_metric = score(evaluator, model, "<input model>")?;
    let mut current = model.clone();
    let mut metric = initial_metric;
    let mut layers = Vec::new();
    let mut stopped_early = early_stop.is_some_and(|s| s.satisfied(metric));

    if !stopped_early {
        for name in ranking.layers() {
            let tuning = finetune_layer(&current, name, &schemes[name], config, evaluator)?;
            if let Some(best) = tuning.best_fitness() {
                metric = best;
            }
            current = current.with_layer_weights(name, tuning.weights.clone())?;
            layers.push(tuning);
            if early_stop.is_some_and(|s| s.satisfied(metric)) {
                stopped_early = layers.len() < ranking.len();
                break;
            }
        }
    }

    Ok(FinetuneOutcome {
        model: current,
        layers,
        initial_metric,
        final_metric: metric,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::sensitivity::SensitivityEntry;
    use crate::metrics::DatasetEvaluator;
    use crate::netgraph::{Layer, LayerSpec};
    use crate::quantizer::{derive_scheme, quantize_model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn probes() -> Tensor {
        Tensor::from_fn(vec![9, 1], |i| i as f64 / 4.0 - 1.0).unwrap()
    }

    fn float_model() -> Model {
        Model::new(
            vec![1],
            vec![LayerSpec::new(
                "fc",
                Layer::Dense {
                    weights: Tensor::new(vec![1, 4], vec![0.61, -0.34, 0.87, 0.18]).unwrap(),
                    bias: None,
                },
            )],
        )
        .unwrap()
    }

    fn l2_fitness(reference: &Model) -> impl Fn(&Model) -> Result<f64> + Sync {
        let x = probes();
        let target = reference.forward(&x).unwrap();
        move |m: &Model| {
            let y = m.forward(&x)?;
            Ok(-y
                .data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt())
        }
    }

    /// 1x4 layer with a float bias: four class scores that are lines in x.
    fn agreement_fixture() -> (Model, DatasetEvaluator) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let w = Tensor::from_fn(vec![1, 4], |_| normal()).unwrap();
        let b = Tensor::from_fn(vec![4], |_| 0.3 * normal()).unwrap();
        let float = Model::new(
            vec![1],
            vec![LayerSpec::new(
                "fc",
                Layer::Dense {
                    weights: w,
                    bias: Some(b),
                },
            )],
        )
        .unwrap();
        let x = Tensor::from_fn(vec![500, 1], |_| normal()).unwrap();
        let eval = DatasetEvaluator::agreement(&float, x).unwrap();
        (float, eval)
    }

    /// Best fitness over every assignment of 0, ±1, ±2 steps to each weight
    /// of the nearest-neighbour point.
    fn neighbourhood_optimum(
        model: &Model,
        scheme: &QuantScheme,
        eval: &dyn Fn(&Model) -> Result<f64>,
    ) -> f64 {
        let base = model.layer_weights("fc").unwrap().clone();
        let n = base.len();
        let mut best = f64::NEG_INFINITY;
        for idx in 0..5usize.pow(n as u32) {
            let mut k = idx;
            let data: Vec<f64> = base
                .data()
                .iter()
                .map(|&w| {
                    let step = (k % 5) as i64 - 2;
                    k /= 5;
                    let code = (scheme.code_of(w).unwrap() + step)
                        .clamp(scheme.min_code(), scheme.max_code());
                    scheme.value_of(code)
                })
                .collect();
            let m = model
                .with_layer_weights("fc", Tensor::new(base.shape().to_vec(), data).unwrap())
                .unwrap();
            best = best.max(eval(&m).unwrap());
        }
        best
    }

    #[test]
    fn zero_iterations_returns_input() {
        let (q, schemes) = quantize_model(&float_model(), 3).unwrap();
        let cfg = MutationConfig {
            iterations: 0,
            ..MutationConfig::default()
        };
        let t = finetune_layer(&q, "fc", &schemes["fc"], &cfg, &|_: &Model| Ok(0.0)).unwrap();
        assert_eq!(&t.weights, q.layer_weights("fc").unwrap());
        assert!(t.history.is_empty());
    }

    #[test]
    fn constant_evaluator_keeps_incumbent() {
        let (q, schemes) = quantize_model(&float_model(), 3).unwrap();
        let cfg = MutationConfig {
            iterations: 10,
            population_size: 4,
            p: 0.5,
            ..MutationConfig::default()
        };
        let t = finetune_layer(&q, "fc", &schemes["fc"], &cfg, &|_: &Model| Ok(0.25)).unwrap();
        assert_eq!(t.history.len(), 10);
        assert!(t.history.iter().all(|s| s.best == 0.25 && s.mean == 0.25));
        assert_eq!(&t.weights, q.layer_weights("fc").unwrap());
    }

    #[test]
    fn separable_l2_optimum_is_kept() {
        // With a single input the squared error separates per weight, so the
        // nearest-neighbour point is already the neighbourhood optimum.
        let float = float_model();
        let (q, schemes) = quantize_model(&float, 3).unwrap();
        let eval = l2_fitness(&float);
        let optimum = neighbourhood_optimum(&q, &schemes["fc"], &eval);
        assert_eq!(optimum, eval(&q).unwrap());
        let cfg = MutationConfig {
            population_size: 8,
            iterations: 40,
            p: 0.25,
            seed: 3,
            ..MutationConfig::default()
        };
        let t = finetune_layer(&q, "fc", &schemes["fc"], &cfg, &eval).unwrap();
        assert!(t.best_fitness().unwrap() >= optimum);
    }

    #[test]
    fn reaches_agreement_optimum_across_seeds() {
        let (float, evaluator) = agreement_fixture();
        let (q, schemes) = quantize_model(&float, 3).unwrap();
        let eval = |m: &Model| evaluator.evaluate(m);
        let optimum = neighbourhood_optimum(&q, &schemes["fc"], &eval);
        assert!(
            optimum > eval(&q).unwrap(),
            "fixture must leave room above nearest-neighbour"
        );
        let hits = (0..20)
            .filter(|&seed| {
                let cfg = MutationConfig {
                    population_size: 8,
                    iterations: 40,
                    p: 0.25,
                    seed,
                    ..MutationConfig::default()
                };
                let t = finetune_layer(&q, "fc", &schemes["fc"], &cfg, &eval).unwrap();
                assert!(t.history.windows(2).all(|w| w[1].best >= w[0].best));
                t.best_fitness().unwrap() >= optimum
            })
            .count();
        assert!(hits >= 18, "{hits}/20");
    }

    #[test]
    fn parallel_and_serial_agree() {
        let float = float_model();
        let (q, schemes) = quantize_model(&float, 3).unwrap();
        let eval = l2_fitness(&float);
        let cfg = MutationConfig {
            population_size: 6,
            iterations: 12,
            p: 0.3,
            seed: 17,
            ..MutationConfig::default()
        };
        let par = finetune_layer(&q, "fc", &schemes["fc"], &cfg, &eval).unwrap();
        let ser = finetune_layer(
            &q,
            "fc",
            &schemes["fc"],
            &MutationConfig {
                parallel: false,
                ..cfg
            },
            &eval,
        )
        .unwrap();
        assert_eq!(par, ser);
    }

    #[test]
    fn off_grid_layer_rejected() {
        let float = float_model();
        let s = derive_scheme(float.layer_weights("fc").unwrap(), 3).unwrap();
        let err = finetune_layer(
            &float,
            "fc",
            &s,
            &MutationConfig::default(),
            &|_: &Model| Ok(0.0),
        );
        assert!(err.is_err());
    }

    #[test]
    fn model_single_layer_equals_layer_tuning() {
        let float = float_model();
        let (q, schemes) = quantize_model(&float, 3).unwrap();
        let eval = l2_fitness(&float);
        let cfg = MutationConfig {
            population_size: 4,
            iterations: 8,
            p: 0.3,
            seed: 1,
            ..MutationConfig::default()
        };
        let ranking = SensitivityRanking {
            entries: vec![SensitivityEntry {
                layer: "fc".into(),
                metric: 0.0,
            }],
        };
        let out = finetune_model(&q, &ranking, &schemes, &cfg, &eval, None).unwrap();
        let single = finetune_layer(&q, "fc", &schemes["fc"], &cfg, &eval).unwrap();
        assert_eq!(out.layers, vec![single.clone()]);
        assert_eq!(out.model.layer_weights("fc").unwrap(), &single.weights);
        assert!(!out.stopped_early);
    }

    #[test]
    fn early_stop_when_already_close() {
        let float = float_model();
        let (q, schemes) = quantize_model(&float, 3).unwrap();
        let ranking = SensitivityRanking {
            entries: vec![SensitivityEntry {
                layer: "fc".into(),
                metric: 0.0,
            }],
        };
        let stop = EarlyStop {
            reference_metric: 1.0,
            max_drop: 0.5,
        };
        let out = finetune_model(
            &q,
            &ranking,
            &schemes,
            &MutationConfig::default(),
            &|_: &Model| Ok(0.9),
            Some(stop),
        )
        .unwrap();
        assert!(out.stopped_early);
        assert!(out.layers.is_empty());
        assert_eq!(out.model, q);
    }

    #[test]
    fn ranking_must_cover_layers() {
        let (q, schemes) = quantize_model(&float_model(), 3).unwrap();
        let empty = SensitivityRanking::default();
        assert!(finetune_model(
            &q,
            &empty,
            &schemes,
            &MutationConfig::default(),
            &|_: &Model| Ok(0.0),
            None
        )
        .is_err());
    }
}

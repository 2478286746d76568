//! Sensitivity ranking and neuroevolution fine-tuning of quantized layers.
//!
//! Fine-tuning works one layer at a time. A population of copies of the
//! layer's quantized weights is repeatedly mutated by moving a random
//! Bernoulli(p) subset of weights a few grid steps; mutants are pooled with
//! their parents and the best `population_size` survive ((μ+λ) selection),
//! so the best fitness never decreases.

mod finetune;
mod mutation;
mod rng;
mod sensitivity;

pub use finetune::{
    finetune_layer, finetune_model, EarlyStop, FinetuneOutcome, IterationStats, LayerTuning,
};
pub use mutation::{apply_steps, mutate, sample_mask, sample_steps, Candidate};
pub use rng::candidate_rng;
pub use sensitivity::{sensitivity_rank, SensitivityEntry, SensitivityRanking};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationConfig {
    /// Probability that any single weight is mutated in one mutation.
    pub p: f64,
    pub step_values: Vec<i64>,
    pub step_probs: Vec<f64>,
    pub population_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Evaluate the candidates of an iteration on the rayon pool.
    #[serde(default = "default_parallel")]
    pub parallel: bool,
}

fn default_parallel() -> bool {
    true
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            p: 0.02,
            // Single-LSB moves dominate; two-LSB jumps are rare.
            step_values: vec![-1, 1, -2, 2],
            step_probs: vec![0.4, 0.4, 0.1, 0.1],
            population_size: 32,
            iterations: 64,
            seed: 0,
            parallel: true,
        }
    }
}

impl MutationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Config(format!(
                "mutation probability {} not in (0, 1)",
                self.p
            )));
        }
        if self.step_values.is_empty() || self.step_values.len() != self.step_probs.len() {
            return Err(Error::Config(format!(
                "{} step values but {} step probabilities",
                self.step_values.len(),
                self.step_probs.len()
            )));
        }
        if self
            .step_probs
            .iter()
            .any(|&q| !(q >= 0.0 && q.is_finite()))
        {
            return Err(Error::Config(
                "step probabilities must be non-negative".into(),
            ));
        }
        let total: f64 = self.step_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "step probabilities sum to {total}, not 1"
            )));
        }
        if self.population_size == 0 {
            return Err(Error::Config("population size must be positive".into()));
        }
        Ok(())
    }
}

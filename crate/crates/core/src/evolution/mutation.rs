use rand::distr::{weighted::WeightedIndex, Bernoulli, Distribution};
use rand::Rng;

use super::MutationConfig;
use crate::error::{Error, Result};
use crate::quantizer::{clamp_to_range, QuantScheme};
use crate::tensor::Tensor;

/// One member of the population: a candidate weight tensor for the layer
/// under tuning and, once evaluated, its fitness.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub weights: Tensor,
    pub fitness: Option<f64>,
}

impl Candidate {
    pub fn new(weights: Tensor) -> Self {
        Self {
            weights,
            fitness: None,
        }
    }
}

/// Binary mask with each entry independently 1 with probability `p`.
pub fn sample_mask<R: Rng + ?Sized>(shape: &[usize], p: f64, rng: &mut R) -> Result<Tensor> {
    let dist = Bernoulli::new(p)
        .map_err(|_| Error::Config(format!("mask probability {p} not in [0, 1]")))?;
    Tensor::from_fn(shape.to_vec(), |_| if dist.sample(rng) { 1.0 } else { 0.0 })
}

/// Per-element step multipliers drawn from `config.step_values` with
/// `config.step_probs`.
pub fn sample_steps<R: Rng + ?Sized>(
    shape: &[usize],
    config: &MutationConfig,
    rng: &mut R,
) -> Result<Vec<i64>> {
    let dist = WeightedIndex::new(&config.step_probs)
        .map_err(|e| Error::Config(format!("invalid step probabilities: {e}")))?;
    let n: usize = shape.iter().product();
    Ok((0..n)
        .map(|_| config.step_values[dist.sample(rng)])
        .collect())
}

/// Moves the masked weights by `step · sigma`, saturating at the code range.
///
/// The mask is drawn before the step vector, both over the whole tensor.
pub fn mutate<R: Rng + ?Sized>(
    candidate: &Candidate,
    scheme: &QuantScheme,
    config: &MutationConfig,
    rng: &mut R,
) -> Result<Candidate> {
    let shape = candidate.weights.shape();
    let mask = sample_mask(shape, config.p, rng)?;
    let steps = sample_steps(shape, config, rng)?;
    apply_steps(&candidate.weights, &mask, &steps, scheme).map(Candidate::new)
}

/// `weights + mask ⊙ (steps · sigma)` computed on integer codes.
pub fn apply_steps(
    weights: &Tensor,
    mask: &Tensor,
    steps: &[i64],
    scheme: &QuantScheme,
) -> Result<Tensor> {
    if mask.shape() != weights.shape() || steps.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "mask {:?} / {} steps do not match weights {:?}",
            mask.shape(),
            steps.len(),
            weights.shape()
        )));
    }
    let mut data = Vec::with_capacity(weights.len());
    for ((&w, &m), &r) in weights.data().iter().zip(mask.data()).zip(steps) {
        let code = scheme.code_of(w).ok_or_else(|| {
            Error::Validation(format!(
                "weight {w} is not on the grid of step {}",
                scheme.sigma()
            ))
        })?;
        let next = if m != 0.0 {
            clamp_to_range(code.saturating_add(r), scheme)
        } else {
            code
        };
        data.push(scheme.value_of(next));
    }
    Tensor::new(weights.shape().to_vec(), data)
}

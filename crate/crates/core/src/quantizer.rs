//! Linear fixed-point quantization with nearest-neighbour rounding.
//!
//! A scheme with `total_bits` bits spends one bit on sign, `int_bits` on the
//! integer part (`ceil(log2(max|x|))`) and the remaining `frac_bits` on the
//! fraction. Quantized values are `sigma · code` with `sigma = 2^-frac_bits`
//! and a signed `total_bits` integer `code`. Because `sigma` is a power of
//! two, grid values are exact in `f64`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::Model;
use crate::tensor::Tensor;

pub const MIN_TOTAL_BITS: u32 = 2;
pub const MAX_TOTAL_BITS: u32 = 32;

/// Per-layer schemes keyed by layer name.
pub type SchemeMap = BTreeMap<String, QuantScheme>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemeRecord", into = "SchemeRecord")]
pub struct QuantScheme {
    total_bits: u32,
    int_bits: i32,
    frac_bits: i32,
}

impl QuantScheme {
    /// Builds a scheme from its bit split; `frac_bits` follows from the
    /// other two.
    pub fn new(total_bits: u32, int_bits: i32) -> Result<Self> {
        check_total_bits(total_bits)?;
        let frac_bits = total_bits as i32 - int_bits - 1;
        // sigma = 2^-frac_bits must stay a normal f64.
        if !(-1000..=1000).contains(&frac_bits) {
            return Err(Error::Config(format!(
                "fractional bits {frac_bits} out of range"
            )));
        }
        Ok(Self {
            total_bits,
            int_bits,
            frac_bits,
        })
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn int_bits(&self) -> i32 {
        self.int_bits
    }

    pub fn frac_bits(&self) -> i32 {
        self.frac_bits
    }

    /// Offset of the grid; always zero for this symmetric scheme.
    pub fn mu(&self) -> f64 {
        0.0
    }

    /// Grid step (value of one least significant bit).
    pub fn sigma(&self) -> f64 {
        2f64.powi(-self.frac_bits)
    }

    pub fn min_code(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn max_code(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    /// Integer code of a value that lies on this grid, `None` otherwise.
    pub fn code_of(&self, value: f64) -> Option<i64> {
        let scaled = value / self.sigma();
        if scaled.fract() != 0.0 {
            return None;
        }
        let code = scaled as i64;
        (code as f64 == scaled && (self.min_code()..=self.max_code()).contains(&code))
            .then_some(code)
    }

    pub fn value_of(&self, code: i64) -> f64 {
        code as f64 * self.sigma()
    }

    /// Nearest grid value, with ties rounded away from zero and saturation
    /// at the ends of the code range.
    pub fn quantize_value(&self, x: f64) -> f64 {
        let scaled = ((x - self.mu()) / self.sigma()).round();
        let code = scaled.clamp(self.min_code() as f64, self.max_code() as f64) as i64;
        self.mu() + self.value_of(code)
    }
}

#[derive(Serialize, Deserialize)]
struct SchemeRecord {
    total_bits: u32,
    int_bits: i32,
    frac_bits: i32,
    sigma: f64,
}

impl TryFrom<SchemeRecord> for QuantScheme {
    type Error = Error;

    fn try_from(r: SchemeRecord) -> Result<Self> {
        let scheme = QuantScheme::new(r.total_bits, r.int_bits)?;
        if scheme.frac_bits != r.frac_bits || scheme.sigma() != r.sigma {
            return Err(Error::Validation(format!(
                "inconsistent scheme: total {} int {} frac {} sigma {}",
                r.total_bits, r.int_bits, r.frac_bits, r.sigma
            )));
        }
        Ok(scheme)
    }
}

impl From<QuantScheme> for SchemeRecord {
    fn from(s: QuantScheme) -> Self {
        Self {
            total_bits: s.total_bits,
            int_bits: s.int_bits,
            frac_bits: s.frac_bits,
            sigma: s.sigma(),
        }
    }
}

fn check_total_bits(total_bits: u32) -> Result<()> {
    if !(MIN_TOTAL_BITS..=MAX_TOTAL_BITS).contains(&total_bits) {
        return Err(Error::Config(format!(
            "total bit width {total_bits} outside [{MIN_TOTAL_BITS}, {MAX_TOTAL_BITS}]"
        )));
    }
    Ok(())
}

/// Smallest `k` with `2^k >= m`, for `m > 0`.
fn ceil_log2(m: f64) -> i32 {
    let mut k = m.log2().ceil() as i32;
    // log2 may be off by one ulp near exact powers of two.
    while 2f64.powi(k - 1) >= m {
        k -= 1;
    }
    while 2f64.powi(k) < m {
        k += 1;
    }
    k
}

/// Picks the integer/fraction split that covers the tensor's largest magnitude.
///
/// An all-zero tensor gets `int_bits = 0`.
pub fn derive_scheme(t: &Tensor, total_bits: u32) -> Result<QuantScheme> {
    check_total_bits(total_bits)?;
    let max = t.max_abs();
    let int_bits = if max == 0.0 { 0 } else { ceil_log2(max) };
    QuantScheme::new(total_bits, int_bits)
}

/// Weights constrained to the grid of `scheme`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    scheme: QuantScheme,
    weights: Tensor,
}

impl QuantizedLayer {
    /// Wraps weights that are already on the grid, rejecting any that are not.
    pub fn from_grid(weights: Tensor, scheme: QuantScheme) -> Result<Self> {
        check_on_grid(&weights, &scheme)?;
        Ok(Self { scheme, weights })
    }

    pub fn scheme(&self) -> &QuantScheme {
        &self.scheme
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn into_weights(self) -> Tensor {
        self.weights
    }

    pub fn codes(&self) -> Vec<i64> {
        self.weights
            .data()
            .iter()
            .map(|&w| self.scheme.code_of(w).expect("grid invariant"))
            .collect()
    }
}

/// Verifies every element is an in-range multiple of `scheme.sigma()`.
pub fn check_on_grid(t: &Tensor, scheme: &QuantScheme) -> Result<()> {
    match t.data().iter().position(|&w| scheme.code_of(w).is_none()) {
        None => Ok(()),
        Some(i) => Err(Error::Validation(format!(
            "element {i} ({}) is not on the grid of step {} with {} bits",
            t.data()[i],
            scheme.sigma(),
            scheme.total_bits
        ))),
    }
}

pub fn quantize(t: &Tensor, scheme: &QuantScheme) -> QuantizedLayer {
    let data = t.data().iter().map(|&x| scheme.quantize_value(x)).collect();
    QuantizedLayer {
        scheme: *scheme,
        weights: Tensor::from_parts_unchecked(t.shape().to_vec(), data),
    }
}

/// Saturating clamp of an integer code into the scheme's signed range.
pub fn clamp_to_range(code: i64, scheme: &QuantScheme) -> i64 {
    code.clamp(scheme.min_code(), scheme.max_code())
}

/// Quantizes one layer in place of its float weights.
pub fn quantize_layer(model: &Model, name: &str, total_bits: u32) -> Result<(Model, QuantScheme)> {
    let weights = model.layer_weights(name)?;
    let scheme = derive_scheme(weights, total_bits)?;
    let q = quantize(weights, &scheme);
    Ok((model.with_layer_weights(name, q.into_weights())?, scheme))
}

/// Quantizes every weighted layer independently with its own scheme.
pub fn quantize_model(model: &Model, total_bits: u32) -> Result<(Model, SchemeMap)> {
    check_total_bits(total_bits)?;
    let names: Vec<String> = model
        .weighted_layers()
        .map(|(n, _)| n.to_string())
        .collect();
    if names.is_empty() {
        return Err(Error::Validation("model has no weighted layers".into()));
    }
    let mut out = model.clone();
    let mut schemes = SchemeMap::new();
    for name in names {
        let (next, scheme) = quantize_layer(&out, &name, total_bits)?;
        out = next;
        schemes.insert(name, scheme);
    }
    Ok((out, schemes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{Layer, LayerSpec};
    use proptest::prelude::*;

    fn t(data: &[f64]) -> Tensor {
        Tensor::new(vec![data.len()], data.to_vec()).unwrap()
    }

    /// Exhaustive nearest grid point; ties resolved away from zero.
    fn grid_search(x: f64, s: &QuantScheme) -> f64 {
        let mut best = s.value_of(s.min_code());
        for code in s.min_code()..=s.max_code() {
            let v = s.value_of(code);
            let (d, bd) = ((v - x).abs(), (best - x).abs());
            if d < bd || (d == bd && v.abs() > best.abs()) {
                best = v;
            }
        }
        best
    }

    #[test]
    fn scheme_worked_cases() {
        let s = derive_scheme(&t(&[0.1, -0.75, 0.5]), 8).unwrap();
        assert_eq!((s.int_bits(), s.frac_bits()), (0, 7));
        assert_eq!(s.sigma(), 2f64.powi(-7));

        let s = derive_scheme(&t(&[4.0, -1.0]), 8).unwrap();
        assert_eq!((s.int_bits(), s.frac_bits()), (2, 5));

        let s = derive_scheme(&t(&[0.0, 0.0]), 8).unwrap();
        assert_eq!((s.int_bits(), s.frac_bits()), (0, 7));
    }

    #[test]
    fn small_magnitudes_get_negative_int_bits() {
        let s = derive_scheme(&t(&[0.1]), 8).unwrap();
        assert_eq!(s.int_bits(), -3);
        assert_eq!(s.frac_bits(), 10);
    }

    #[test]
    fn rejects_bad_bit_widths() {
        assert!(derive_scheme(&t(&[1.0]), 1).is_err());
        assert!(derive_scheme(&t(&[1.0]), 33).is_err());
    }

    #[test]
    fn clamp_codes() {
        let s = QuantScheme::new(8, 0).unwrap();
        assert_eq!(clamp_to_range(130, &s), 127);
        assert_eq!(clamp_to_range(-130, &s), -128);
        assert_eq!(clamp_to_range(-5, &s), -5);
    }

    #[test]
    fn on_grid_values_are_fixed_points() {
        let s = QuantScheme::new(8, 0).unwrap();
        let x = t(&[0.0, s.sigma() * 3.0, -s.sigma() * 128.0, s.sigma() * 127.0]);
        assert_eq!(quantize(&x, &s).weights(), &x);
    }

    #[test]
    fn rounds_to_nearest() {
        let s = QuantScheme::new(8, 0).unwrap();
        let x = 0.0078125 * 0.7501;
        let q = s.quantize_value(x);
        assert_eq!(q, s.sigma());
        assert!((q - x).abs() <= s.sigma() / 2.0);
        // Ties go away from zero.
        assert_eq!(s.quantize_value(1.5 * s.sigma()), 2.0 * s.sigma());
        assert_eq!(s.quantize_value(-1.5 * s.sigma()), -2.0 * s.sigma());
    }

    #[test]
    fn saturates_at_range_edge() {
        let tensor = t(&[4.0, -4.0]);
        let s = derive_scheme(&tensor, 8).unwrap();
        let q = quantize(&tensor, &s);
        assert_eq!(q.codes(), vec![127, -128]);
    }

    #[test]
    fn from_grid_rejects_off_grid() {
        let s = QuantScheme::new(4, 0).unwrap();
        assert!(QuantizedLayer::from_grid(t(&[0.125]), s).is_ok());
        assert!(QuantizedLayer::from_grid(t(&[0.1]), s).is_err());
        assert!(QuantizedLayer::from_grid(t(&[1.0]), s).is_err());
    }

    #[test]
    fn scheme_serde_validates() {
        let s = QuantScheme::new(6, 1).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<QuantScheme>(&json).unwrap(), s);
        let bad = r#"{"total_bits":6,"int_bits":1,"frac_bits":3,"sigma":0.125}"#;
        assert!(serde_json::from_str::<QuantScheme>(bad).is_err());
    }

    fn fixture() -> Model {
        Model::new(
            vec![3],
            vec![
                LayerSpec::new(
                    "a",
                    Layer::Dense {
                        weights: Tensor::new(vec![3, 2], vec![0.3, -0.9, 0.12, 0.5, -0.02, 0.77])
                            .unwrap(),
                        bias: None,
                    },
                ),
                LayerSpec::new("r", Layer::Relu),
                LayerSpec::new(
                    "b",
                    Layer::Dense {
                        weights: Tensor::new(vec![2, 1], vec![2.7, -1.3]).unwrap(),
                        bias: None,
                    },
                ),
            ],
        )
        .unwrap()
    }

    #[test]
    fn model_quantization_is_layerwise() {
        let m = fixture();
        let (q, schemes) = quantize_model(&m, 4).unwrap();
        for (name, w) in m.weighted_layers() {
            let s = derive_scheme(w, 4).unwrap();
            assert_eq!(schemes[name], s);
            assert_eq!(q.layer_weights(name).unwrap(), quantize(w, &s).weights());
        }
    }

    #[test]
    fn model_on_grid_is_unchanged() {
        let (q, _) = quantize_model(&fixture(), 8).unwrap();
        let (qq, _) = quantize_model(&q, 8).unwrap();
        let x = Tensor::new(vec![1, 3], vec![0.2, -0.4, 1.0]).unwrap();
        assert_eq!(q.forward(&x).unwrap(), qq.forward(&x).unwrap());
    }

    #[test]
    fn wide_model_quantization_error_is_tiny() {
        let m = fixture();
        let (q, schemes) = quantize_model(&m, 32).unwrap();
        for (name, w) in m.weighted_layers() {
            let sigma = schemes[name].sigma();
            let qw = q.layer_weights(name).unwrap();
            for (a, b) in w.data().iter().zip(qw.data()) {
                assert!((a - b).abs() <= sigma / 2.0);
            }
        }
    }

    #[test]
    fn model_without_weights_rejected() {
        let m = Model::new(vec![2], vec![LayerSpec::new("r", Layer::Relu)]).unwrap();
        assert!(quantize_model(&m, 8).is_err());
    }

    proptest! {
        #[test]
        fn matches_exhaustive_grid(bits in 2u32..=8, values in prop::collection::vec(-3.0f64..3.0, 1..24)) {
            let x = Tensor::new(vec![values.len()], values).unwrap();
            let s = derive_scheme(&x, bits).unwrap();
            let q = quantize(&x, &s);
            for (&xi, &qi) in x.data().iter().zip(q.weights().data()) {
                prop_assert_eq!(qi, grid_search(xi, &s));
            }
        }

        #[test]
        fn nearest_bound_idempotent_and_on_grid(bits in 2u32..=16, values in prop::collection::vec(-100.0f64..100.0, 1..32)) {
            let x = Tensor::new(vec![values.len()], values).unwrap();
            let s = derive_scheme(&x, bits).unwrap();
            let q = quantize(&x, &s);
            let lo = s.value_of(s.min_code());
            let hi = s.value_of(s.max_code());
            for (&xi, &qi) in x.data().iter().zip(q.weights().data()) {
                if (lo..=hi).contains(&xi) {
                    prop_assert!((qi - xi).abs() <= s.sigma() / 2.0);
                }
                prop_assert!(s.code_of(qi).is_some());
            }
            let again = quantize(q.weights(), &s);
            prop_assert_eq!(again.weights(), q.weights());
        }
    }
}

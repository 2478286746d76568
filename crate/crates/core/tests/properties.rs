use proptest::prelude::*;
use qevo::evolution::{finetune_layer, MutationConfig};
use qevo::quantizer::{check_on_grid, derive_scheme, quantize};
use qevo::{Layer, LayerSpec, Model, Result, Tensor};

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 2..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tuned_layer_stays_on_grid(w in weights(), bits in 2u32..6, seed in 0u64..1000) {
        let n = w.len();
        let t = Tensor::new(vec![n, 1], w).unwrap();
        let scheme = derive_scheme(&t, bits).unwrap();
        let q = quantize(&t, &scheme).into_weights();
        let model = Model::new(vec![n], vec![LayerSpec::new("fc", Layer::Dense { weights: q, bias: None })]).unwrap();
        let x = Tensor::from_fn(vec![5, n], |i| (i as f64 * 0.37).sin()).unwrap();
        let target = model.forward(&x).unwrap();
        // A fitness that rewards drifting away, so mutants often win.
        let eval = |m: &Model| -> Result<f64> {
            let y = m.forward(&x)?;
            Ok(y.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum())
        };
        let cfg = MutationConfig { population_size: 4, iterations: 8, p: 0.3, seed, parallel: false, ..MutationConfig::default() };
        let tuned = finetune_layer(&model, "fc", &scheme, &cfg, &eval).unwrap();
        check_on_grid(&tuned.weights, &scheme).unwrap();
        prop_assert!(tuned.history.windows(2).all(|h| h[1].best >= h[0].best));
        prop_assert!(tuned.history.iter().all(|h| h.mean <= h.best));
        prop_assert!(tuned.best_fitness().unwrap() >= tuned.initial_fitness.unwrap());
    }
}

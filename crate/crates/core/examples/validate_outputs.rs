//! Customer-side checks. Test A compares each provider's update with the
//! combined update of its peers; Test B watches a moving average of the
//! held-out loss.

use std::collections::BTreeMap;

use fedstr::ml::{
    init_model, inner_optimize, split_dataset, synthetic_linear, synthetic_linear_holdout, total_loss,
    InnerHyperparams, LossSpec, ModelSpec, RunOption,
};
use fedstr::validation::{deltas_from_inner, validate_test_a, validate_test_b, TestType, ValidationConfig};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (train, _, _) = synthetic_linear(900, 5, 0.1, 1)?;
    let test = synthetic_linear_holdout(200, 5, 0.1, 1, 1)?;
    let spec = ModelSpec::linear(5);
    let global = init_model(&spec)?;

    let mut inner = BTreeMap::new();
    for (k, shard) in split_dataset(&train, 3, 1)?.iter().enumerate() {
        let out = inner_optimize(&global, &spec, LossSpec::Mse, shard, RunOption::FedAvg, &InnerHyperparams::default(), &mut |_, _| {})?;
        inner.insert(format!("provider-{k}"), out);
    }
    // provider-2 returns its model plus heavy noise
    let noise = Normal::new(0.0, 10f64.sqrt())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let noisy = inner.get_mut("provider-2").expect("present");
    noisy.values.iter_mut().for_each(|v| *v += noise.sample(&mut rng));

    let cfg = ValidationConfig {
        test_type: TestType::A,
        gamma_t: 0.5 * test.len() as f64,
        beta_t: total_loss(&global, &spec, LossSpec::Mse, &test)?,
        tau_c: 2,
        test_dataset: test,
        loss: LossSpec::Mse,
        model: spec,
    };
    let deltas = deltas_from_inner(&global, &inner)?;
    for name in inner.keys() {
        println!("test A {name}: {:?}", validate_test_a(name, &global, &deltas, &cfg)?);
    }

    let honest = inner["provider-0"].clone();
    println!("test B, one entry:    {:?}", validate_test_b(std::slice::from_ref(&honest), &cfg)?);
    let history = vec![global.clone(), honest.clone(), honest];
    println!("test B, three entries: {:?}", validate_test_b(&history, &cfg)?);
    Ok(())
}

//! Three FedAvg rounds done by hand: split the data, run SGD on each shard,
//! average the results.

use fedstr::ml::{
    init_model, inner_optimize, loss, outer_fedavg, split_dataset, synthetic_linear, InnerHyperparams, LossSpec,
    ModelSpec, RunOption,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (data, w, b) = synthetic_linear(3000, 10, 0.1, 7)?;
    let spec = ModelSpec::linear(10);
    let shards = split_dataset(&data, 3, 7)?;
    let hp = InnerHyperparams::default();

    let mut global = init_model(&spec)?;
    println!("round 0  mse {:.5}", loss(&global, &spec, LossSpec::Mse, &data)?);
    for round in 1..=3 {
        let inner = shards
            .iter()
            .enumerate()
            .map(|(k, shard)| {
                let hp = InnerHyperparams {
                    shuffle_seed: round * 1000 + k as u64,
                    ..hp.clone()
                };
                inner_optimize(&global, &spec, LossSpec::Mse, shard, RunOption::FedAvg, &hp, &mut |_, _| {})
            })
            .collect::<Result<Vec<_>, _>>()?;
        global = outer_fedavg(&inner, &[])?;
        println!("round {round}  mse {:.5}", loss(&global, &spec, LossSpec::Mse, &data)?);
    }
    let err = global.values[..10].iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |w - w*| = {err:.4}, bias {:.4} vs {b:.4}", global.values[10]);
    Ok(())
}

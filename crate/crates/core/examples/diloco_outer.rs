//! DiLoCo: many AdamW steps per worker, then a Nesterov step on the averaged
//! pseudo-gradient. Momentum is carried between rounds in `OuterState`.

use fedstr::ml::{
    init_model, inner_optimize, loss, outer_diloco, split_dataset, synthetic_linear, InnerHyperparams, LossSpec,
    ModelSpec, NesterovConfig, OuterState, RunOption,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (data, _, _) = synthetic_linear(2000, 8, 0.1, 3)?;
    let spec = ModelSpec::linear(8);
    let shards = split_dataset(&data, 4, 3)?;
    let hp = InnerHyperparams {
        epochs: 50,
        learning_rate: 0.02,
        ..Default::default()
    };

    let mut global = init_model(&spec)?;
    let mut state = OuterState::new(NesterovConfig {
        outer_lr: 0.7,
        momentum: 0.9,
    });
    for round in 1..=5 {
        let inner = shards
            .iter()
            .map(|s| inner_optimize(&global, &spec, LossSpec::Mse, s, RunOption::DiLoCo, &hp, &mut |_, _| {}))
            .collect::<Result<Vec<_>, _>>()?;
        (global, state) = outer_diloco(&global, &inner, &state)?;
        let speed = state.velocity.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!(
            "round {round}  mse {:.5}  |v| {speed:.4}",
            loss(&global, &spec, LossSpec::Mse, &data)?
        );
    }
    println!("outer state as shipped to a delegate: {}", serde_json::to_string(&state)?);
    Ok(())
}

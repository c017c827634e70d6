use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::{batch_loss_and_grad, check, loss, LossSpec, ModelSpec};
use super::params::ModelParams;
use super::MlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunOption {
    FedAvg,
    DiLoCo,
}

impl RunOption {
    pub fn as_str(self) -> &'static str {
        match self {
            RunOption::FedAvg => "FedAvg",
            RunOption::DiLoCo => "DiLoCo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "FedAvg" => Some(RunOption::FedAvg),
            "DiLoCo" => Some(RunOption::DiLoCo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// For FedAvg `epochs` counts passes over the shard; for DiLoCo it counts
/// AdamW steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerHyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub adamw: AdamWConfig,
    #[serde(default)]
    pub shuffle_seed: u64,
}

impl Default for InnerHyperparams {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 16,
            learning_rate: 0.05,
            adamw: AdamWConfig::default(),
            shuffle_seed: 0,
        }
    }
}

impl InnerHyperparams {
    pub fn validate(&self) -> Result<(), MlError> {
        let bad = |m: &str| Err(MlError::InvalidHyperparams(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        let a = &self.adamw;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(a.eps > 0.0) {
            return bad("eps must be > 0");
        }
        if !(a.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        Ok(())
    }
}

/// Runs the inner loop on one shard. `progress(k, loss)` fires after every
/// epoch (FedAvg, full-shard loss) or step (DiLoCo, batch loss).
pub fn inner_optimize(
    p: &ModelParams,
    spec: &ModelSpec,
    lspec: LossSpec,
    data: &Dataset,
    run: RunOption,
    hp: &InnerHyperparams,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<ModelParams, MlError> {
    hp.validate()?;
    p.validate()?;
    check(p, spec, lspec, data)?;
    match run {
        RunOption::FedAvg => sgd(p, spec, lspec, data, hp, progress),
        RunOption::DiLoCo => adamw(p, spec, lspec, data, hp, progress),
    }
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn sgd(
    p: &ModelParams,
    spec: &ModelSpec,
    lspec: LossSpec,
    data: &Dataset,
    hp: &InnerHyperparams,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<ModelParams, MlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(hp.shuffle_seed);
    let mut theta = p.values.clone();
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 0..hp.epochs {
        idx.shuffle(&mut rng);
        for batch in idx.chunks(hp.batch_size) {
            let current = p.with_values(theta.clone());
            let (l, g) = batch_loss_and_grad(&current, spec, lspec, data, batch);
            let next: Vec<f64> = theta
                .iter()
                .zip(&g)
                .map(|(t, gi)| t - hp.learning_rate * gi)
                .collect();
            if !l.is_finite() || !finite(&next) {
                return Err(MlError::Divergence { step, last_finite: current });
            }
            theta = next;
            step += 1;
        }
        let current = p.with_values(theta.clone());
        let l = loss(&current, spec, lspec, data)?;
        if !l.is_finite() {
            return Err(MlError::Divergence { step, last_finite: current });
        }
        progress(epoch + 1, l);
    }
    Ok(p.with_values(theta))
}

fn adamw(
    p: &ModelParams,
    spec: &ModelSpec,
    lspec: LossSpec,
    data: &Dataset,
    hp: &InnerHyperparams,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<ModelParams, MlError> {
    let AdamWConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = hp.adamw;
    let lr = hp.learning_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.shuffle_seed);
    let mut theta = p.values.clone();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let b = hp.batch_size.min(data.len());
    for t in 1..=hp.epochs {
        let (batch, _) = idx.partial_shuffle(&mut rng, b);
        let current = p.with_values(theta.clone());
        let (l, g) = batch_loss_and_grad(&current, spec, lspec, data, batch);
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);
        let mut next = theta.clone();
        for j in 0..theta.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            next[j] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * theta[j]);
        }
        if !l.is_finite() || !finite(&next) {
            return Err(MlError::Divergence {
                step: t - 1,
                last_finite: current,
            });
        }
        theta = next;
        progress(t, l);
    }
    Ok(p.with_values(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::data::{synthetic_linear, Targets};
    use crate::ml::model::{grad, init_model, Activation};

    fn hp(epochs: usize, batch: usize, lr: f64) -> InnerHyperparams {
        InnerHyperparams {
            epochs,
            batch_size: batch,
            learning_rate: lr,
            adamw: AdamWConfig::default(),
            shuffle_seed: 3,
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (d, _, _) = synthetic_linear(20, 3, 0.1, 1).unwrap();
        let spec = ModelSpec::mlp(3, vec![4], 1, Activation::Tanh, 2);
        let p = init_model(&spec).unwrap();
        for run in [RunOption::FedAvg, RunOption::DiLoCo] {
            let out = inner_optimize(&p, &spec, LossSpec::Mse, &d, run, &hp(3, 5, 0.0), &mut |_, _| {}).unwrap();
            assert_eq!(out, p);
        }
    }

    #[test]
    fn single_full_batch_sgd_step() {
        let (d, _, _) = synthetic_linear(12, 2, 0.1, 5).unwrap();
        let spec = ModelSpec::linear(2);
        let p = ModelParams::new(vec![0.3, -0.1, 0.2], spec.layout()).unwrap();
        let g = grad(&p, &spec, LossSpec::Mse, &d).unwrap();
        let out = inner_optimize(&p, &spec, LossSpec::Mse, &d, RunOption::FedAvg, &hp(1, 12, 0.1), &mut |_, _| {}).unwrap();
        for j in 0..3 {
            assert!((out.values[j] - (p.values[j] - 0.1 * g[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn single_adamw_step_matches_scalar_oracle() {
        // one weight, no bias contribution to check: model y = w*x + b with
        // x = 1, y = 0 at w = 0.5, b = 0.25
        let spec = ModelSpec::linear(1);
        let p = ModelParams::new(vec![0.5, 0.25], spec.layout()).unwrap();
        let d = Dataset::from_rows(&[vec![1.0]], Targets::Real(vec![0.0])).unwrap();
        let lr = 0.01;
        let out = inner_optimize(&p, &spec, LossSpec::Mse, &d, RunOption::DiLoCo, &hp(1, 1, lr), &mut |_, _| {}).unwrap();
        // residual r = 0.75, g_w = g_b = 1.5
        // m = 0.1*1.5 = 0.15, v = 0.001*2.25 = 0.00225
        // m_hat = 1.5, v_hat = 2.25, step = 1.5/(1.5+1e-8)
        let step = 1.5 / (1.5 + 1e-8);
        let w = 0.5 - lr * (step + 0.01 * 0.5);
        let b = 0.25 - lr * (step + 0.01 * 0.25);
        assert!((out.values[0] - w).abs() < 1e-15, "{} vs {w}", out.values[0]);
        assert!((out.values[1] - b).abs() < 1e-15, "{} vs {}", out.values[1], b);
    }

    #[test]
    fn fedavg_full_batch_loss_is_monotone() {
        for seed in 0..10 {
            let (d, _, _) = synthetic_linear(40, 3, 0.2, seed).unwrap();
            let spec = ModelSpec::linear(3);
            let p = init_model(&spec).unwrap();
            let mut losses = vec![loss(&p, &spec, LossSpec::Mse, &d).unwrap()];
            inner_optimize(&p, &spec, LossSpec::Mse, &d, RunOption::FedAvg, &hp(20, 40, 0.05), &mut |_, l| losses.push(l)).unwrap();
            assert_eq!(losses.len(), 21);
            for w in losses.windows(2) {
                assert!(w[1] < w[0], "seed {seed}: {losses:?}");
            }
        }
    }

    #[test]
    fn diloco_reduces_loss() {
        let (d, _, _) = synthetic_linear(60, 3, 0.1, 7).unwrap();
        let spec = ModelSpec::linear(3);
        let p = init_model(&spec).unwrap();
        let before = loss(&p, &spec, LossSpec::Mse, &d).unwrap();
        let mut steps = 0;
        let out = inner_optimize(&p, &spec, LossSpec::Mse, &d, RunOption::DiLoCo, &hp(200, 16, 0.05), &mut |_, _| steps += 1).unwrap();
        assert_eq!(steps, 200);
        assert!(loss(&out, &spec, LossSpec::Mse, &d).unwrap() < 0.1 * before);
    }

    #[test]
    fn divergence_returns_last_finite_params() {
        let (d, _, _) = synthetic_linear(30, 2, 0.1, 2).unwrap();
        let spec = ModelSpec::linear(2);
        let p = init_model(&spec).unwrap();
        let err = inner_optimize(&p, &spec, LossSpec::Mse, &d, RunOption::FedAvg, &hp(10_000, 30, 1e3), &mut |_, _| {})
            .unwrap_err();
        match err {
            MlError::Divergence { last_finite, .. } => {
                assert!(last_finite.values.iter().all(|v| v.is_finite()));
                assert!(last_finite.same_layout(&p));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn seeded_runs_are_deterministic() {
        let (d, _, _) = synthetic_linear(25, 2, 0.3, 8).unwrap();
        let spec = ModelSpec::linear(2);
        let p = init_model(&spec).unwrap();
        for run in [RunOption::FedAvg, RunOption::DiLoCo] {
            let a = inner_optimize(&p, &spec, LossSpec::Mse, &d, run, &hp(4, 7, 0.05), &mut |_, _| {}).unwrap();
            let b = inner_optimize(&p, &spec, LossSpec::Mse, &d, run, &hp(4, 7, 0.05), &mut |_, _| {}).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn bad_hyperparams_rejected() {
        assert!(hp(0, 1, 0.1).validate().is_err());
        assert!(hp(1, 0, 0.1).validate().is_err());
        assert!(hp(1, 1, -0.1).validate().is_err());
        let mut h = hp(1, 1, 0.1);
        h.adamw.beta1 = 1.0;
        assert!(h.validate().is_err());
        h.adamw.beta1 = 0.9;
        h.adamw.eps = 0.0;
        assert!(h.validate().is_err());
    }
}

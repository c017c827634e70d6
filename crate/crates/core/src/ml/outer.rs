use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::MlError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NesterovConfig {
    pub outer_lr: f64,
    pub momentum: f64,
}

impl Default for NesterovConfig {
    fn default() -> Self {
        Self {
            outer_lr: 1.0,
            momentum: 0.9,
        }
    }
}

/// Aggregation weights and the outer Nesterov state carried across rounds.
/// Empty `weights` means `η_k = 1` for every provider; empty `velocity`
/// means zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OuterState {
    #[serde(default)]
    pub weights: Vec<f64>,
    #[serde(default)]
    pub nesterov: NesterovConfig,
    #[serde(default)]
    pub velocity: Vec<f64>,
}

impl OuterState {
    pub fn new(nesterov: NesterovConfig) -> Self {
        Self {
            weights: Vec::new(),
            nesterov,
            velocity: Vec::new(),
        }
    }
}

fn resolve_weights(weights: &[f64], k: usize) -> Result<Vec<f64>, MlError> {
    if weights.is_empty() {
        return Ok(vec![1.0; k]);
    }
    if weights.len() != k {
        return Err(MlError::LayoutMismatch(format!("{} weights for {k} models", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(MlError::InvalidHyperparams("weights must be finite and >= 0".into()));
    }
    Ok(weights.to_vec())
}

fn check_layouts(reference: &ModelParams, list: &[ModelParams]) -> Result<(), MlError> {
    if list.is_empty() {
        return Err(MlError::LayoutMismatch("no inner results".into()));
    }
    if let Some(i) = list.iter().position(|p| !p.same_layout(reference)) {
        return Err(MlError::LayoutMismatch(format!("inner result {i} has a different layout")));
    }
    Ok(())
}

/// `θ_global = (1/K) Σ η_k θ_k`.
pub fn outer_fedavg(inner: &[ModelParams], weights: &[f64]) -> Result<ModelParams, MlError> {
    let first = inner
        .first()
        .ok_or_else(|| MlError::LayoutMismatch("no inner results".into()))?;
    check_layouts(first, inner)?;
    let w = resolve_weights(weights, inner.len())?;
    let k = inner.len() as f64;
    let mut acc = vec![0.0; first.len()];
    for (p, wk) in inner.iter().zip(&w) {
        for (a, v) in acc.iter_mut().zip(&p.values) {
            *a += wk * v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= k);
    let out = first.with_values(acc);
    out.validate()?;
    Ok(out)
}

/// Outer gradient `Δ = (1/K) Σ η_k (θ_global − θ_k)` followed by a Nesterov
/// step: `v ← μv + Δ`, `θ_global ← θ_global − lr (μv + Δ)`.
pub fn outer_diloco(
    global: &ModelParams,
    inner: &[ModelParams],
    state: &OuterState,
) -> Result<(ModelParams, OuterState), MlError> {
    check_layouts(global, inner)?;
    let w = resolve_weights(&state.weights, inner.len())?;
    let n = global.len();
    let velocity = if state.velocity.is_empty() {
        vec![0.0; n]
    } else if state.velocity.len() == n {
        state.velocity.clone()
    } else {
        return Err(MlError::LayoutMismatch("velocity length differs from params".into()));
    };
    // With s = Ση/K the step equals (1 − lr·s)·θ_global + lr·(avg − μv),
    // avg = (1/K) Σ η θ_k. When that coefficient is zero, θ_global is left
    // out so plain averaging (lr = 1, μ = 0) is reproduced bit for bit;
    // otherwise the direct form keeps fixed points exact.
    let k = inner.len() as f64;
    let s = w.iter().sum::<f64>() / k;
    let anchor = &inner[0].values;
    let NesterovConfig { outer_lr, momentum } = state.nesterov;
    let drop_global = 1.0 - outer_lr * s == 0.0;
    let mut v = velocity;
    let mut theta = global.values.clone();
    for j in 0..n {
        let mut delta = 0.0;
        let mut spread = 0.0;
        for (p, wk) in inner.iter().zip(&w) {
            delta += wk * (global.values[j] - p.values[j]);
            spread += wk * (p.values[j] - anchor[j]);
        }
        delta /= k;
        v[j] = momentum * v[j] + delta;
        theta[j] = if drop_global {
            let avg = s * anchor[j] + spread / k;
            outer_lr * (avg - momentum * v[j])
        } else {
            global.values[j] - outer_lr * (momentum * v[j] + delta)
        };
    }
    let out = global.with_values(theta);
    out.validate()?;
    Ok((
        out,
        OuterState {
            weights: state.weights.clone(),
            nesterov: state.nesterov,
            velocity: v,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::params::TensorSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(v: Vec<f64>) -> ModelParams {
        let n = v.len();
        ModelParams::new(v, vec![TensorSpec::new("w", vec![n])]).unwrap()
    }

    #[test]
    fn single_input_identity() {
        let p = params(vec![1.5, -2.0, 0.25]);
        assert_eq!(outer_fedavg(std::slice::from_ref(&p), &[1.0]).unwrap(), p);
    }

    #[test]
    fn symmetric_average() {
        let out = outer_fedavg(&[params(vec![0.0, 2.0]), params(vec![2.0, 0.0])], &[]).unwrap();
        assert_eq!(out.values, vec![1.0, 1.0]);
    }

    #[test]
    fn three_way_average_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let list: Vec<ModelParams> = (0..3)
            .map(|_| params((0..50).map(|_| rng.gen_range(-10.0..10.0)).collect()))
            .collect();
        let out = outer_fedavg(&list, &[1.0, 1.0, 1.0]).unwrap();
        for j in 0..50 {
            let oracle = (list[0].values[j] + list[1].values[j] + list[2].values[j]) / 3.0;
            assert!((out.values[j] - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn layout_mismatch_rejected() {
        assert!(outer_fedavg(&[params(vec![0.0]), params(vec![0.0, 1.0])], &[]).is_err());
        assert!(outer_fedavg(&[params(vec![0.0])], &[1.0, 1.0]).is_err());
        assert!(outer_fedavg(&[], &[]).is_err());
        let g = params(vec![0.0]);
        assert!(outer_diloco(&g, &[params(vec![0.0, 1.0])], &OuterState::default()).is_err());
    }

    #[test]
    fn diloco_fixed_point() {
        let g = params(vec![0.5, -1.0]);
        let (out, st) = outer_diloco(&g, &[g.clone(), g.clone()], &OuterState::default()).unwrap();
        assert_eq!(out, g);
        assert_eq!(st.velocity, vec![0.0, 0.0]);
    }

    #[test]
    fn diloco_recovers_single_worker_step() {
        let g = params(vec![1.0, 2.0]);
        let inner = params(vec![0.7, 2.5]);
        let st = OuterState::new(NesterovConfig {
            outer_lr: 1.0,
            momentum: 0.0,
        });
        let (out, _) = outer_diloco(&g, std::slice::from_ref(&inner), &st).unwrap();
        assert_eq!(out, inner);
    }

    #[test]
    fn two_round_nesterov_trace() {
        // scalar, lr = 0.5, mu = 0.9
        // round 1: theta = 1, inner = 0.8 -> delta = 0.2, v = 0.2,
        //          theta = 1 - 0.5*(0.18 + 0.2) = 0.81
        // round 2: inner = 0.71 -> delta = 0.1, v = 0.18 + 0.1 = 0.28,
        //          theta = 0.81 - 0.5*(0.252 + 0.1) = 0.634
        let st = OuterState::new(NesterovConfig {
            outer_lr: 0.5,
            momentum: 0.9,
        });
        let (g1, st) = outer_diloco(&params(vec![1.0]), &[params(vec![0.8])], &st).unwrap();
        assert!((g1.values[0] - 0.81).abs() < 1e-12);
        assert!((st.velocity[0] - 0.2).abs() < 1e-12);
        let (g2, st) = outer_diloco(&g1, &[params(vec![0.71])], &st).unwrap();
        assert!((st.velocity[0] - 0.28).abs() < 1e-12);
        assert!((g2.values[0] - 0.634).abs() < 1e-12);
    }

    #[test]
    fn state_json_round_trip() {
        let st = OuterState {
            weights: vec![1.0, 0.5],
            nesterov: NesterovConfig::default(),
            velocity: vec![0.1, -0.2],
        };
        let s = serde_json::to_string(&st).unwrap();
        assert_eq!(serde_json::from_str::<OuterState>(&s).unwrap(), st);
        assert_eq!(serde_json::from_str::<OuterState>("{}").unwrap(), OuterState::default());
    }
}

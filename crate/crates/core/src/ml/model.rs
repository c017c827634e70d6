use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Targets};
use super::params::{ModelParams, TensorSpec};
use super::MlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelFamily {
    LinearRegression,
    LogisticRegression,
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
    },
}

/// Architecture of a desk-scale model. Serialized as the `model` job
/// parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub init_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    Mse,
    CrossEntropy,
}

impl ModelSpec {
    pub fn linear(input_dim: usize) -> Self {
        Self {
            family: ModelFamily::LinearRegression,
            input_dim,
            output_dim: 1,
            init_seed: 0,
        }
    }

    pub fn logistic(input_dim: usize, classes: usize) -> Self {
        Self {
            family: ModelFamily::LogisticRegression,
            input_dim,
            output_dim: if classes == 2 { 1 } else { classes },
            init_seed: 0,
        }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, output_dim: usize, activation: Activation, init_seed: u64) -> Self {
        Self {
            family: ModelFamily::Mlp { hidden, activation },
            input_dim,
            output_dim,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<(), MlError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(MlError::InvalidSpec("dimensions must be >= 1".into()));
        }
        if let ModelFamily::Mlp { hidden, .. } = &self.family {
            if hidden.contains(&0) {
                return Err(MlError::InvalidSpec("hidden sizes must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Layer widths from input to output.
    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        if let ModelFamily::Mlp { hidden, .. } = &self.family {
            w.extend_from_slice(hidden);
        }
        w.push(self.output_dim);
        w
    }

    fn activation(&self) -> Option<Activation> {
        match &self.family {
            ModelFamily::Mlp { activation, .. } => Some(*activation),
            _ => None,
        }
    }

    pub fn layout(&self) -> Vec<TensorSpec> {
        let w = self.widths();
        if w.len() == 2 {
            return vec![
                TensorSpec::new("weight", vec![w[1], w[0]]),
                TensorSpec::new("bias", vec![w[1]]),
            ];
        }
        let mut out = Vec::new();
        for l in 0..w.len() - 1 {
            out.push(TensorSpec::new(format!("layer{l}.weight"), vec![w[l + 1], w[l]]));
            out.push(TensorSpec::new(format!("layer{l}.bias"), vec![w[l + 1]]));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(TensorSpec::numel).sum()
    }
}

/// Linear and logistic models start at zero. MLP weights are drawn from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` seeded by `init_seed`; biases are zero.
pub fn init_model(spec: &ModelSpec) -> Result<ModelParams, MlError> {
    spec.validate()?;
    let layout = spec.layout();
    let n: usize = layout.iter().map(TensorSpec::numel).sum();
    let mut values = vec![0.0; n];
    if spec.activation().is_some() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let mut off = 0;
        for t in &layout {
            if t.shape.len() == 2 {
                let bound = 1.0 / (t.shape[1] as f64).sqrt();
                for v in &mut values[off..off + t.numel()] {
                    *v = rng.gen_range(-bound..bound);
                }
            }
            off += t.numel();
        }
    }
    ModelParams::new(values, layout)
}

fn check_compat(p: &ModelParams, spec: &ModelSpec, lspec: LossSpec, data: &Dataset) -> Result<(), MlError> {
    spec.validate()?;
    if p.layout != spec.layout() {
        return Err(MlError::DimMismatch("params layout does not match model spec".into()));
    }
    if data.dim() != spec.input_dim {
        return Err(MlError::DimMismatch(format!(
            "data has {} features, model expects {}",
            data.dim(),
            spec.input_dim
        )));
    }
    match (lspec, data.targets()) {
        (LossSpec::Mse, Targets::Real(_)) => {
            if spec.output_dim != 1 {
                return Err(MlError::DimMismatch("MSE needs output_dim 1".into()));
            }
        }
        (LossSpec::CrossEntropy, Targets::Classes(c)) => {
            let classes = spec.output_dim.max(2);
            if let Some(bad) = c.iter().find(|&&k| k >= classes) {
                return Err(MlError::DimMismatch(format!("class {bad} out of range for {classes} classes")));
            }
        }
        (LossSpec::Mse, Targets::Classes(_)) => {
            return Err(MlError::DimMismatch("MSE needs real targets".into()))
        }
        (LossSpec::CrossEntropy, Targets::Real(_)) => {
            return Err(MlError::DimMismatch("cross-entropy needs class targets".into()))
        }
    }
    if matches!(spec.family, ModelFamily::LogisticRegression) && lspec != LossSpec::CrossEntropy {
        return Err(MlError::InvalidSpec("logistic regression is trained with cross-entropy".into()));
    }
    Ok(())
}

/// Sum of per-sample losses over `rows`, plus the summed gradient when
/// `want_grad` is set.
fn accumulate(
    p: &ModelParams,
    spec: &ModelSpec,
    lspec: LossSpec,
    data: &Dataset,
    rows: &mut dyn Iterator<Item = usize>,
    want_grad: bool,
) -> (f64, Vec<f64>, usize) {
    let widths = spec.widths();
    let act = spec.activation();
    let layers = widths.len() - 1;
    // offsets of each layer's weight and bias blocks
    let mut offs = Vec::with_capacity(layers);
    let mut off = 0;
    for l in 0..layers {
        let w = off;
        off += widths[l + 1] * widths[l];
        let b = off;
        off += widths[l + 1];
        offs.push((w, b));
    }
    let theta = &p.values;
    let mut g = if want_grad { vec![0.0; theta.len()] } else { Vec::new() };
    let mut total = 0.0;
    let mut count = 0;
    let mut acts: Vec<Vec<f64>> = vec![Vec::new(); layers + 1];
    for i in rows {
        count += 1;
        acts[0].clear();
        acts[0].extend_from_slice(data.row(i));
        for l in 0..layers {
            let (wo, bo) = offs[l];
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let mut z = vec![0.0; fan_out];
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &theta[wo + r * fan_in..wo + (r + 1) * fan_in];
                *zr = theta[bo + r] + row.iter().zip(&acts[l]).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < layers {
                let a = act.expect("hidden layers imply an activation");
                z.iter_mut().for_each(|v| *v = a.apply(*v));
            }
            acts[l + 1] = z;
        }
        let out = &acts[layers];
        let (l_i, mut delta) = sample_loss(lspec, out, data.targets(), i);
        total += l_i;
        if !want_grad {
            continue;
        }
        for l in (0..layers).rev() {
            let (wo, bo) = offs[l];
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            for r in 0..fan_out {
                g[bo + r] += delta[r];
                for c in 0..fan_in {
                    g[wo + r * fan_in + c] += delta[r] * acts[l][c];
                }
            }
            if l == 0 {
                break;
            }
            let a = act.expect("hidden layers imply an activation");
            let mut prev = vec![0.0; fan_in];
            for (c, pc) in prev.iter_mut().enumerate() {
                let s: f64 = (0..fan_out).map(|r| theta[wo + r * fan_in + c] * delta[r]).sum();
                *pc = s * a.derivative(acts[l][c]);
            }
            delta = prev;
        }
    }
    (total, g, count)
}

/// Per-sample loss and its gradient with respect to the output logits.
fn sample_loss(lspec: LossSpec, out: &[f64], targets: &Targets, i: usize) -> (f64, Vec<f64>) {
    match (lspec, targets) {
        (LossSpec::Mse, Targets::Real(y)) => {
            let r = out[0] - y[i];
            (r * r, vec![2.0 * r])
        }
        (LossSpec::CrossEntropy, Targets::Classes(c)) => {
            let k = c[i];
            if out.len() == 1 {
                let z = out[0];
                let y = k as f64;
                let l = z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
                let s = 1.0 / (1.0 + (-z).exp());
                (l, vec![s - y])
            } else {
                let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + out.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
                let mut d: Vec<f64> = out.iter().map(|z| (z - lse).exp()).collect();
                d[k] -= 1.0;
                (lse - out[k], d)
            }
        }
        _ => unreachable!("checked by check_compat"),
    }
}

/// Mean per-sample loss and its gradient over `data`.
pub fn loss_and_grad(
    p: &ModelParams,
    spec: &ModelSpec,
    lspec: LossSpec,
    data: &Dataset,
) -> Result<(f64, Vec<f64>), MlError> {
    check_compat(p, spec, lspec, data)?;
    let (sum, mut g, n) = accumulate(p, spec, lspec, data, &mut (0..data.len()), true);
    let scale = 1.0 / n as f64;
    g.iter_mut().for_each(|v| *v *= scale);
    Ok((sum * scale, g))
}

/// Mean loss and gradient over the given row indices.
pub(crate) fn batch_loss_and_grad(
    p: &ModelParams,
    spec: &ModelSpec,
    lspec: LossSpec,
    data: &Dataset,
    rows: &[usize],
) -> (f64, Vec<f64>) {
    let (sum, mut g, n) = accumulate(p, spec, lspec, data, &mut rows.iter().copied(), true);
    let scale = 1.0 / n as f64;
    g.iter_mut().for_each(|v| *v *= scale);
    (sum * scale, g)
}

pub(crate) fn check(p: &ModelParams, spec: &ModelSpec, lspec: LossSpec, data: &Dataset) -> Result<(), MlError> {
    check_compat(p, spec, lspec, data)
}

pub fn loss(p: &ModelParams, spec: &ModelSpec, lspec: LossSpec, data: &Dataset) -> Result<f64, MlError> {
    check_compat(p, spec, lspec, data)?;
    let (sum, _, n) = accumulate(p, spec, lspec, data, &mut (0..data.len()), false);
    Ok(sum / n as f64)
}

pub fn grad(p: &ModelParams, spec: &ModelSpec, lspec: LossSpec, data: &Dataset) -> Result<Vec<f64>, MlError> {
    loss_and_grad(p, spec, lspec, data).map(|(_, g)| g)
}

/// Sum of per-sample losses, `Σ_z ℓ(θ, z)`, as used by the validation tests.
pub fn total_loss(p: &ModelParams, spec: &ModelSpec, lspec: LossSpec, data: &Dataset) -> Result<f64, MlError> {
    check_compat(p, spec, lspec, data)?;
    Ok(accumulate(p, spec, lspec, data, &mut (0..data.len()), false).0)
}

/// Output logits for one feature row.
pub fn predict(p: &ModelParams, spec: &ModelSpec, x: &[f64]) -> Result<Vec<f64>, MlError> {
    if x.len() != spec.input_dim {
        return Err(MlError::DimMismatch(format!("expected {} features", spec.input_dim)));
    }
    if p.layout != spec.layout() {
        return Err(MlError::DimMismatch("params layout does not match model spec".into()));
    }
    let widths = spec.widths();
    let mut a = x.to_vec();
    let mut off = 0;
    for l in 0..widths.len() - 1 {
        let (fi, fo) = (widths[l], widths[l + 1]);
        let w = &p.values[off..off + fi * fo];
        let b = &p.values[off + fi * fo..off + fi * fo + fo];
        off += fi * fo + fo;
        let mut z: Vec<f64> = (0..fo)
            .map(|r| b[r] + w[r * fi..(r + 1) * fi].iter().zip(&a).map(|(x, y)| x * y).sum::<f64>())
            .collect();
        if l + 2 < widths.len() {
            let act = spec.activation().expect("hidden layers imply an activation");
            z.iter_mut().for_each(|v| *v = act.apply(*v));
        }
        a = z;
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::data::{synthetic_classify, synthetic_linear};

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-8)
    }

    fn finite_diff(p: &ModelParams, spec: &ModelSpec, lspec: LossSpec, data: &Dataset, h: f64) -> Vec<f64> {
        (0..p.len())
            .map(|j| {
                let mut plus = p.values.clone();
                let mut minus = p.values.clone();
                plus[j] += h;
                minus[j] -= h;
                let lp = loss(&p.with_values(plus), spec, lspec, data).unwrap();
                let lm = loss(&p.with_values(minus), spec, lspec, data).unwrap();
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn linear_init_is_zero() {
        let p = init_model(&ModelSpec::linear(3)).unwrap();
        assert_eq!(p.values, vec![0.0; 4]);
    }

    #[test]
    fn mlp_init_is_seeded_and_covers_layout() {
        let spec = ModelSpec::mlp(4, vec![5, 3], 2, Activation::Tanh, 11);
        let a = init_model(&spec).unwrap();
        assert_eq!(a, init_model(&spec).unwrap());
        assert_eq!(a.len(), 4 * 5 + 5 + 5 * 3 + 3 + 3 * 2 + 2);
        let mut other = spec.clone();
        other.init_seed = 12;
        assert_ne!(a, init_model(&other).unwrap());
        // biases start at zero
        assert!(a.values[20..25].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_model_zero_targets() {
        let spec = ModelSpec::linear(2);
        let d = Dataset::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]], Targets::Real(vec![0.0, 0.0])).unwrap();
        let p = init_model(&spec).unwrap();
        let (l, g) = loss_and_grad(&p, &spec, LossSpec::Mse, &d).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn hand_differentiated_example() {
        // (w*2 + b - 0)^2 at w=1, b=0: loss 4, d/dw = 2*2*2 = 8, d/db = 2*2 = 4
        let spec = ModelSpec::linear(1);
        let p = ModelParams::new(vec![1.0, 0.0], spec.layout()).unwrap();
        let d = Dataset::from_rows(&[vec![2.0]], Targets::Real(vec![0.0])).unwrap();
        let (l, g) = loss_and_grad(&p, &spec, LossSpec::Mse, &d).unwrap();
        assert_eq!(l, 4.0);
        assert_eq!(g, vec![8.0, 4.0]);
        let fd = finite_diff(&p, &spec, LossSpec::Mse, &d, 1e-5);
        assert!(rel_err(&g, &fd) < 1e-8);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let (d, _, _) = synthetic_linear(16, 3, 0.1, 2).unwrap();
        for seed in 0..5 {
            let spec = ModelSpec::mlp(3, vec![6, 4], 1, Activation::Tanh, seed);
            let p = init_model(&spec).unwrap();
            let g = grad(&p, &spec, LossSpec::Mse, &d).unwrap();
            let fd = finite_diff(&p, &spec, LossSpec::Mse, &d, 1e-5);
            assert!(rel_err(&g, &fd) < 1e-4, "seed {seed}: {}", rel_err(&g, &fd));
        }
    }

    #[test]
    fn cross_entropy_gradients_match_finite_differences() {
        let d3 = synthetic_classify(18, 2, 3, 4).unwrap();
        let spec = ModelSpec::mlp(2, vec![5], 3, Activation::Tanh, 9);
        let p = init_model(&spec).unwrap();
        let g = grad(&p, &spec, LossSpec::CrossEntropy, &d3).unwrap();
        let fd = finite_diff(&p, &spec, LossSpec::CrossEntropy, &d3, 1e-5);
        assert!(rel_err(&g, &fd) < 1e-4);

        let d2 = synthetic_classify(10, 2, 2, 4).unwrap();
        let spec = ModelSpec::logistic(2, 2);
        let p = ModelParams::new(vec![0.3, -0.2, 0.1], spec.layout()).unwrap();
        let g = grad(&p, &spec, LossSpec::CrossEntropy, &d2).unwrap();
        let fd = finite_diff(&p, &spec, LossSpec::CrossEntropy, &d2, 1e-5);
        assert!(rel_err(&g, &fd) < 1e-4);
    }

    #[test]
    fn binary_cross_entropy_at_zero_is_ln2() {
        let spec = ModelSpec::logistic(1, 2);
        let p = init_model(&spec).unwrap();
        let d = Dataset::from_rows(&[vec![1.0], vec![-1.0]], Targets::Classes(vec![0, 1])).unwrap();
        assert!((loss(&p, &spec, LossSpec::CrossEntropy, &d).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn total_loss_is_sum() {
        let (d, _, _) = synthetic_linear(7, 2, 0.5, 3).unwrap();
        let spec = ModelSpec::linear(2);
        let p = init_model(&spec).unwrap();
        let mean = loss(&p, &spec, LossSpec::Mse, &d).unwrap();
        let sum = total_loss(&p, &spec, LossSpec::Mse, &d).unwrap();
        assert!((sum - 7.0 * mean).abs() < 1e-12);
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let spec = ModelSpec::linear(3);
        let p = init_model(&spec).unwrap();
        let (d, _, _) = synthetic_linear(4, 2, 0.0, 1).unwrap();
        assert!(matches!(loss(&p, &spec, LossSpec::Mse, &d), Err(MlError::DimMismatch(_))));
        let c = synthetic_classify(4, 3, 2, 1).unwrap();
        assert!(loss(&p, &spec, LossSpec::Mse, &c).is_err());
    }

    #[test]
    fn predict_matches_mse_residual() {
        let spec = ModelSpec::mlp(2, vec![3], 1, Activation::Relu, 5);
        let p = init_model(&spec).unwrap();
        let x = [0.4, -1.2];
        let out = predict(&p, &spec, &x).unwrap();
        let d = Dataset::from_rows(&[x.to_vec()], Targets::Real(vec![0.0])).unwrap();
        let l = loss(&p, &spec, LossSpec::Mse, &d).unwrap();
        assert!((out[0] * out[0] - l).abs() < 1e-15);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = ModelSpec::mlp(2, vec![3], 1, Activation::Relu, 5);
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ModelSpec>(&s).unwrap(), spec);
        assert!(ModelSpec::linear(0).validate().is_err());
    }
}

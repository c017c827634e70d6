use serde::{Deserialize, Serialize};

use super::MlError;

/// Name and shape of one tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat `f64` parameter vector plus the tensor layout it is partitioned into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub layout: Vec<TensorSpec>,
}

impl ModelParams {
    /// Builds params after checking finiteness and that the layout covers
    /// the vector exactly.
    pub fn new(values: Vec<f64>, layout: Vec<TensorSpec>) -> Result<Self, MlError> {
        let p = Self { values, layout };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), MlError> {
        let total: usize = self.layout.iter().map(TensorSpec::numel).sum();
        if total != self.values.len() {
            return Err(MlError::InvalidParams(format!(
                "layout covers {total} values but vector has {}",
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(MlError::InvalidParams(format!("non-finite value at index {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.layout == other.layout && self.values.len() == other.values.len()
    }

    /// Copy of `self` with new values; layout is kept.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            layout: self.layout.clone(),
        }
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &ModelParams) -> Result<Vec<f64>, MlError> {
        if !self.same_layout(other) {
            return Err(MlError::LayoutMismatch("cannot subtract params".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect())
    }

    /// Elementwise `self + delta`.
    pub fn add(&self, delta: &[f64]) -> Result<ModelParams, MlError> {
        if delta.len() != self.values.len() {
            return Err(MlError::LayoutMismatch("delta length differs".into()));
        }
        Ok(self.with_values(self.values.iter().zip(delta).map(|(a, b)| a + b).collect()))
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_must_cover_values() {
        let layout = vec![TensorSpec::new("w", vec![2, 3]), TensorSpec::new("b", vec![2])];
        assert!(ModelParams::new(vec![0.0; 8], layout.clone()).is_ok());
        assert!(ModelParams::new(vec![0.0; 7], layout).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let layout = vec![TensorSpec::new("w", vec![2])];
        assert!(ModelParams::new(vec![1.0, f64::NAN], layout.clone()).is_err());
        assert!(ModelParams::new(vec![1.0, f64::INFINITY], layout).is_err());
    }
}

//! Minimal feedforward networks with manual reverse-mode gradients.
//!
//! Parameters live in a single flat `f64` vector ([`ParamVector`]) with a
//! layout table, so optimizers and the PGD solver can treat a whole network
//! as one Euclidean point. Hidden layers use tanh; the output layer is
//! linear. [`DiagGaussian`] heads split a network output into a mean and a
//! clamped log-variance half.

mod adam;
mod gaussian;
mod mlp;
mod pvec;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use gaussian::{reparam_sample, DiagGaussian, LOG_VAR_MAX, LOG_VAR_MIN};
pub use mlp::{Activation, Mlp, MlpCache};
pub use pvec::{load_pvec, save_pvec};

use crate::{CoreError, Result};

/// Shape of one dense layer: `out_dim x in_dim` weights plus `out_dim` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}

/// Flat parameter vector with an immutable per-layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayerShape>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<LayerShape>) -> Result<Self> {
        let expected: usize = layout.iter().map(LayerShape::param_count).sum();
        if values.len() != expected {
            return Err(CoreError::Shape {
                expected,
                got: values.len(),
                context: "ParamVector::new",
            });
        }
        Ok(Self { values, layout })
    }

    pub fn zeros_like(other: &ParamVector) -> Self {
        Self {
            values: vec![0.0; other.values.len()],
            layout: other.layout.clone(),
        }
    }

    pub fn zeros(layout: Vec<LayerShape>) -> Self {
        let n: usize = layout.iter().map(LayerShape::param_count).sum();
        Self {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    /// Byte offset of layer `i`'s parameter block in the flat vector.
    pub fn layer_offset(&self, i: usize) -> usize {
        self.layout[..i].iter().map(LayerShape::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

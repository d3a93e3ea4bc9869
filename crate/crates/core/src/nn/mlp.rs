use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LayerShape, ParamVector};
use crate::{CoreError, Result};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// No nonlinearity anywhere; useful for tests against linear algebra.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Feedforward multilayer perceptron over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Mlp {
    params: ParamVector,
    activation: Activation,
    input_dim: usize,
    output_dim: usize,
}

/// Per-layer activations saved by [`Mlp::forward_cached`], consumed by
/// [`Mlp::backward_cached`]. `acts[0]` is the input, `acts[last]` the output.
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache has at least the input")
    }
}

impl Mlp {
    /// Builds an MLP with the given layer dims (`dims[0]` = input dim,
    /// `dims.last()` = output dim), weights uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn new(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(CoreError::Argument(format!(
                "mlp needs at least two nonzero dims, got {dims:?}"
            )));
        }
        let layout: Vec<LayerShape> = dims
            .windows(2)
            .map(|w| LayerShape {
                in_dim: w[0],
                out_dim: w[1],
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(layout.iter().map(LayerShape::param_count).sum());
        for shape in &layout {
            let bound = 1.0 / (shape.in_dim as f64).sqrt();
            for _ in 0..shape.out_dim * shape.in_dim {
                values.push(rng.gen_range(-bound..=bound));
            }
            values.extend(std::iter::repeat(0.0).take(shape.out_dim));
        }
        Ok(Self {
            params: ParamVector::new(values, layout)?,
            activation,
            input_dim: dims[0],
            output_dim: *dims.last().unwrap(),
        })
    }

    pub fn from_params(params: ParamVector, activation: Activation) -> Result<Self> {
        let layout = params.layout();
        if layout.is_empty() {
            return Err(CoreError::Argument("empty layout".into()));
        }
        for w in layout.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(CoreError::Argument(format!(
                    "layer dims do not chain: {} -> {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        let input_dim = layout[0].in_dim;
        let output_dim = layout.last().unwrap().out_dim;
        Ok(Self {
            params,
            activation,
            input_dim,
            output_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.layout() != self.params.layout() {
            return Err(CoreError::Argument("layout mismatch in set_params".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.acts.pop_unchecked())
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<MlpCache> {
        if input.len() != self.input_dim {
            return Err(CoreError::Shape {
                expected: self.input_dim,
                got: input.len(),
                context: "Mlp::forward input",
            });
        }
        let n_layers = self.params.layout().len();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(input.to_vec());
        let values = self.params.values();
        let mut offset = 0;
        for (li, shape) in self.params.layout().iter().enumerate() {
            let last = li == n_layers - 1;
            let w = &values[offset..offset + shape.out_dim * shape.in_dim];
            let b = &values[offset + shape.out_dim * shape.in_dim..offset + shape.param_count()];
            let x = acts.last().unwrap();
            let mut y = Vec::with_capacity(shape.out_dim);
            for o in 0..shape.out_dim {
                let row = &w[o * shape.in_dim..(o + 1) * shape.in_dim];
                let mut z = b[o];
                for (wi, xi) in row.iter().zip(x.iter()) {
                    z += wi * xi;
                }
                y.push(if last { z } else { self.activation.apply(z) });
            }
            acts.push(y);
            offset += shape.param_count();
        }
        Ok(MlpCache { acts })
    }

    /// Vector-Jacobian product: gradient of `output . output_grad` with
    /// respect to the parameters and the input.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(ParamVector, Vec<f64>)> {
        let cache = self.forward_cached(input)?;
        self.backward_cached(&cache, output_grad)
    }

    pub fn backward_cached(
        &self,
        cache: &MlpCache,
        output_grad: &[f64],
    ) -> Result<(ParamVector, Vec<f64>)> {
        if output_grad.len() != self.output_dim {
            return Err(CoreError::Shape {
                expected: self.output_dim,
                got: output_grad.len(),
                context: "Mlp::backward output_grad",
            });
        }
        let layout = self.params.layout().to_vec();
        let n_layers = layout.len();
        let mut grad = ParamVector::zeros_like(&self.params);
        let values = self.params.values();
        // delta = dL/dz for the current layer (z = pre-activation).
        let mut delta = output_grad.to_vec();
        for li in (0..n_layers).rev() {
            let shape = layout[li];
            let offset = self.params.layer_offset(li);
            let last = li == n_layers - 1;
            let y = &cache.acts[li + 1];
            if !last {
                for (d, yo) in delta.iter_mut().zip(y.iter()) {
                    *d *= self.activation.deriv_from_output(*yo);
                }
            }
            let x = &cache.acts[li];
            {
                let gvals = grad.values_mut();
                for o in 0..shape.out_dim {
                    let wrow = offset + o * shape.in_dim;
                    for i in 0..shape.in_dim {
                        gvals[wrow + i] += delta[o] * x[i];
                    }
                    gvals[offset + shape.out_dim * shape.in_dim + o] += delta[o];
                }
            }
            // propagate to previous layer: dL/dx = W^T delta
            let w = &values[offset..offset + shape.out_dim * shape.in_dim];
            let mut prev = vec![0.0; shape.in_dim];
            for o in 0..shape.out_dim {
                let row = &w[o * shape.in_dim..(o + 1) * shape.in_dim];
                for (p, wi) in prev.iter_mut().zip(row.iter()) {
                    *p += wi * delta[o];
                }
            }
            delta = prev;
        }
        Ok((grad, delta))
    }
}

trait PopUnchecked<T> {
    fn pop_unchecked(self) -> T;
}

impl PopUnchecked<Vec<f64>> for Vec<Vec<f64>> {
    fn pop_unchecked(mut self) -> Vec<f64> {
        self.pop().expect("non-empty")
    }
}

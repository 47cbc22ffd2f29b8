use rand::Rng;

use super::{LinearGrad, LinearLayer};
use crate::error::{shape_err, Result};

/// Elementwise nonlinearity applied after every layer except the last.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    /// `x` for `x >= 0`, `slope * x` otherwise.
    LeakyRelu(f64),
    Identity,
    Tanh,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu(0.01)
    }
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
    pub activation: Activation,
}

/// Per-layer inputs and hidden pre-activations from one forward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<LinearGrad>,
}

impl Mlp {
    pub fn new(layers: Vec<LinearLayer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(shape_err!("mlp needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(shape_err!(
                    "mlp layers incompatible: {} outputs feed {} inputs",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                ));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Random network with widths `sizes[0] -> ... -> sizes[last]`.
    /// With `zero_last`, the final layer starts at zero so the initial
    /// output is identically zero.
    pub fn random<R: Rng>(
        sizes: &[usize],
        activation: Activation,
        zero_last: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(shape_err!("mlp needs at least input and output widths"));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                if zero_last && k == n - 1 {
                    LinearLayer::zeros(sizes[k], sizes[k + 1])
                } else {
                    LinearLayer::random(sizes[k], sizes[k + 1], rng)
                }
            })
            .collect();
        Self::new(layers, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.0)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTrace)> {
        if x.len() != self.input_dim() {
            return Err(shape_err!(
                "mlp expects input of width {}, got {}",
                self.input_dim(),
                x.len()
            ));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut cur = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.output_dim()];
            layer.forward_into(&cur, &mut z);
            inputs.push(std::mem::take(&mut cur));
            if k < last {
                cur = z.iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(z);
            } else {
                cur = z;
            }
        }
        Ok((cur, MlpTrace { inputs, pre }))
    }

    /// Accumulates parameter gradients and returns dL/dx.
    pub fn backward(&self, trace: &MlpTrace, grad_out: &[f64], grad: &mut MlpGrad) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            if k < self.layers.len() - 1 {
                for (gi, &z) in g.iter_mut().zip(&trace.pre[k]) {
                    *gi *= self.activation.derivative(z);
                }
            }
            g = self.layers[k].backward(&trace.inputs[k], &g, &mut grad.layers[k]);
        }
        g
    }

    pub fn zero_grad(&self) -> MlpGrad {
        MlpGrad {
            layers: self.layers.iter().map(LinearLayer::zero_grad).collect(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}

impl MlpGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.slices()).collect()
    }

    pub fn add(&mut self, other: &MlpGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add(b);
        }
    }
}

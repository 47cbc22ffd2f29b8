use rand::Rng;

use super::Tensor;
use crate::error::{shape_err, Result};

/// Affine map `y = W x + b` with `W` stored out×in.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

/// Gradient accumulator matching a [`LinearLayer`]'s layout.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn new(weight: Tensor, bias: Vec<f64>) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(shape_err!("linear weight must be rank 2"));
        }
        if weight.shape()[0] != bias.len() {
            return Err(shape_err!(
                "linear weight has {} rows but bias has {} entries",
                weight.shape()[0],
                bias.len()
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: vec![0.0; output],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn random<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor::from_vec(&[output, input], data).expect("sized"),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(shape_err!(
                "linear layer expects input of width {}, got {}",
                self.input_dim(),
                x.len()
            ));
        }
        let mut out = vec![0.0; self.output_dim()];
        self.forward_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked forward pass into a caller-provided buffer.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        let cols = self.input_dim();
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weight.data().chunks_exact(cols).zip(&self.bias))
        {
            *o = b + super::dot(row, x);
        }
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grad: &mut LinearGrad) -> Vec<f64> {
        let cols = self.input_dim();
        let mut gx = vec![0.0; cols];
        for (r, &go) in grad_out.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            grad.bias[r] += go;
            let row = self.weight.row(r);
            let grow = &mut grad.weight[r * cols..(r + 1) * cols];
            for c in 0..cols {
                grow[c] += go * x[c];
                gx[c] += go * row[c];
            }
        }
        gx
    }

    pub fn zero_grad(&self) -> LinearGrad {
        LinearGrad {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weight.data_mut(), &mut self.bias]
    }
}

impl LinearGrad {
    pub fn slices(&self) -> [&[f64]; 2] {
        [&self.weight, &self.bias]
    }

    pub fn add(&mut self, other: &LinearGrad) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

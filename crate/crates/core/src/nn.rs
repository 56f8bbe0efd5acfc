//! Layers shared by the autoencoder, the mappings and the latent classifiers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Module, Tensor, Var};
use crate::error::Result;

/// Whether a module's tensors enter a graph as trainable leaves or constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bind {
    Trainable,
    Frozen,
}

pub(crate) fn bind_tensor(g: &mut Graph, t: &Tensor, mode: Bind) -> Var {
    match mode {
        Bind::Trainable => g.param(t),
        Bind::Frozen => g.constant(t.clone()),
    }
}

/// `y = x·W + b` with `W: in×out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// Uniform(−1/√in, 1/√in) for weights and bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[inputs, outputs], bound, rng),
            bias: Tensor::uniform(&[outputs], bound, rng),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, g: &mut Graph, mode: Bind) -> BoundLinear {
        BoundLinear {
            weight: bind_tensor(g, &self.weight, mode),
            bias: bind_tensor(g, &self.bias, mode),
        }
    }
}

impl Module for Linear {
    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let xw = g.matmul(x, self.weight)?;
        g.add(xw, self.bias)
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.weight, self.bias]
    }
}

/// Single-layer LSTM cell with fused gate weights in `i, f, g, o` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    w_input: Var,
    w_hidden: Var,
    bias: Var,
    hidden: usize,
}

impl LstmCell {
    pub fn init<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_input: Tensor::uniform(&[inputs, 4 * hidden], bound, rng),
            w_hidden: Tensor::uniform(&[hidden, 4 * hidden], bound, rng),
            bias: Tensor::uniform(&[4 * hidden], bound, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_input.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.shape()[0]
    }

    pub fn bind(&self, g: &mut Graph, mode: Bind) -> BoundLstm {
        BoundLstm {
            w_input: bind_tensor(g, &self.w_input, mode),
            w_hidden: bind_tensor(g, &self.w_hidden, mode),
            bias: bind_tensor(g, &self.bias, mode),
            hidden: self.hidden(),
        }
    }
}

impl Module for LstmCell {
    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.w_input, &self.w_hidden, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}

impl BoundLstm {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.w_input, self.w_hidden, self.bias]
    }

    /// One time step; returns the new `(h, c)`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let n = self.hidden;
        let xi = g.matmul(x, self.w_input)?;
        let hh = g.matmul(h, self.w_hidden)?;
        let pre = g.add(xi, hh)?;
        let gates = g.add(pre, self.bias)?;
        let i = g.slice_cols(gates, 0, n)?;
        let f = g.slice_cols(gates, n, 2 * n)?;
        let cand = g.slice_cols(gates, 2 * n, 3 * n)?;
        let o = g.slice_cols(gates, 3 * n, 4 * n)?;
        let i = g.activation(i, Activation::Sigmoid);
        let f = g.activation(f, Activation::Sigmoid);
        let cand = g.activation(cand, Activation::Tanh);
        let o = g.activation(o, Activation::Sigmoid);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;
        let squashed = g.tanh(c_new);
        let h_new = g.mul(o, squashed)?;
        Ok((h_new, c_new))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradient, numerical_gradient};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_applies_bias_per_row() {
        let lin = Linear {
            weight: Tensor::eye(2),
            bias: Tensor::vector(vec![1.0, -1.0]),
        };
        let mut g = Graph::new();
        let b = lin.bind(&mut g, Bind::Frozen);
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let y = b.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn lstm_step_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = LstmCell::init(3, 2, &mut rng);
        let x = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let h0 = Tensor::uniform(&[2, 2], 1.0, &mut rng);
        let c0 = Tensor::uniform(&[2, 2], 1.0, &mut rng);
        let run = |cell: &LstmCell, mode: Bind| {
            let mut g = Graph::new();
            let b = cell.bind(&mut g, mode);
            let (xv, hv, cv) = (g.constant(x.clone()), g.constant(h0.clone()), g.constant(c0.clone()));
            let (h1, c1) = b.step(&mut g, xv, hv, cv).unwrap();
            let (h2, _) = b.step(&mut g, xv, h1, c1).unwrap();
            let loss = g.sum(h2);
            (g, b, loss)
        };
        let (g, b, loss) = run(&cell, Bind::Trainable);
        let grads = g.backward(loss).unwrap();
        for (k, var) in b.vars().into_iter().enumerate() {
            let numeric = numerical_gradient(cell.parameters()[k], 1e-5, |t| {
                let mut probe = cell.clone();
                *probe.parameters_mut()[k] = t.clone();
                let (g, _, l) = run(&probe, Bind::Frozen);
                g.value(l).item()
            });
            check_gradient(&grads.wrt(var), &numeric, 1e-6).unwrap();
        }
    }
}

//! Student / teacher MLP and feature extraction.
//!
//! The same network serves as student and (EMA-averaged) teacher. Features
//! for the rewarder and generator are the penultimate-layer activations.

use rand::Rng;

use crate::error::{Error, Result};
use crate::optim::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct StudentNet {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub params: ParamSet,
}

impl StudentNet {
    pub fn new<R: Rng>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config("student needs at least one hidden layer".into()));
        }
        let mut params = ParamSet::new();
        let mut prev = input_dim;
        for (i, width) in hidden.iter().enumerate() {
            let std = (1.0 / prev as f64).sqrt();
            params.push(format!("fc{}.w", i + 1), Tensor::randn(vec![prev, *width], std, rng));
            params.push(format!("fc{}.b", i + 1), Tensor::zeros(vec![*width]));
            prev = *width;
        }
        let std = (1.0 / prev as f64).sqrt();
        params.push("head.w", Tensor::randn(vec![prev, output_dim], std, rng));
        params.push("head.b", Tensor::zeros(vec![output_dim]));
        Ok(StudentNet { input_dim, hidden: hidden.to_vec(), output_dim, params })
    }

    /// Width of the extracted feature (last hidden layer).
    pub fn feature_dim(&self) -> usize {
        *self.hidden.last().expect("at least one hidden layer")
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn expected_param_count(input_dim: usize, hidden: &[usize], output_dim: usize) -> usize {
        let mut total = 0;
        let mut prev = input_dim;
        for width in hidden {
            total += prev * width + width;
            prev = *width;
        }
        total + prev * output_dim + output_dim
    }

    /// Record the forward pass; returns (output, penultimate feature, param
    /// handles).
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        x: Var,
        frozen: bool,
    ) -> Result<(Var, Var, Vec<Var>)> {
        let width = *tape.shape_of(x).last().unwrap_or(&0);
        if width != self.input_dim {
            return Err(Error::Shape(format!(
                "student expects input width {}, got {width}",
                self.input_dim
            )));
        }
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|(_, t)| if frozen { tape.input(t) } else { tape.param(t) })
            .collect();
        let mut h = x;
        let mut vi = 0;
        for _ in 0..self.hidden.len() {
            let z = tape.matmul(h, vars[vi])?;
            let z = tape.add_bias(z, vars[vi + 1])?;
            h = tape.relu(z);
            vi += 2;
        }
        let feature = h;
        let out = tape.matmul(feature, vars[vi])?;
        let out = tape.add_bias(out, vars[vi + 1])?;
        Ok((out, feature, vars))
    }

    /// Gradient-free forward: `(outputs, features)`, both `[B, ..]`.
    pub fn forward_pure(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let (out, feat, _) = self.forward_on(&mut tape, xv, true)?;
        let outputs = Tensor::from_vec(tape.shape_of(out).to_vec(), tape.value(out).to_vec())?;
        let features = Tensor::from_vec(tape.shape_of(feat).to_vec(), tape.value(feat).to_vec())?;
        Ok((outputs, features))
    }

    /// Penultimate-layer activations for a batch, gradient-free.
    pub fn feature_extract(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_pure(x)?.1)
    }
}

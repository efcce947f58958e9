use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Tensor;

pub const DEFAULT_HIDDEN: usize = 21;

/// Gate order used throughout: candidate cell state, forget, input, output.
pub const GATES: [char; 4] = ['c', 'f', 'g', 'o'];
pub const CANDIDATE: usize = 0;
pub const FORGET: usize = 1;
pub const INPUT: usize = 2;
pub const OUTPUT: usize = 3;

/// Affine map from the linear head to °C, fixed from training targets so
/// the head works on a unit scale. Identity by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputScale {
    pub mean: f64,
    pub std: f64,
}

impl Default for OutputScale {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub input_size: usize,
    pub hidden_size: usize,
    /// Input weights per gate, `hidden x input`.
    pub w_x: [Tensor; 4],
    /// Recurrent weights per gate, `hidden x hidden`.
    pub w_h: [Tensor; 4],
    /// Bias per gate, length `hidden`.
    pub b: [Tensor; 4],
    /// Output head, `1 x hidden`.
    pub w_y: Tensor,
    pub b_y: Tensor,
    pub output: OutputScale,
}

impl ModelParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let mat = |r, c| Tensor::zeros(&[r, c]);
        Self {
            input_size,
            hidden_size,
            w_x: std::array::from_fn(|_| mat(hidden_size, input_size)),
            w_h: std::array::from_fn(|_| mat(hidden_size, hidden_size)),
            b: std::array::from_fn(|_| Tensor::zeros(&[hidden_size])),
            w_y: mat(1, hidden_size),
            b_y: Tensor::zeros(&[1]),
            output: OutputScale::default(),
        }
    }

    /// Weights uniform in `±1/sqrt(hidden)`, biases zero except the forget
    /// gate at +1.
    pub fn init(input_size: usize, hidden_size: usize, seed: u64) -> Result<Self> {
        if input_size == 0 || hidden_size == 0 {
            return Err(Error::InvalidInput(format!(
                "model sizes must be positive (input {input_size}, hidden {hidden_size})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let mut p = Self::zeros(input_size, hidden_size);
        let mut fill = |t: &mut Tensor| {
            for v in t.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        };
        for g in 0..4 {
            fill(&mut p.w_x[g]);
            fill(&mut p.w_h[g]);
        }
        fill(&mut p.w_y);
        p.b[FORGET] = Tensor::filled(&[hidden_size], 1.0);
        Ok(p)
    }

    pub fn names() -> Vec<String> {
        let mut names = Vec::with_capacity(14);
        for g in GATES {
            names.push(format!("w_x{g}"));
            names.push(format!("w_h{g}"));
            names.push(format!("b_{g}"));
        }
        names.push("w_y".into());
        names.push("b_y".into());
        names
    }

    /// Trainable tensors in [`ModelParams::names`] order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(14);
        for g in 0..4 {
            out.push(&self.w_x[g]);
            out.push(&self.w_h[g]);
            out.push(&self.b[g]);
        }
        out.push(&self.w_y);
        out.push(&self.b_y);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(14);
        for ((wx, wh), b) in self.w_x.iter_mut().zip(self.w_h.iter_mut()).zip(self.b.iter_mut()) {
            out.push(wx);
            out.push(wh);
            out.push(b);
        }
        out.push(&mut self.w_y);
        out.push(&mut self.b_y);
        out
    }

    pub fn n_weights(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Raises a shape error unless every tensor matches the declared sizes.
    pub fn validate(&self) -> Result<()> {
        let (h, i) = (self.hidden_size, self.input_size);
        let names = Self::names();
        let expected: Vec<Vec<usize>> = (0..4)
            .flat_map(|_| [vec![h, i], vec![h, h], vec![h]])
            .chain([vec![1, h], vec![1]])
            .collect();
        for ((name, t), shape) in names.iter().zip(self.tensors()).zip(expected) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("{name} has shape {:?}, expected {shape:?}", t.shape())));
            }
        }
        if !(self.output.std > 0.0 && self.output.mean.is_finite()) {
            return Err(Error::InvalidInput("output scale must have positive std".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

//! LSTM unrolling over per-depth sequences.
//!
//! One parameter set serves every depth, so a day's inputs for all depths
//! form a `n_depths x input` batch and each step advances every depth at
//! once. The four gate matrices are stacked into one `4h x input` and one
//! `4h x h` block per step.

use super::params::{ModelParams, CANDIDATE, FORGET, INPUT, OUTPUT};
use crate::error::{Error, Result};
use crate::grad::{self, concat_cols, concat_rows, sigmoid, Tape, Tensor, Var};

struct Fused {
    wx: Vec<f64>,
    wh: Vec<f64>,
    b: Vec<f64>,
}

fn fuse(p: &ModelParams) -> Fused {
    let cat = |ts: &[Tensor]| ts.iter().flat_map(|t| t.data().iter().copied()).collect::<Vec<_>>();
    Fused {
        wx: cat(&p.w_x),
        wh: cat(&p.w_h),
        b: cat(&p.b),
    }
}

/// Advances a batch of `rows` states by one step in place.
fn step_batch(p: &ModelParams, fused: &Fused, x: &[f64], h: &mut [f64], c: &mut [f64], rows: usize) {
    let (n_in, n_h) = (p.input_size, p.hidden_size);
    let width = 4 * n_h;
    let mut pre = vec![0.0; rows * width];
    for r in 0..rows {
        pre[r * width..(r + 1) * width].copy_from_slice(&fused.b);
    }
    // x [rows x in] * wx^T, wx stored [4h x in]
    grad::gemm(rows, n_in, width, x, (n_in, 1), &fused.wx, (1, n_in), &mut pre);
    grad::gemm(rows, n_h, width, h, (n_h, 1), &fused.wh, (1, n_h), &mut pre);
    for r in 0..rows {
        let z = &pre[r * width..(r + 1) * width];
        for j in 0..n_h {
            let cand = z[CANDIDATE * n_h + j].tanh();
            let f = sigmoid(z[FORGET * n_h + j]);
            let g = sigmoid(z[INPUT * n_h + j]);
            let o = sigmoid(z[OUTPUT * n_h + j]);
            let cell = f * c[r * n_h + j] + g * cand;
            c[r * n_h + j] = cell;
            h[r * n_h + j] = o * cell.tanh();
        }
    }
}

fn head(p: &ModelParams, h: &[f64]) -> f64 {
    let raw: f64 = p.w_y.data().iter().zip(h).map(|(w, h)| w * h).sum::<f64>() + p.b_y.data()[0];
    p.output.mean + p.output.std * raw
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Shape(format!("{what} has length {got}, expected {expected}")));
    }
    Ok(())
}

/// One cell update: returns `(h_t, c_t)`.
pub fn lstm_cell_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    check_len("input", x.len(), params.input_size)?;
    check_len("hidden state", h_prev.len(), params.hidden_size)?;
    check_len("cell state", c_prev.len(), params.hidden_size)?;
    let mut h = h_prev.to_vec();
    let mut c = c_prev.to_vec();
    step_batch(params, &fuse(params), x, &mut h, &mut c, 1);
    Ok((h, c))
}

/// Predictions for one `[T x input]` sequence starting from zero state.
pub fn forward_sequence(features: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    params.validate()?;
    let n_in = params.input_size;
    if features.is_empty() {
        return Err(Error::InvalidInput("cannot run the model on an empty sequence".into()));
    }
    if !features.len().is_multiple_of(n_in) {
        return Err(Error::Shape(format!(
            "sequence of {} values is not a multiple of input size {n_in}",
            features.len()
        )));
    }
    forward_batch(features, 1, params)
}

/// Runs every depth through days `[0, T)` of a day-major `[T][depth][input]`
/// block; returns `[depth][T]` predictions.
pub fn forward_batch(features: &[f64], n_depths: usize, params: &ModelParams) -> Result<Vec<f64>> {
    params.validate()?;
    let (n_in, n_h) = (params.input_size, params.hidden_size);
    let block = n_depths * n_in;
    if block == 0 || !features.len().is_multiple_of(block) || features.is_empty() {
        return Err(Error::Shape(format!(
            "feature block of {} values does not split into days of {n_depths} x {n_in}",
            features.len()
        )));
    }
    let n_days = features.len() / block;
    let fused = fuse(params);
    let mut h = vec![0.0; n_depths * n_h];
    let mut c = vec![0.0; n_depths * n_h];
    let mut out = vec![0.0; n_depths * n_days];
    for t in 0..n_days {
        step_batch(params, &fused, &features[t * block..(t + 1) * block], &mut h, &mut c, n_depths);
        for d in 0..n_depths {
            out[d * n_days + t] = head(params, &h[d * n_h..(d + 1) * n_h]);
        }
    }
    Ok(out)
}

/// First day of each window and the days whose prediction it supplies.
///
/// Windows start every `stride` days. A day is taken from the earliest window
/// covering it, which gives it the longest spin-up.
pub fn window_plan(n_days: usize, chunk: usize, stride: usize) -> Result<Vec<(usize, std::ops::Range<usize>)>> {
    if chunk == 0 || stride == 0 || stride > chunk {
        return Err(Error::Config(format!(
            "chunk length {chunk} and stride {stride} must satisfy 0 < stride <= chunk"
        )));
    }
    let mut plan = Vec::new();
    let mut owned_to = 0;
    let mut start = 0;
    while owned_to < n_days {
        let end = (start + chunk).min(n_days);
        if end > owned_to {
            plan.push((start, owned_to..end));
            owned_to = end;
        }
        start += stride;
    }
    Ok(plan)
}

/// Predictions `[depth][day]` over a whole feature matrix, assembled from
/// overlapping windows as in [`window_plan`].
pub fn predict(features: &[f64], n_depths: usize, n_days: usize, params: &ModelParams, chunk: usize, stride: usize) -> Result<Vec<f64>> {
    let block = n_depths * params.input_size;
    if features.len() != block * n_days {
        return Err(Error::Shape(format!(
            "features hold {} values, expected {} days x {block}",
            features.len(),
            n_days
        )));
    }
    let mut out = vec![0.0; n_depths * n_days];
    for (start, owned) in window_plan(n_days, chunk, stride)? {
        let run = owned.end - start;
        let part = forward_batch(&features[start * block..owned.end * block], n_depths, params)?;
        for d in 0..n_depths {
            for t in owned.clone() {
                out[d * n_days + t] = part[d * run + (t - start)];
            }
        }
    }
    Ok(out)
}

/// Parameters recorded on a tape, in [`ModelParams::names`] order.
pub struct TapeParams<'t> {
    pub leaves: Vec<Var<'t>>,
    wx: Var<'t>,
    wh: Var<'t>,
    b: Var<'t>,
    w_y: Var<'t>,
    b_y: Var<'t>,
    hidden: usize,
    input: usize,
    mean: f64,
    std: f64,
}

impl<'t> TapeParams<'t> {
    pub fn new(tape: &'t Tape, params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let leaves: Vec<Var<'t>> = params.tensors().into_iter().map(|t| tape.param(t.clone())).collect();
        let pick = |k: usize| -> Vec<Var<'t>> { (0..4).map(|g| leaves[3 * g + k]).collect() };
        let h = params.hidden_size;
        let biases: Vec<Var<'t>> = pick(2).into_iter().map(|b| b.reshape(vec![1, h])).collect();
        Ok(Self {
            wx: concat_rows(&pick(0)),
            wh: concat_rows(&pick(1)),
            b: concat_cols(&biases),
            w_y: leaves[12],
            b_y: leaves[13],
            leaves,
            hidden: h,
            input: params.input_size,
            mean: params.output.mean,
            std: params.output.std,
        })
    }

    /// Gradients of the leaves in [`ModelParams::names`] order.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.leaves.iter().map(|&v| tape.grad_or_zeros(v)).collect()
    }
}

/// Recorded forward pass over a day-major `[T][depth][input]` block;
/// returns the `[depth x T]` prediction.
pub fn forward_tape<'t>(tape: &'t Tape, p: &TapeParams<'t>, features: &[f64], n_depths: usize) -> Result<Var<'t>> {
    let block = n_depths * p.input;
    if block == 0 || features.is_empty() || !features.len().is_multiple_of(block) {
        return Err(Error::Shape(format!(
            "feature block of {} values does not split into days of {n_depths} x {}",
            features.len(),
            p.input
        )));
    }
    let n_days = features.len() / block;
    let h_size = p.hidden;
    let mut state: Option<(Var<'t>, Var<'t>)> = None;
    let mut outputs = Vec::with_capacity(n_days);
    for t in 0..n_days {
        let x = tape.constant(Tensor::matrix(n_depths, p.input, features[t * block..(t + 1) * block].to_vec()));
        let mut pre = x.matmul_t(p.wx);
        if let Some((h, _)) = state {
            pre = pre + h.matmul_t(p.wh);
        }
        let pre = pre.add_row(p.b);
        let gate = |k: usize| pre.slice_cols(k * h_size, (k + 1) * h_size);
        let cand = gate(CANDIDATE).tanh();
        let g = gate(INPUT).sigmoid();
        let o = gate(OUTPUT).sigmoid();
        let c = match state {
            Some((_, c_prev)) => gate(FORGET).sigmoid() * c_prev + g * cand,
            None => g * cand,
        };
        let h = o * c.tanh();
        outputs.push(h.matmul_t(p.w_y).add_row(p.b_y));
        state = Some((h, c));
    }
    let raw = concat_cols(&outputs);
    Ok(if p.std == 1.0 && p.mean == 0.0 { raw } else { raw * p.std + p.mean })
}

//! LSTM cell with a forget gate and no peephole connections.
//!
//! Gate pre-activations are stacked as four `H`-sized blocks in the order
//! input, forget, output, candidate.

use super::tensor::{gemv_acc, gemv_t_acc, outer_acc, Tensor};
use crate::error::{Error, Result};

/// Owned cell parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    /// `4H × D_in`
    pub w_ih: Tensor,
    /// `4H × H`
    pub w_hh: Tensor,
    /// `4H`
    pub bias: Tensor,
}

impl LstmCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCellParams {
            w_ih: Tensor::zeros(&[4 * hidden, input]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn view(&self) -> Result<LstmView<'_>> {
        LstmView::new(
            self.w_ih.data(),
            self.w_hh.data(),
            self.bias.data(),
            self.bias.len() / 4,
        )
    }
}

/// Borrowed cell parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmView<'a> {
    pub w_ih: &'a [f64],
    pub w_hh: &'a [f64],
    pub bias: &'a [f64],
    pub input: usize,
    pub hidden: usize,
}

impl<'a> LstmView<'a> {
    pub fn new(w_ih: &'a [f64], w_hh: &'a [f64], bias: &'a [f64], hidden: usize) -> Result<Self> {
        let g = 4 * hidden;
        if hidden == 0 || bias.len() != g {
            return Err(Error::shape("lstm bias", &[g], &[bias.len()]));
        }
        if w_hh.len() != g * hidden {
            return Err(Error::shape("lstm recurrent weight", &[g, hidden], &[w_hh.len()]));
        }
        if !w_ih.len().is_multiple_of(g) {
            return Err(Error::shape("lstm input weight", &[g, 0], &[w_ih.len()]));
        }
        Ok(LstmView {
            w_ih,
            w_hh,
            bias,
            input: w_ih.len() / g,
            hidden,
        })
    }
}

/// Everything the backward pass needs from one step.
#[derive(Debug, Clone)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gates `[i | f | o | g]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn lstm_step(p: LstmView<'_>, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmStep> {
    let hd = p.hidden;
    if x.len() != p.input {
        return Err(Error::shape("lstm input", &[p.input], &[x.len()]));
    }
    if h_prev.len() != hd || c_prev.len() != hd {
        return Err(Error::shape("lstm state", &[hd], &[h_prev.len().max(c_prev.len())]));
    }
    let mut z = p.bias.to_vec();
    gemv_acc(p.w_ih, 4 * hd, p.input, x, &mut z);
    gemv_acc(p.w_hh, 4 * hd, hd, h_prev, &mut z);
    for (k, zk) in z.iter_mut().enumerate() {
        *zk = if k < 3 * hd { sigmoid(*zk) } else { zk.tanh() };
    }
    let mut c = vec![0.0; hd];
    let mut tanh_c = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    for j in 0..hd {
        let (i, f, o, g) = (z[j], z[hd + j], z[2 * hd + j], z[3 * hd + j]);
        c[j] = f * c_prev[j] + i * g;
        tanh_c[j] = c[j].tanh();
        h[j] = o * tanh_c[j];
    }
    Ok(LstmStep {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates: z,
        c,
        tanh_c,
        h,
    })
}

/// Gradient accumulators for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub w_ih: Vec<f64>,
    pub w_hh: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LstmGrads {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmGrads {
            w_ih: vec![0.0; 4 * hidden * input],
            w_hh: vec![0.0; 4 * hidden * hidden],
            bias: vec![0.0; 4 * hidden],
        }
    }
}

/// Backpropagates `dh`/`dc` (gradients w.r.t. this step's outputs) through
/// one step. Returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_step_backward(
    p: LstmView<'_>,
    step: &LstmStep,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmGrads,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = p.hidden;
    let gt = &step.gates;
    let mut dz = vec![0.0; 4 * hd];
    let mut dc_prev = vec![0.0; hd];
    for j in 0..hd {
        let (i, f, o, g) = (gt[j], gt[hd + j], gt[2 * hd + j], gt[3 * hd + j]);
        let tc = step.tanh_c[j];
        let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
        dz[j] = dct * g * i * (1.0 - i);
        dz[hd + j] = dct * step.c_prev[j] * f * (1.0 - f);
        dz[2 * hd + j] = dh[j] * tc * o * (1.0 - o);
        dz[3 * hd + j] = dct * i * (1.0 - g * g);
        dc_prev[j] = dct * f;
    }
    outer_acc(&mut grads.w_ih, &dz, &step.x);
    outer_acc(&mut grads.w_hh, &dz, &step.h_prev);
    for (b, d) in grads.bias.iter_mut().zip(&dz) {
        *b += d;
    }
    let mut dx = vec![0.0; p.input];
    gemv_t_acc(p.w_ih, 4 * hd, p.input, &dz, &mut dx);
    let mut dh_prev = vec![0.0; hd];
    gemv_t_acc(p.w_hh, 4 * hd, hd, &dz, &mut dh_prev);
    (dx, dh_prev, dc_prev)
}

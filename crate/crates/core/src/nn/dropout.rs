use super::rng::RngState;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout. In train mode each element is zeroed with probability
/// `p_discard` and survivors are scaled by `1 / (1 - p_discard)`.
///
/// Returns the output and the per-element scale mask (`None` when the op is
/// the identity), which is also the backward multiplier.
pub fn dropout_apply(x: &Tensor, p_discard: f64, mode: Mode, rng: &mut RngState) -> Result<(Tensor, Option<Vec<f64>>)> {
    let mut out = x.clone();
    let mask = dropout_in_place(out.data_mut(), p_discard, mode, rng)?;
    Ok((out, mask))
}

pub(crate) fn check_probability(p_discard: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p_discard) {
        return Err(Error::Config(format!(
            "dropout probability must be in [0, 1), got {p_discard}"
        )));
    }
    Ok(())
}

pub(crate) fn dropout_in_place(
    x: &mut [f64],
    p_discard: f64,
    mode: Mode,
    rng: &mut RngState,
) -> Result<Option<Vec<f64>>> {
    check_probability(p_discard)?;
    if mode == Mode::Eval || p_discard == 0.0 {
        return Ok(None);
    }
    let keep = 1.0 / (1.0 - p_discard);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.bernoulli(p_discard) { 0.0 } else { keep })
        .collect();
    for (v, m) in x.iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok(Some(mask))
}

/// Backward of [`dropout_apply`]: multiplies the upstream gradient by the mask.
pub fn dropout_backward(upstream: &mut [f64], mask: Option<&[f64]>) {
    if let Some(mask) = mask {
        for (g, m) in upstream.iter_mut().zip(mask) {
            *g *= m;
        }
    }
}

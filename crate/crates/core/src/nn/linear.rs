use super::tensor::{gemv_acc, gemv_t_acc, outer_acc, Tensor};
use crate::error::{Error, Result};

/// `W x + b`.
pub fn linear_forward(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (k, d) = check_shapes(w, b, x.len())?;
    let mut out = b.data().to_vec();
    gemv_acc(w.data(), k, d, x.data(), &mut out);
    Tensor::from_vec(&[k], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub w: Tensor,
    pub b: Tensor,
    pub x: Tensor,
}

pub fn linear_backward(w: &Tensor, b: &Tensor, x: &Tensor, upstream: &Tensor) -> Result<LinearGrads> {
    let (k, d) = check_shapes(w, b, x.len())?;
    if upstream.len() != k {
        return Err(Error::shape("linear_backward", &[k], upstream.shape()));
    }
    let mut gw = Tensor::zeros(&[k, d]);
    outer_acc(gw.data_mut(), upstream.data(), x.data());
    let mut gx = vec![0.0; d];
    gemv_t_acc(w.data(), k, d, upstream.data(), &mut gx);
    Ok(LinearGrads {
        w: gw,
        b: upstream.clone(),
        x: Tensor::from_vec(&[d], gx)?,
    })
}

fn check_shapes(w: &Tensor, b: &Tensor, x_len: usize) -> Result<(usize, usize)> {
    if w.shape().len() != 2 {
        return Err(Error::shape("linear weight", &[0, 0], w.shape()));
    }
    let (k, d) = (w.shape()[0], w.shape()[1]);
    if b.len() != k {
        return Err(Error::shape("linear bias", &[k], b.shape()));
    }
    if x_len != d {
        return Err(Error::shape("linear input", &[d], &[x_len]));
    }
    Ok((k, d))
}

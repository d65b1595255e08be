use super::params::ParameterSet;
use crate::error::{Error, Result};

/// Plain SGD step: `value -= lr * grad` for every parameter, then zeroes
/// the gradients. A non-finite gradient, or an update that would make a
/// value non-finite, aborts before anything is changed.
pub fn sgd_update(params: &mut ParameterSet, lr: f64) -> Result<()> {
    if let Some((name, _)) = params.iter().find(|(_, p)| !p.grad.is_finite()) {
        return Err(Error::Diverged(format!("non-finite gradient in `{name}`")));
    }
    let overflows = |(_, p): &(&str, &super::params::Param)| {
        p.value
            .data()
            .iter()
            .zip(p.grad.data())
            .any(|(v, g)| !(v - lr * g).is_finite())
    };
    if let Some((name, _)) = params.iter().find(overflows) {
        return Err(Error::Diverged(format!("update overflows `{name}`")));
    }
    for (_, p) in params.iter_mut() {
        for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *v -= lr * g;
        }
        p.grad.fill(0.0);
    }
    Ok(())
}

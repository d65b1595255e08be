use super::rng::RngState;
use super::tensor::Tensor;

/// Entries drawn from `U[lo, hi]`.
pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut RngState) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.uniform(lo, hi));
    t
}

/// Entries drawn from `N(0, 1)`.
pub fn standard_normal(shape: &[usize], rng: &mut RngState) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.normal());
    t
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut RngState) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform(shape, -bound, bound, rng)
}

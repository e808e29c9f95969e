use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::Real;

/// A dense row-major array with an optional gradient of the same shape.
#[derive(Debug, Clone)]
pub struct Tensor<T> {
    pub data: ArrayD<T>,
    pub grad: Option<ArrayD<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { data: ArrayD::zeros(IxDyn(shape)), grad: None }
    }

    pub fn from_array(data: ArrayD<T>) -> Self {
        Self { data, grad: None }
    }

    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(-bound, bound);
        let data = ArrayD::from_shape_simple_fn(IxDyn(shape), || T::lit(dist.sample(rng)));
        Self { data, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Gradient buffer, allocated as zeros on first access.
    pub fn grad_mut(&mut self) -> &mut ArrayD<T> {
        let shape = self.data.raw_dim();
        self.grad.get_or_insert_with(|| ArrayD::zeros(shape))
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(T::zero());
        }
    }

    pub fn grad_sq_norm(&self) -> f64 {
        self.grad
            .as_ref()
            .map(|g| g.iter().map(|v| v.as_f64() * v.as_f64()).sum())
            .unwrap_or(0.0)
    }

    /// Converts element type, dropping the gradient.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { data: self.data.mapv(|v| U::lit(v.as_f64())), grad: None }
    }
}

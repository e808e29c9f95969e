use ndarray::{Array2, Axis, Ix2};
use rand::Rng;

use super::{join, kaiming_bound, Module, Real, Tensor, LEAKY_SLOPE};
use crate::error::{Error, Result};

/// Fully connected layer `y = x·Wᵀ + b` on `(batch, in)` inputs. Weight layout `(out, in)`.
#[derive(Debug, Clone)]
pub struct Affine<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct AffineCache<T> {
    x: Array2<T>,
}

impl<T: Real> Affine<T> {
    pub fn new<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::uniform(&[fan_out, fan_in], kaiming_bound(fan_in, LEAKY_SLOPE), rng),
            bias: Tensor::uniform(&[fan_out], 1.0 / (fan_in as f64).sqrt(), rng),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Tensor::zeros(&[fan_out, fan_in]), bias: Tensor::zeros(&[fan_out]) }
    }

    fn w(&self) -> ndarray::ArrayView2<'_, T> {
        self.weight.data.view().into_dimensionality::<Ix2>().expect("2-D weight")
    }

    pub fn forward(&self, x: &Array2<T>) -> Result<(Array2<T>, AffineCache<T>)> {
        if x.ncols() != self.weight.shape()[1] {
            return Err(Error::shape(format!(
                "affine expects {} inputs, got {}",
                self.weight.shape()[1],
                x.ncols()
            )));
        }
        let b = self.bias.data.view().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
        let y = x.dot(&self.w().t()) + &b;
        Ok((y, AffineCache { x: x.clone() }))
    }

    pub fn backward(&mut self, cache: &AffineCache<T>, dy: &Array2<T>) -> Array2<T> {
        let dw = dy.t().dot(&cache.x);
        let db = dy.sum_axis(Axis(0));
        let dx = dy.dot(&self.w());
        *self.weight.grad_mut() += &dw.into_dyn();
        *self.bias.grad_mut() += &db.into_dyn();
        dx
    }
}

impl<T: Real> Module<T> for Affine<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

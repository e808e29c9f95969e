//! Minimal dense-tensor compute core.
//!
//! Every layer exposes an explicit forward pass that returns its output
//! together with a cache, and a backward pass that consumes the cache,
//! accumulates parameter gradients and returns the input gradient. There
//! is no autograd graph: composite models wire layers together by hand.
//!
//! Layers are generic over [`Real`] so that training can run in `f32`
//! while gradient checks use `f64`.

mod activation;
pub mod checkpoint;
mod conv;
mod gradcheck;
mod linear;
mod norm;
mod pool;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use activation::{Dropout, DropoutCache, LeakyRelu, LeakyReluCache};
pub use conv::{Conv2d, Conv2dCache, ConvTranspose2d, ConvTranspose2dCache};
pub use gradcheck::{grad_check, max_relative_error, numeric_gradient, numeric_gradient_at};
pub use linear::{Affine, AffineCache};
pub use norm::{BatchNorm2d, BatchNormCache};
pub use pool::{adaptive_avg_pool2d, adaptive_avg_pool2d_backward};
pub use tensor::Tensor;

/// Default slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Default dropout probability.
pub const DROPOUT_P: f64 = 0.2;

/// Floating point element type usable by every layer.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal fits in float type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Train or inference behaviour for batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Anything holding named tensors: trainable parameters and persistent buffers.
pub trait Module<T: Real> {
    /// Visits trainable parameters in a fixed order.
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    /// Visits non-trainable state (running statistics). Default: none.
    fn visit_buffers(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor<T>)) {}

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, t| t.zero_grad());
    }

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Kaiming-uniform bound for a leaky rectifier with the given slope.
pub(crate) fn kaiming_bound(fan_in: usize, slope: f64) -> f64 {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    gain * (3.0 / fan_in as f64).sqrt()
}

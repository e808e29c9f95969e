use ndarray::{Array1, Array4};

use super::{join, Mode, Module, Real, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation over `(B, H, W)` with a learned affine.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Array4<T>,
    inv_std: Array1<T>,
    mode: Mode,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Tensor::zeros(&[channels]);
        gamma.data.fill(T::one());
        let mut running_var = Tensor::zeros(&[channels]);
        running_var.data.fill(T::one());
        Self {
            gamma,
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Result<(Array4<T>, BatchNormCache<T>)> {
        let (b, c, h, w) = x.dim();
        if c != self.gamma.len() {
            return Err(Error::shape(format!("batch norm expects {} channels, got {c}", self.gamma.len())));
        }
        let plane = h * w;
        let n = b * plane;
        let eps = T::lit(self.eps);
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let (mean, var) = match mode {
            Mode::Train => {
                if b < 2 {
                    return Err(Error::invalid("batch norm in train mode needs a batch of at least 2"));
                }
                let mut mean = Array1::<T>::zeros(c);
                let mut var = Array1::<T>::zeros(c);
                for (i, p) in xs.chunks_exact(plane).enumerate() {
                    mean[i % c] += p.iter().copied().sum::<T>();
                }
                mean /= T::lit(n as f64);
                for (i, p) in xs.chunks_exact(plane).enumerate() {
                    let m = mean[i % c];
                    var[i % c] += p.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                }
                var /= T::lit(n as f64);
                let mom = T::lit(self.momentum);
                let unbias = T::lit(n as f64 / (n as f64 - 1.0).max(1.0));
                let rm = &mut self.running_mean.data;
                let rv = &mut self.running_var.data;
                for ci in 0..c {
                    rm[[ci]] = (T::one() - mom) * rm[[ci]] + mom * mean[ci];
                    rv[[ci]] = (T::one() - mom) * rv[[ci]] + mom * var[ci] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.data.iter().copied().collect::<Array1<T>>(),
                self.running_var.data.iter().copied().collect::<Array1<T>>(),
            ),
        };
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let mut xhat = vec![T::zero(); xs.len()];
        let mut y = vec![T::zero(); xs.len()];
        for (i, ((src, xh), yp)) in
            xs.chunks_exact(plane).zip(xhat.chunks_exact_mut(plane)).zip(y.chunks_exact_mut(plane)).enumerate()
        {
            let ci = i % c;
            let (m, s) = (mean[ci], inv_std[ci]);
            let (g, bt) = (self.gamma.data[[ci]], self.beta.data[[ci]]);
            for ((&v, xv), yv) in src.iter().zip(xh.iter_mut()).zip(yp.iter_mut()) {
                *xv = (v - m) * s;
                *yv = g * *xv + bt;
            }
        }
        let shape = (b, c, h, w);
        let xhat = Array4::from_shape_vec(shape, xhat).expect("shape");
        let y = Array4::from_shape_vec(shape, y).expect("shape");
        Ok((y, BatchNormCache { xhat, inv_std, mode }))
    }

    pub fn backward(&mut self, cache: &BatchNormCache<T>, dy: &Array4<T>) -> Array4<T> {
        let (b, c, h, w) = dy.dim();
        let plane = h * w;
        let n = T::lit((b * plane) as f64);
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().expect("standard layout");
        let xs = cache.xhat.as_slice().expect("standard layout");
        let mut dgamma = Array1::<T>::zeros(c);
        let mut dbeta = Array1::<T>::zeros(c);
        for (i, (dp, xp)) in dys.chunks_exact(plane).zip(xs.chunks_exact(plane)).enumerate() {
            let ci = i % c;
            let (mut sg, mut sb) = (T::zero(), T::zero());
            for (&d, &x) in dp.iter().zip(xp.iter()) {
                sg += d * x;
                sb += d;
            }
            dgamma[ci] += sg;
            dbeta[ci] += sb;
        }
        let mut dx = vec![T::zero(); dys.len()];
        for (i, ((dp, xp), out)) in
            dys.chunks_exact(plane).zip(xs.chunks_exact(plane)).zip(dx.chunks_exact_mut(plane)).enumerate()
        {
            let ci = i % c;
            let g = self.gamma.data[[ci]];
            let s = cache.inv_std[ci];
            match cache.mode {
                Mode::Eval => {
                    for (o, &d) in out.iter_mut().zip(dp) {
                        *o = d * g * s;
                    }
                }
                Mode::Train => {
                    let (sb, sg) = (dbeta[ci], dgamma[ci]);
                    let k = g * s / n;
                    for ((o, &d), &x) in out.iter_mut().zip(dp).zip(xp) {
                        *o = k * (n * d - sb - x * sg);
                    }
                }
            }
        }
        *self.gamma.grad_mut() += &dgamma.into_dyn();
        *self.beta.grad_mut() += &dbeta.into_dyn();
        Array4::from_shape_vec((b, c, h, w), dx).expect("shape")
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

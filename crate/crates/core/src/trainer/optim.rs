//! Adam with coupled L2 decay, and global-norm gradient clipping.

use ndarray::{ArrayD, Zip};

use crate::nn::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `weight_decay · w` before the moment updates.
    pub weight_decay: f64,
    step: u64,
    moments: Vec<(ArrayD<T>, ArrayD<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, moments: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Starts a step; call [`Adam::update`] once per tensor in a fixed order.
    pub fn begin_step(&mut self) -> AdamStep<'_, T> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        AdamStep { opt: self, index: 0, bc1, bc2 }
    }
}

pub struct AdamStep<'a, T> {
    opt: &'a mut Adam<T>,
    index: usize,
    bc1: f64,
    bc2: f64,
}

impl<T: Real> AdamStep<'_, T> {
    pub fn update(&mut self, p: &mut Tensor<T>) {
        let o = &mut *self.opt;
        if self.index == o.moments.len() {
            o.moments.push((ArrayD::zeros(p.data.raw_dim()), ArrayD::zeros(p.data.raw_dim())));
        }
        let (m, v) = &mut o.moments[self.index];
        self.index += 1;
        let Some(g) = p.grad.as_ref() else { return };
        let (b1, b2, wd) = (T::lit(o.beta1), T::lit(o.beta2), T::lit(o.weight_decay));
        let (one, eps) = (T::one(), T::lit(o.eps));
        let step = T::lit(o.lr / self.bc1);
        let bc2 = T::lit(self.bc2);
        Zip::from(&mut p.data).and(g).and(m).and(v).for_each(|w, &g, m, v| {
            let g = g + wd * *w;
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *w -= step * *m / ((*v / bc2).sqrt() + eps);
        });
    }
}

/// Visits a set of tensors, e.g. `|f| model.visit_network_params(f)`.
pub type Visitor<'a, T> = dyn FnMut(&mut dyn FnMut(&str, &mut Tensor<T>)) + 'a;

pub fn grad_norm<T: Real>(visit: &mut Visitor<'_, T>) -> f64 {
    let mut sq = 0.0;
    visit(&mut |_, t| sq += t.grad_sq_norm());
    sq.sqrt()
}

/// Scales gradients so their joint L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(visit: &mut Visitor<'_, T>, max_norm: f64) -> f64 {
    let norm = grad_norm(visit);
    if norm > max_norm {
        let s = T::lit(max_norm / (norm + 1e-6));
        visit(&mut |_, t| {
            if let Some(g) = t.grad.as_mut() {
                g.mapv_inplace(|v| v * s);
            }
        });
    }
    norm
}

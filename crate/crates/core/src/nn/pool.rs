use ndarray::{Array2, Array4, Axis};

use super::Real;

/// Global average pool to `1×1`, returned flattened as `(batch, channels)`.
pub fn adaptive_avg_pool2d<T: Real>(x: &Array4<T>) -> Array2<T> {
    let (_, _, h, w) = x.dim();
    x.sum_axis(Axis(3)).sum_axis(Axis(2)) / T::lit((h * w) as f64)
}

pub fn adaptive_avg_pool2d_backward<T: Real>(dy: &Array2<T>, h: usize, w: usize) -> Array4<T> {
    let (b, c) = dy.dim();
    let scale = T::lit(1.0 / (h * w) as f64);
    let mut dx = Array4::zeros((b, c, h, w));
    for ((bi, ci), &g) in dy.indexed_iter() {
        dx.index_axis_mut(Axis(0), bi).index_axis_mut(Axis(0), ci).fill(g * scale);
    }
    dx
}

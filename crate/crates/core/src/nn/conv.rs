use ndarray::{Array2, Array4, ArrayView2, Axis, Ix2};
use rand::Rng;

use super::{join, kaiming_bound, Module, Real, Tensor, LEAKY_SLOPE};
use crate::error::{Error, Result};

/// Geometry of a strided, zero-padded sliding window over one image.
#[derive(Debug, Clone, Copy)]
struct Window {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    fn new(channels: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(format!("{h}x{w} input too small for kernel {k} with padding {pad}")));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Ok(Self { channels, h, w, k, stride, pad, oh, ow })
    }

    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    /// Input row/col for output position `o` and kernel offset `kk`.
    #[inline]
    fn src(&self, o: usize, kk: usize, extent: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < extent).then_some(i as usize)
    }

    /// Output columns `lo..hi` whose input column for offset `kj` is in range.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = (0..self.ow).find(|&p| self.src(p, kj, self.w).is_some()).unwrap_or(self.ow);
        let hi = (lo..self.ow).take_while(|&p| self.src(p, kj, self.w).is_some()).last().map_or(lo, |p| p + 1);
        (lo, hi)
    }
}

/// Unfolds `x` (batch-major, contiguous) into a `(C·k·k) × (B·oh·ow)` matrix.
fn im2col<T: Real>(x: &[T], batch: usize, g: &Window) -> Array2<T> {
    let cols = batch * g.oh * g.ow;
    let mut out = vec![T::zero(); g.rows() * cols];
    let plane = g.h * g.w;
    for c in 0..g.channels {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                let (lo, hi) = g.valid_cols(kj);
                if lo >= hi {
                    continue;
                }
                let first = (lo * g.stride + kj).saturating_sub(g.pad);
                for b in 0..batch {
                    let src = &x[(b * g.channels + c) * plane..][..plane];
                    for o in 0..g.oh {
                        let Some(ih) = g.src(o, ki, g.h) else { continue };
                        let line = &src[ih * g.w + first..(ih + 1) * g.w];
                        let d = &mut dst[(b * g.oh + o) * g.ow..][lo..hi];
                        for (slot, v) in d.iter_mut().zip(line.iter().step_by(g.stride)) {
                            *slot = *v;
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((g.rows(), cols), out).expect("im2col shape")
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps.
fn col2im<T: Real>(cols: ArrayView2<T>, batch: usize, g: &Window) -> Array4<T> {
    let cols = cols.as_standard_layout();
    let cols = cols.as_slice().expect("standard layout");
    let ncol = batch * g.oh * g.ow;
    let plane = g.h * g.w;
    let mut out = vec![T::zero(); batch * g.channels * plane];
    for c in 0..g.channels {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * ncol..(row + 1) * ncol];
                let (lo, hi) = g.valid_cols(kj);
                if lo >= hi {
                    continue;
                }
                let first = (lo * g.stride + kj).saturating_sub(g.pad);
                for b in 0..batch {
                    let dst = &mut out[(b * g.channels + c) * plane..][..plane];
                    for o in 0..g.oh {
                        let Some(ih) = g.src(o, ki, g.h) else { continue };
                        let s = &src[(b * g.oh + o) * g.ow..][lo..hi];
                        let line = &mut dst[ih * g.w + first..(ih + 1) * g.w];
                        for (slot, v) in line.iter_mut().step_by(g.stride).zip(s) {
                            *slot += *v;
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((batch, g.channels, g.h, g.w), out).expect("col2im shape")
}

/// `(B, C, H, W)` to `(C, B·H·W)`.
fn channel_major<T: Real>(x: &Array4<T>) -> Array2<T> {
    let (b, c, h, w) = x.dim();
    let mut out = Array2::zeros((c, b * h * w));
    for bi in 0..b {
        for ci in 0..c {
            let src = x.index_axis(Axis(0), bi);
            let src = src.index_axis(Axis(0), ci);
            let mut dst = out.row_mut(ci);
            let mut dst = dst.slice_mut(ndarray::s![bi * h * w..(bi + 1) * h * w]);
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d = *s;
            }
        }
    }
    out
}

/// `(C, B·H·W)` to `(B, C, H, W)`, adding a per-channel bias.
fn batch_major<T: Real>(m: &Array2<T>, bias: &[T], b: usize, h: usize, w: usize) -> Array4<T> {
    let c = m.nrows();
    let mut out = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            let src = m.slice(ndarray::s![ci, bi * h * w..(bi + 1) * h * w]);
            let mut dst = out.index_axis_mut(Axis(0), bi);
            let mut dst = dst.index_axis_mut(Axis(0), ci);
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d = *s + bias[ci];
            }
        }
    }
    out
}

fn contiguous<T: Real>(x: &Array4<T>) -> Vec<T> {
    x.as_standard_layout().iter().copied().collect()
}

/// 2-D cross-correlation with square kernels. Weight layout `(out, in, k, k)`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct Conv2dCache<T> {
    cols: Array2<T>,
    batch: usize,
    window: Window,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng>(cin: usize, cout: usize, k: usize, stride: usize, padding: usize, rng: &mut R) -> Self {
        let fan_in = cin * k * k;
        Self {
            weight: Tensor::uniform(&[cout, cin, k, k], kaiming_bound(fan_in, LEAKY_SLOPE), rng),
            bias: Tensor::uniform(&[cout], 1.0 / (fan_in as f64).sqrt(), rng),
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn weight2(&self) -> ArrayView2<'_, T> {
        let s = self.weight.shape();
        self.weight
            .data
            .view()
            .into_shape_with_order((s[0], s[1] * s[2] * s[3]))
            .expect("weight is contiguous")
            .into_dimensionality::<Ix2>()
            .expect("2-D view")
    }

    pub fn forward(&self, x: &Array4<T>) -> Result<(Array4<T>, Conv2dCache<T>)> {
        let (b, c, h, w) = x.dim();
        if c != self.weight.shape()[1] {
            return Err(Error::shape(format!("conv2d expects {} input channels, got {c}", self.weight.shape()[1])));
        }
        let window = Window::new(c, h, w, self.kernel(), self.stride, self.padding)?;
        let cols = im2col(&contiguous(x), b, &window);
        let out = self.weight2().dot(&cols);
        let bias = self.bias.data.as_slice().expect("bias contiguous");
        let y = batch_major(&out, bias, b, window.oh, window.ow);
        Ok((y, Conv2dCache { cols, batch: b, window }))
    }

    pub fn backward(&mut self, cache: &Conv2dCache<T>, dy: &Array4<T>) -> Array4<T> {
        let dy2 = channel_major(dy);
        let dw = dy2.dot(&cache.cols.t());
        let db = dy2.sum_axis(Axis(1));
        let dcols = self.weight2().t().dot(&dy2);
        let shape = self.weight.shape().to_vec();
        *self.weight.grad_mut() += &dw.into_shape_with_order(shape).expect("dw shape").into_dyn();
        *self.bias.grad_mut() += &db.into_dyn();
        col2im(dcols.view(), cache.batch, &cache.window)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Transposed convolution, the adjoint of [`Conv2d`] with the same geometry.
/// Weight layout `(in, out, k, k)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2dCache<T> {
    x2: Array2<T>,
    batch: usize,
    in_hw: (usize, usize),
    window: Window,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new<R: Rng>(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = cout * k * k;
        Self {
            weight: Tensor::uniform(&[cin, cout, k, k], kaiming_bound(fan_in, LEAKY_SLOPE), rng),
            bias: Tensor::uniform(&[cout], 1.0 / (fan_in as f64).sqrt(), rng),
            stride,
            padding,
            output_padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    fn weight2(&self) -> ArrayView2<'_, T> {
        let s = self.weight.shape();
        self.weight
            .data
            .view()
            .into_shape_with_order((s[0], s[1] * s[2] * s[3]))
            .expect("weight is contiguous")
            .into_dimensionality::<Ix2>()
            .expect("2-D view")
    }

    pub fn output_size(&self, h: usize) -> usize {
        let k = self.weight.shape()[2];
        (h - 1) * self.stride + k + self.output_padding - 2 * self.padding
    }

    pub fn forward(&self, x: &Array4<T>) -> Result<(Array4<T>, ConvTranspose2dCache<T>)> {
        let (b, c, h, w) = x.dim();
        let s = self.weight.shape();
        if c != s[0] {
            return Err(Error::shape(format!("conv_transpose2d expects {} input channels, got {c}", s[0])));
        }
        if self.output_padding >= self.stride.max(1) {
            return Err(Error::shape("output padding must be smaller than stride"));
        }
        let (oh, ow) = (self.output_size(h), self.output_size(w));
        let window = Window::new(s[1], oh, ow, s[2], self.stride, self.padding)?;
        debug_assert_eq!((window.oh, window.ow), (h, w));
        let x2 = channel_major(x);
        let cols = self.weight2().t().dot(&x2);
        let mut y = col2im(cols.view(), b, &window);
        let bias = self.bias.data.as_slice().expect("bias contiguous");
        for mut img in y.outer_iter_mut() {
            for (mut plane, &bv) in img.outer_iter_mut().zip(bias) {
                plane.mapv_inplace(|v| v + bv);
            }
        }
        Ok((y, ConvTranspose2dCache { x2, batch: b, in_hw: (h, w), window }))
    }

    pub fn backward(&mut self, cache: &ConvTranspose2dCache<T>, dy: &Array4<T>) -> Array4<T> {
        let dcols = im2col(&contiguous(dy), cache.batch, &cache.window);
        let dx2 = self.weight2().dot(&dcols);
        let dw = cache.x2.dot(&dcols.t());
        let db = dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
        let shape = self.weight.shape().to_vec();
        *self.weight.grad_mut() += &dw.into_shape_with_order(shape).expect("dw shape").into_dyn();
        *self.bias.grad_mut() += &db.into_dyn();
        let zero = vec![T::zero(); dx2.nrows()];
        let (h, w) = cache.in_hw;
        batch_major(&dx2, &zero, cache.batch, h, w)
    }
}

impl<T: Real> Module<T> for ConvTranspose2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::max_relative_error;
    use crate::nn::numeric_gradient;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn4(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f64> {
        Array::from_shape_simple_fn(shape, || rng.sample::<f64, _>(StandardNormal))
    }

    fn dot4(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn unit_1x1_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f64>::new(1, 1, 1, 1, 0, &mut rng);
        conv.weight.data.fill(1.0);
        conv.bias.data.fill(0.0);
        let x = randn4((2, 1, 5, 5), &mut rng);
        let (y, _) = conv.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::<f64>::new(2, 3, 3, 1, 1, &mut rng);
        let (y, _) = conv.forward(&Array4::zeros((1, 2, 4, 4))).unwrap();
        for (c, plane) in y.index_axis(Axis(0), 0).outer_iter().enumerate() {
            assert!(plane.iter().all(|&v| v == conv.bias.data[[c]]));
        }
    }

    #[test]
    fn channel_mismatch_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::<f64>::new(2, 3, 3, 1, 1, &mut rng);
        assert!(conv.forward(&Array4::zeros((1, 1, 4, 4))).is_err());
    }

    #[test]
    fn encoder_geometry_40_to_2() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Array4::<f32>::zeros((1, 1, 40, 40));
        for (cin, cout, expect) in [(1, 2, 20), (2, 2, 10), (2, 2, 5), (2, 2, 2)] {
            let conv = Conv2d::<f32>::new(cin, cout, 4, 2, 1, &mut rng);
            x = conv.forward(&x).unwrap().0;
            assert_eq!(x.dim().2, expect);
        }
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = Conv2d::<f64>::new(2, 3, 3, 2, 1, &mut rng);
        let mut convt = ConvTranspose2d::<f64>::new(3, 2, 3, 2, 1, 1, &mut rng);
        convt.weight.data.assign(&conv.weight.data);
        convt.bias.data.fill(0.0);
        let mut conv0 = conv.clone();
        conv0.bias.data.fill(0.0);
        let x = randn4((2, 2, 6, 6), &mut rng);
        let (ax, _) = conv0.forward(&x).unwrap();
        let y = randn4(ax.dim(), &mut rng);
        let (aty, _) = convt.forward(&y).unwrap();
        assert_eq!(aty.dim(), x.dim());
        assert!((dot4(&ax, &y) - dot4(&x, &aty)).abs() < 1e-9);
        // conv2d backward-input equals transpose forward
        let (_, cache) = conv0.forward(&x).unwrap();
        let dx = conv0.backward(&cache, &y);
        let diff = (&dx - &aty).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(diff < 1e-12);
    }

    #[test]
    fn stride2_transpose_unit_kernel_upsamples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut convt = ConvTranspose2d::<f64>::new(1, 1, 1, 2, 0, 0, &mut rng);
        convt.weight.data.fill(1.0);
        convt.bias.data.fill(0.0);
        let x = Array4::from_shape_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = convt.forward(&x).unwrap();
        assert_eq!(y.dim(), (1, 1, 3, 3));
        let expect = [1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 4.0];
        assert_eq!(y.iter().copied().collect::<Vec<_>>(), expect);
    }

    fn conv_loss(conv: &Conv2d<f64>, x: &Array4<f64>, r: &Array4<f64>) -> f64 {
        dot4(&conv.forward(x).unwrap().0, r)
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut conv = Conv2d::<f64>::new(1, 2, 3, 1, 1, &mut rng);
        let x = randn4((1, 1, 8, 8), &mut rng);
        let (y, cache) = conv.forward(&x).unwrap();
        let r = randn4(y.dim(), &mut rng);
        let dx = conv.backward(&cache, &r);

        let num_dx = numeric_gradient(
            |v| conv_loss(&conv, &v.view().into_dimensionality().unwrap().to_owned(), &r),
            &x.clone().into_dyn(),
            1e-4,
        );
        assert!(max_relative_error(&dx.into_dyn(), &num_dx) < 1e-3);

        let base = conv.clone();
        let num_dw = numeric_gradient(
            |w| {
                let mut c = base.clone();
                c.weight.data = w.clone();
                conv_loss(&c, &x, &r)
            },
            &base.weight.data,
            1e-4,
        );
        assert!(max_relative_error(conv.weight.grad.as_ref().unwrap(), &num_dw) < 1e-3);
        let num_db = numeric_gradient(
            |b| {
                let mut c = base.clone();
                c.bias.data = b.clone();
                conv_loss(&c, &x, &r)
            },
            &base.bias.data,
            1e-4,
        );
        assert!(max_relative_error(conv.bias.grad.as_ref().unwrap(), &num_db) < 1e-3);
    }

    #[test]
    fn conv_transpose_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut convt = ConvTranspose2d::<f64>::new(2, 3, 4, 2, 1, 1, &mut rng);
        let x = randn4((2, 2, 3, 3), &mut rng);
        let (y, cache) = convt.forward(&x).unwrap();
        assert_eq!(y.dim(), (2, 3, 7, 7));
        let r = randn4(y.dim(), &mut rng);
        let dx = convt.backward(&cache, &r);
        let base = convt.clone();
        let loss = |c: &ConvTranspose2d<f64>, x: &Array4<f64>| dot4(&c.forward(x).unwrap().0, &r);
        let num_dx = numeric_gradient(
            |v| loss(&base, &v.view().into_dimensionality().unwrap().to_owned()),
            &x.clone().into_dyn(),
            1e-4,
        );
        assert!(max_relative_error(&dx.into_dyn(), &num_dx) < 1e-3);
        let num_dw = numeric_gradient(
            |w| {
                let mut c = base.clone();
                c.weight.data = w.clone();
                loss(&c, &x)
            },
            &base.weight.data,
            1e-4,
        );
        assert!(max_relative_error(convt.weight.grad.as_ref().unwrap(), &num_dw) < 1e-3);
    }
}

//! Reconstruction metrics on 2-D images.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const SSIM_RANGE: f64 = 10.0;
const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn same_shape(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("images differ in shape: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

pub fn mse(xhat: ArrayView2<f64>, x: ArrayView2<f64>) -> Result<f64> {
    same_shape(&xhat, &x)?;
    Ok(xhat.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len().max(1) as f64)
}

/// Pearson correlation of two equal-length slices.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::shape(format!("correlation needs two equal-length series, got {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::degenerate("correlation of a zero-variance series"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Pearson r over pixels where `mask` is true.
pub fn spatial_correlation(xhat: ArrayView2<f64>, x: ArrayView2<f64>, mask: ArrayView2<bool>) -> Result<f64> {
    same_shape(&xhat, &x)?;
    if mask.dim() != x.dim() {
        return Err(Error::shape("mask shape differs from image shape"));
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for ((&p, &q), &m) in xhat.iter().zip(x.iter()).zip(mask.iter()) {
        if m {
            a.push(p);
            b.push(q);
        }
    }
    pearson(&a, &b)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WIN / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WIN).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over every fully contained window.
fn filter_valid(x: &Array2<f64>, g: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let (oh, ow) = (h + 1 - g.len(), w + 1 - g.len());
    let rows: Array2<f64> = Array2::from_shape_fn((h, ow), |(r, c)| g.iter().enumerate().map(|(k, &gk)| gk * x[[r, c + k]]).sum());
    Array2::from_shape_fn((oh, ow), |(r, c)| g.iter().enumerate().map(|(k, &gk)| gk * rows[[r + k, c]]).sum())
}

/// Structural similarity with an 11×11 Gaussian window (σ = 1.5), averaged over valid windows.
pub fn ssim(xhat: ArrayView2<f64>, x: ArrayView2<f64>, range: f64) -> Result<f64> {
    same_shape(&xhat, &x)?;
    let (h, w) = x.dim();
    if h < SSIM_WIN || w < SSIM_WIN {
        return Err(Error::shape(format!("SSIM needs images of at least {SSIM_WIN}×{SSIM_WIN}")));
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let g = gaussian_window();
    let a = xhat.to_owned();
    let b = x.to_owned();
    let ma = filter_valid(&a, &g);
    let mb = filter_valid(&b, &g);
    let saa = filter_valid(&(&a * &a), &g) - &ma * &ma;
    let sbb = filter_valid(&(&b * &b), &g) - &mb * &mb;
    let sab = filter_valid(&(&a * &b), &g) - &ma * &mb;
    let map = ((2.0 * &ma * &mb + c1) * (2.0 * &sab + c2)) / ((&ma * &ma + &mb * &mb + c1) * (saa + sbb + c2));
    Ok(map.mean().expect("nonempty"))
}

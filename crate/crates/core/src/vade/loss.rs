//! Loss terms with hand-written gradients.
//!
//! Everything except reconstruction is computed in `f64` on small
//! `(batch, dz)` / `(K, dz)` matrices; each function returns the value and
//! the gradient of that value with respect to its inputs.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Array4, ArrayView1, Axis, Zip};

use super::model::{GmmParams, PriorGrad};
use crate::nn::Real;

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

fn flog(v: f64) -> f64 {
    v.max(LOG_FLOOR).ln()
}

/// Per-sample `min(Σ(x̂−x)², Σ(x̂+x)²)`, averaged over the batch.
///
/// Equal to `min(MSE(x̂, x), MSE(x̂, −x))·D_x` for `D_x` pixels. Returns the
/// gradient with respect to `x̂`.
pub fn recon<T: Real>(xhat: &Array4<T>, x: &Array4<T>) -> (f64, Array4<T>) {
    assert_eq!(xhat.dim(), x.dim(), "reconstruction shape mismatch");
    let b = x.dim().0;
    let mut grad = Array4::zeros(x.raw_dim());
    let mut total = 0.0;
    let scale = T::lit(2.0 / b as f64);
    for ((xh, xi), mut g) in xhat.outer_iter().zip(x.outer_iter()).zip(grad.outer_iter_mut()) {
        let (mut same, mut flip) = (0.0f64, 0.0f64);
        Zip::from(&xh).and(&xi).for_each(|&a, &t| {
            let d = (a - t).as_f64();
            let s = (a + t).as_f64();
            same += d * d;
            flip += s * s;
        });
        let sign = if same <= flip { -T::one() } else { T::one() };
        total += same.min(flip);
        Zip::from(&mut g).and(&xh).and(&xi).for_each(|g, &a, &t| *g = scale * (a + sign * t));
    }
    (total / b as f64, grad)
}

/// `log N(z; μ, diag exp(logvar))`.
pub fn log_gaussian_diag(z: ArrayView1<f64>, mu: ArrayView1<f64>, logvar: ArrayView1<f64>) -> f64 {
    let mut acc = 0.0;
    for ((&zj, &mj), &lv) in z.iter().zip(mu.iter()).zip(logvar.iter()) {
        let d = zj - mj;
        acc += (2.0 * PI).ln() + lv + d * d / lv.exp();
    }
    -0.5 * acc
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.outer_iter_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let t = row.sum();
        row /= t;
    }
}

/// `γ_ik ∝ π_k·N(z_i; μ_k, σ²_k)`, normalized in log space.
pub fn responsibilities(z: &Array2<f64>, prior: &GmmParams) -> Array2<f64> {
    let log_pi = prior.log_pi();
    let mut s = Array2::from_shape_fn((z.nrows(), prior.k()), |(i, k)| {
        log_pi[k] + log_gaussian_diag(z.row(i), prior.mu.row(k), prior.logvar.row(k))
    });
    softmax_rows(&mut s);
    s
}

/// Back-propagates `dγ` through [`responsibilities`], returning `(dz, prior grad)`.
pub fn responsibilities_backward(
    z: &Array2<f64>,
    prior: &GmmParams,
    gamma: &Array2<f64>,
    dgamma: &Array2<f64>,
) -> (Array2<f64>, PriorGrad) {
    let (b, dz) = z.dim();
    let k = prior.k();
    let var = prior.logvar.mapv(f64::exp);
    let mut dzv = Array2::zeros((b, dz));
    let mut pg = PriorGrad::zeros(k, dz);
    for i in 0..b {
        let g = gamma.row(i);
        let dg = dgamma.row(i);
        let mean: f64 = g.iter().zip(dg.iter()).map(|(a, c)| a * c).sum();
        for c in 0..k {
            let ds = g[c] * (dg[c] - mean);
            if ds == 0.0 {
                continue;
            }
            pg.log_pi[c] += ds;
            for j in 0..dz {
                let u = (z[[i, j]] - prior.mu[[c, j]]) / var[[c, j]];
                dzv[[i, j]] -= ds * u;
                pg.mu[[c, j]] += ds * u;
                pg.logvar[[c, j]] += ds * 0.5 * (u * (z[[i, j]] - prior.mu[[c, j]]) - 1.0);
            }
        }
    }
    (dzv, pg)
}

/// Gradients of the KL term.
pub struct KlGrad {
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
    pub gamma: Array2<f64>,
    pub prior: PriorGrad,
}

/// Mixture KL of the VaDE evidence bound, averaged over the batch.
///
/// Per sample: `Σ_k γ_k·½Σ_j[log σ²_kj + (σ²_φj + (μ_φj − μ_kj)²)/σ²_kj] − ½Σ_j(1 + log σ²_φj) − Σ_k γ_k log(π_k/γ_k)`.
pub fn kl(mu: &Array2<f64>, logvar: &Array2<f64>, prior: &GmmParams, gamma: &Array2<f64>) -> (f64, KlGrad) {
    let (b, dz) = mu.dim();
    let k = prior.k();
    let bf = b as f64;
    let log_pi = prior.log_pi();
    let var = prior.logvar.mapv(f64::exp);
    let mut g = KlGrad {
        mu: Array2::zeros((b, dz)),
        logvar: Array2::zeros((b, dz)),
        gamma: Array2::zeros((b, k)),
        prior: PriorGrad::zeros(k, dz),
    };
    let mut total = 0.0;
    for i in 0..b {
        let mut term = 0.0;
        for j in 0..dz {
            term -= 0.5 * (1.0 + logvar[[i, j]]);
            g.logvar[[i, j]] -= 0.5 / bf;
        }
        for c in 0..k {
            let gk = gamma[[i, c]];
            let mut a = 0.0;
            for j in 0..dz {
                let vphi = logvar[[i, j]].exp();
                let d = mu[[i, j]] - prior.mu[[c, j]];
                let q = (vphi + d * d) / var[[c, j]];
                a += 0.5 * (prior.logvar[[c, j]] + q);
                g.mu[[i, j]] += gk * d / var[[c, j]] / bf;
                g.logvar[[i, j]] += 0.5 * gk * vphi / var[[c, j]] / bf;
                g.prior.mu[[c, j]] -= gk * d / var[[c, j]] / bf;
                g.prior.logvar[[c, j]] += 0.5 * gk * (1.0 - q) / bf;
            }
            let lg = flog(gk);
            term += gk * (a - log_pi[c] + lg);
            g.gamma[[i, c]] = (a - log_pi[c] + lg + 1.0) / bf;
            g.prior.log_pi[c] -= gk / bf;
        }
        total += term;
    }
    (total / bf, g)
}

/// `Σ_k π_k ln π_k`, with its gradient with respect to `log π`.
pub fn entropy(prior: &GmmParams) -> (f64, Array1<f64>) {
    let lp = prior.log_pi();
    let v = Zip::from(&prior.pi).and(&lp).fold(0.0, |acc, &p, &l| acc + p * l);
    let g = Zip::from(&prior.pi).and(&lp).map_collect(|&p, &l| p * (l + 1.0));
    (v, g)
}

/// `Σ_k p̄_k ln(p̄_k·K)` with `p̄` the column mean of `γ`. Returns `dγ`.
pub fn batch_usage(gamma: &Array2<f64>) -> (f64, Array2<f64>) {
    let (b, k) = gamma.dim();
    let pbar = gamma.mean_axis(Axis(0)).expect("nonempty batch");
    let kf = k as f64;
    let v = pbar.iter().map(|&p| p * (p.max(LOG_FLOOR) * kf).ln()).sum();
    let d: Array1<f64> = pbar.mapv(|p| ((p.max(LOG_FLOOR) * kf).ln() + 1.0) / b as f64);
    let g = Array2::from_shape_fn((b, k), |(_, c)| d[c]);
    (v, g)
}

/// Gradients of the tightness term.
pub struct TightGrad {
    pub mu: Array2<f64>,
    pub gamma: Array2<f64>,
    pub prior_mu: Array2<f64>,
}

/// Batch mean of `Σ_k γ_k ‖μ_φ − μ_k‖² / d_z`.
pub fn tight(mu: &Array2<f64>, gamma: &Array2<f64>, prior: &GmmParams) -> (f64, TightGrad) {
    let (b, dz) = mu.dim();
    let k = prior.k();
    let s = 1.0 / (b * dz) as f64;
    let mut g = TightGrad { mu: Array2::zeros((b, dz)), gamma: Array2::zeros((b, k)), prior_mu: Array2::zeros((k, dz)) };
    let mut total = 0.0;
    for i in 0..b {
        for c in 0..k {
            let gk = gamma[[i, c]];
            let mut sq = 0.0;
            for j in 0..dz {
                let d = mu[[i, j]] - prior.mu[[c, j]];
                sq += d * d;
                g.mu[[i, j]] += 2.0 * gk * d * s;
                g.prior_mu[[c, j]] -= 2.0 * gk * d * s;
            }
            total += gk * sq;
            g.gamma[[i, c]] = sq * s;
        }
    }
    (total * s, g)
}

/// Mean squared difference between `μ_φ(x)` and `μ_φ(−x)`. Returns both gradients.
pub fn polarity(mu_pos: &Array2<f64>, mu_neg: &Array2<f64>) -> (f64, Array2<f64>, Array2<f64>) {
    let n = mu_pos.len() as f64;
    let d = mu_pos - mu_neg;
    let v = d.iter().map(|x| x * x).sum::<f64>() / n;
    let gp = d.mapv(|x| 2.0 * x / n);
    let gn = gp.mapv(|x| -x);
    (v, gp, gn)
}

/// Result of [`separation`].
pub struct Separation {
    pub value: f64,
    /// Gradient with respect to each flattened map, shape `(K, pixels)`.
    pub grad: Array2<f64>,
    /// Number of pairs skipped because a map had zero variance.
    pub degenerate_pairs: usize,
}

/// Mean over unordered pairs of `|Pearson r|` between maps restricted to `mask`.
///
/// `maps` has one flattened image per row; `mask` selects the pixels used.
pub fn separation(maps: &Array2<f64>, mask: &[bool]) -> Separation {
    let (k, p) = maps.dim();
    assert_eq!(p, mask.len(), "mask length must match map size");
    let idx: Vec<usize> = (0..p).filter(|&i| mask[i]).collect();
    let n = idx.len() as f64;
    let centered: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let m = idx.iter().map(|&i| maps[[c, i]]).sum::<f64>() / n;
            idx.iter().map(|&i| maps[[c, i]] - m).collect()
        })
        .collect();
    let norms: Vec<f64> = centered.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let pairs = k * k.saturating_sub(1) / 2;
    let mut grad = Array2::zeros((k, p));
    if pairs == 0 {
        return Separation { value: 0.0, grad, degenerate_pairs: 0 };
    }
    let w = 1.0 / pairs as f64;
    let mut total = 0.0;
    let mut degenerate = 0;
    for a in 0..k {
        for b in (a + 1)..k {
            let (na, nb) = (norms[a], norms[b]);
            if !(na > 1e-12 && nb > 1e-12) {
                degenerate += 1;
                continue;
            }
            let dot: f64 = centered[a].iter().zip(&centered[b]).map(|(x, y)| x * y).sum();
            let r = dot / (na * nb);
            total += r.abs();
            let sg = if r >= 0.0 { w } else { -w };
            for (t, &i) in idx.iter().enumerate() {
                let (ca, cb) = (centered[a][t], centered[b][t]);
                grad[[a, i]] += sg * (cb / (na * nb) - r * ca / (na * na));
                grad[[b, i]] += sg * (ca / (na * nb) - r * cb / (nb * nb));
            }
        }
    }
    Separation { value: total * w, grad, degenerate_pairs: degenerate }
}

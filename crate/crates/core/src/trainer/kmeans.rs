//! Euclidean k-means and the bisecting variant used to initialise the mixture prior.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vade::GmmParams;

const MAX_ITER: usize = 300;
/// Number of restarts for each k-means call.
pub const KMEANS_RESTARTS: usize = 20;
/// Above this K the prior is initialised by repeated bisection.
pub const FLAT_KMEANS_MAX_K: usize = 4;
pub const PI_FLOOR: f64 = 1e-3;
pub const VAR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: ArrayView1<f64>, c: &Array2<f64>) -> (usize, f64) {
    c.outer_iter().map(|r| sq_dist(x, r)).enumerate().fold((0, f64::INFINITY), |b, (k, d)| if d < b.1 { (k, d) } else { b })
}

fn plus_plus<R: Rng>(x: &ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = x.nrows();
    let mut c = Array2::zeros((k, x.ncols()));
    c.row_mut(0).assign(&x.row(rng.gen_range(0..n)));
    let mut d: Vec<f64> = x.outer_iter().map(|r| sq_dist(r, c.row(0))).collect();
    for j in 1..k {
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            d.iter().position(|&v| {
                u -= v;
                u < 0.0
            })
            .unwrap_or(n - 1)
        } else {
            rng.gen_range(0..n)
        };
        c.row_mut(j).assign(&x.row(pick));
        for (i, r) in x.outer_iter().enumerate() {
            d[i] = d[i].min(sq_dist(r, c.row(j)));
        }
    }
    c
}

fn lloyd<R: Rng>(x: &ArrayView2<f64>, k: usize, rng: &mut R) -> KMeansFit {
    let (n, d) = x.dim();
    let mut c = plus_plus(x, k, rng);
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_ITER {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for (i, r) in x.outer_iter().enumerate() {
            let (l, dd) = nearest(r, &c);
            dists[i] = dd;
            if labels[i] != l {
                labels[i] = l;
                changed = true;
            }
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (r, &l) in x.outer_iter().zip(&labels) {
            let mut s = sums.row_mut(l);
            s += &r;
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Move an empty centroid to the point farthest from its own.
                let far = (0..n).max_by(|&a, &b| dists[a].total_cmp(&dists[b])).expect("n > 0");
                c.row_mut(j).assign(&x.row(far));
                dists[far] = 0.0;
                changed = true;
            } else {
                c.row_mut(j).assign(&(&sums.row(j) / counts[j] as f64));
            }
        }
        if !changed {
            break;
        }
    }
    let mut inertia = 0.0;
    for (i, r) in x.outer_iter().enumerate() {
        let (l, dd) = nearest(r, &c);
        labels[i] = l;
        inertia += dd;
    }
    KMeansFit { centroids: c, labels, inertia }
}

/// Best of `restarts` k-means++ initialised Lloyd runs by inertia.
pub fn kmeans(x: ArrayView2<f64>, k: usize, restarts: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 || x.nrows() < k {
        return Err(Error::invalid(format!("cannot form {k} clusters from {} points", x.nrows())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts.max(1) {
        let fit = lloyd(&x, k, &mut rng);
        if best.as_ref().map_or(true, |b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Splits the cluster with the largest inertia by 2-means until there are `k` clusters.
pub fn bisecting_kmeans(x: ArrayView2<f64>, k: usize, restarts: usize, seed: u64) -> Result<Vec<usize>> {
    let n = x.nrows();
    let mut labels = vec![0usize; n];
    let mut inertia = vec![cluster_inertia(&x, &labels, 0)];
    for next in 1..k {
        let target = (0..next).max_by(|&a, &b| inertia[a].total_cmp(&inertia[b])).expect("nonempty");
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == target).collect();
        if members.len() < 2 {
            return Err(Error::degenerate("no cluster left with two points to split"));
        }
        let sub = x.select(Axis(0), &members);
        let fit = kmeans(sub.view(), 2, restarts, seed.wrapping_add(next as u64))?;
        for (&i, &l) in members.iter().zip(&fit.labels) {
            if l == 1 {
                labels[i] = next;
            }
        }
        inertia[target] = cluster_inertia(&x, &labels, target);
        inertia.push(cluster_inertia(&x, &labels, next));
    }
    Ok(labels)
}

fn cluster_inertia(x: &ArrayView2<f64>, labels: &[usize], k: usize) -> f64 {
    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
    if members.is_empty() {
        return 0.0;
    }
    let sub = x.select(Axis(0), &members);
    let c = sub.mean_axis(Axis(0)).expect("nonempty");
    sub.outer_iter().map(|r| sq_dist(r, c.view())).sum()
}

/// Mixture parameters from a hard partition: floored weights, centroids and
/// floored per-dimension within-cluster variances.
pub fn gmm_from_labels(x: ArrayView2<f64>, labels: &[usize], k: usize) -> Result<GmmParams> {
    let (n, d) = x.dim();
    let mut counts = vec![0usize; k];
    let mut mu = Array2::<f64>::zeros((k, d));
    for (r, &l) in x.outer_iter().zip(labels) {
        let mut m = mu.row_mut(l);
        m += &r;
        counts[l] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::degenerate(format!("cluster {empty} received no points")));
    }
    for (mut m, &c) in mu.outer_iter_mut().zip(&counts) {
        m /= c as f64;
    }
    let mut var = Array2::<f64>::zeros((k, d));
    for (r, &l) in x.outer_iter().zip(labels) {
        let diff = &r - &mu.row(l);
        let mut v = var.row_mut(l);
        v += &(&diff * &diff);
    }
    for (mut v, &c) in var.outer_iter_mut().zip(&counts) {
        v.mapv_inplace(|s| (s / c as f64).max(VAR_FLOOR));
    }
    let raw: Array1<f64> = counts.iter().map(|&c| (c as f64 / n as f64).max(PI_FLOOR)).collect();
    let pi = &raw / raw.sum();
    Ok(GmmParams { pi, mu, logvar: var.mapv(f64::ln) })
}

/// Initial mixture prior from latent means: flat k-means for `K ≤ 4`, bisecting k-means above.
pub fn init_gmm_bisecting(latents: ArrayView2<f64>, k: usize, seed: u64) -> Result<GmmParams> {
    let n = latents.nrows();
    if n < 10 * k {
        return Err(Error::invalid(format!("need at least {} latent codes for K = {k}, got {n}", 10 * k)));
    }
    let mean = latents.mean_axis(Axis(0)).expect("nonempty");
    if latents.outer_iter().all(|r| sq_dist(r, mean.view()) == 0.0) {
        return Err(Error::degenerate("all latent codes are identical"));
    }
    let labels = if k <= FLAT_KMEANS_MAX_K {
        kmeans(latents, k, KMEANS_RESTARTS, seed)?.labels
    } else {
        bisecting_kmeans(latents, k, KMEANS_RESTARTS, seed)?
    };
    gmm_from_labels(latents, &labels, k)
}

//! Internal clustering-validity indices with Euclidean distance.
//!
//! Labels may skip values; only clusters that actually occur are counted.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Dense relabelling to `0..k` in order of first label value, with cluster sizes.
fn compact(points: &ArrayView2<f64>, labels: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(Error::shape(format!("{n} points but {} labels", labels.len())));
    }
    let max = labels.iter().copied().max().unwrap_or(0);
    let mut map = vec![usize::MAX; max + 1];
    for &l in labels {
        map[l] = 0;
    }
    let mut k = 0;
    for m in map.iter_mut().filter(|m| **m == 0) {
        *m = k;
        k += 1;
    }
    if k < 2 {
        return Err(Error::invalid(format!("validity indices need at least 2 clusters, got {k}")));
    }
    if n <= k {
        return Err(Error::invalid(format!("need more points ({n}) than clusters ({k})")));
    }
    let dense: Vec<usize> = labels.iter().map(|&l| map[l]).collect();
    let mut sizes = vec![0; k];
    for &l in &dense {
        sizes[l] += 1;
    }
    Ok((dense, sizes))
}

fn centroids(points: &ArrayView2<f64>, labels: &[usize], sizes: &[usize]) -> Array2<f64> {
    let mut c = Array2::zeros((sizes.len(), points.ncols()));
    for (row, &l) in points.outer_iter().zip(labels) {
        let mut cr = c.row_mut(l);
        cr += &row;
    }
    for (mut r, &s) in c.outer_iter_mut().zip(sizes) {
        r /= s as f64;
    }
    c
}

/// Mean over points of `(b − a)/max(a, b)`; points in singleton clusters score 0.
pub fn silhouette(points: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let (labels, sizes) = compact(&points, labels)?;
    if sizes.iter().all(|&s| s == 1) {
        return Err(Error::invalid("silhouette is undefined when every cluster is a singleton"));
    }
    let k = sizes.len();
    let n = points.nrows();
    // Collected before summing so the result does not depend on the thread count.
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[labels[j]] += dist(points.row(i), points.row(j));
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k).filter(|&c| c != own).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

/// Mean over clusters of `max_j (s_i + s_j)/d(c_i, c_j)` with `s` the mean distance to the centroid.
pub fn davies_bouldin(points: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let (labels, sizes) = compact(&points, labels)?;
    let k = sizes.len();
    let c = centroids(&points, &labels, &sizes);
    let mut s = vec![0.0; k];
    for (row, &l) in points.outer_iter().zip(&labels) {
        s[l] += dist(row, c.row(l));
    }
    for (si, &n) in s.iter_mut().zip(&sizes) {
        *si /= n as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst: f64 = 0.0;
        for j in (0..k).filter(|&j| j != i) {
            let d = dist(c.row(i), c.row(j));
            if d == 0.0 {
                return Err(Error::degenerate(format!("clusters {i} and {j} share a centroid")));
            }
            worst = worst.max((s[i] + s[j]) / d);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Ratio of between- to within-cluster dispersion, each per degree of freedom.
pub fn calinski_harabasz(points: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let (labels, sizes) = compact(&points, labels)?;
    let (n, k) = (points.nrows(), sizes.len());
    let c = centroids(&points, &labels, &sizes);
    let mean: Array1<f64> = points.mean_axis(Axis(0)).expect("nonempty");
    let between: f64 = c.outer_iter().zip(&sizes).map(|(r, &s)| s as f64 * dist(r, mean.view()).powi(2)).sum();
    let within: f64 = points.outer_iter().zip(&labels).map(|(r, &l)| dist(r, c.row(l)).powi(2)).sum();
    if within == 0.0 {
        return Err(Error::degenerate("zero within-cluster dispersion"));
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

/// Smallest between-cluster point distance over the largest cluster diameter.
///
/// Returns `f64::INFINITY` when every cluster has zero diameter.
pub fn dunn(points: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let (labels, _) = compact(&points, labels)?;
    let n = points.nrows();
    let (sep, diam) = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut sep, mut diam) = (f64::INFINITY, 0.0f64);
            for j in i + 1..n {
                let d = dist(points.row(i), points.row(j));
                if labels[i] == labels[j] {
                    diam = diam.max(d);
                } else {
                    sep = sep.min(d);
                }
            }
            (sep, diam)
        })
        .reduce(|| (f64::INFINITY, 0.0), |a, b| (a.0.min(b.0), a.1.max(b.1)));
    Ok(if diam == 0.0 { f64::INFINITY } else { sep / diam })
}

/// The four indices together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityIndices {
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
    pub dunn: f64,
}

pub fn validity_indices(points: ArrayView2<f64>, labels: &[usize]) -> Result<ValidityIndices> {
    Ok(ValidityIndices {
        silhouette: silhouette(points, labels)?,
        davies_bouldin: davies_bouldin(points, labels)?,
        calinski_harabasz: calinski_harabasz(points, labels)?,
        dunn: dunn(points, labels)?,
    })
}

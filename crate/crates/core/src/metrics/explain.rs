//! Latent projections and summaries for inspecting a fitted model.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::image::pearson;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// `(N, dims)` scores.
    pub scores: Array2<f64>,
    /// `(dims, d)` principal axes as rows.
    pub components: Array2<f64>,
    /// Fraction of total variance along each axis.
    pub explained_ratio: Vec<f64>,
}

/// Principal components of centred data. Each axis is signed so that its
/// largest-magnitude loading is positive.
pub fn pca_project(data: ArrayView2<f64>, dims: usize) -> Result<PcaProjection> {
    let (n, d) = data.dim();
    if n <= dims || dims == 0 || dims > d {
        return Err(Error::invalid(format!("cannot take {dims} components of {n}×{d} data")));
    }
    let mean: Array1<f64> = data.mean_axis(Axis(0)).expect("nonempty");
    let centred = &data - &mean;
    let cov = centred.t().dot(&centred) / (n - 1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut components = Array2::zeros((dims, d));
    let mut explained_ratio = Vec::with_capacity(dims);
    for (r, &i) in order.iter().take(dims).enumerate() {
        let v = eig.eigenvectors.column(i);
        let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        let s = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[r, j]] = s * v[j];
        }
        explained_ratio.push(if total > 0.0 { eig.eigenvalues[i].max(0.0) / total } else { 0.0 });
    }
    let scores = centred.dot(&components.t());
    Ok(PcaProjection { scores, components, explained_ratio })
}

/// Signed Pearson correlation between every pair of rows.
pub fn centroid_correlation_matrix(centroids: ArrayView2<f64>) -> Result<Array2<f64>> {
    let k = centroids.nrows();
    if k < 2 {
        return Err(Error::invalid("correlation matrix needs at least 2 centroids"));
    }
    let rows: Vec<Vec<f64>> = centroids.outer_iter().map(|r| r.to_vec()).collect();
    let mut out = Array2::eye(k);
    for i in 0..k {
        for j in i + 1..k {
            let r = pearson(&rows[i], &rows[j])?;
            out[[i, j]] = r;
            out[[j, i]] = r;
        }
    }
    // Diagonal entries still require non-degenerate rows.
    for (i, r) in rows.iter().enumerate() {
        pearson(r, r).map_err(|_| Error::degenerate(format!("centroid {i} has zero variance")))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDistribution {
    pub counts: Vec<usize>,
    pub coverage: Vec<f64>,
}

/// Per-cluster counts and fractions for labels in `0..k`.
pub fn cluster_distribution(labels: &[usize], k: usize) -> Result<ClusterDistribution> {
    if labels.is_empty() {
        return Err(Error::invalid("no labels"));
    }
    let mut counts = vec![0; k];
    for &l in labels {
        if l >= k {
            return Err(Error::invalid(format!("label {l} out of range for {k} clusters")));
        }
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    let coverage = counts.iter().map(|&c| c as f64 / n).collect();
    Ok(ClusterDistribution { counts, coverage })
}

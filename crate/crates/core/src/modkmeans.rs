//! Polarity-invariant Modified K-Means in electrode space.
//!
//! Maps are assigned to the template with the largest absolute correlation
//! and each template is replaced by the dominant eigenvector of its maps'
//! scatter matrix, which maximizes explained variance for a fixed assignment.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{backfit, BackfitResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModKMeansConfig {
    pub k: usize,
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl ModKMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, n_init: 20, max_iter: 100, tol: 1e-6, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    /// `(K, channels)`, zero-mean and unit-norm rows.
    pub templates: Array2<f64>,
    pub gev: f64,
    pub n_iter: usize,
    /// GEV after each iteration of the winning restart.
    pub gev_trace: Vec<f64>,
}

impl TemplateSet {
    /// One template per row under a header of channel names.
    pub fn write_csv(&self, channel_names: &[&str], path: &Path) -> Result<()> {
        if channel_names.len() != self.templates.ncols() {
            return Err(Error::shape("one channel name per template column"));
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(channel_names)?;
        for row in self.templates.outer_iter() {
            w.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn centre_rows(maps: ArrayView2<f64>) -> Array2<f64> {
    let mean = maps.mean_axis(Axis(1)).expect("nonempty rows");
    &maps - &mean.insert_axis(Axis(1))
}

/// GEV of centred maps under polarity-blind assignment: `Σ (x·t)² / Σ ‖x‖²`.
fn assign(x: &Array2<f64>, t: &Array2<f64>, total: f64) -> (Vec<usize>, f64) {
    let proj = x.dot(&t.t());
    let mut labels = Vec::with_capacity(x.nrows());
    let mut explained = 0.0;
    for row in proj.outer_iter() {
        let (best, v) = row.iter().enumerate().fold((0, 0.0f64), |b, (k, &v)| if v.abs() > b.1.abs() { (k, v) } else { b });
        labels.push(best);
        explained += v * v;
    }
    (labels, explained / total)
}

fn dominant_eigenvector(x: &Array2<f64>, members: &[usize]) -> Result<Array1<f64>> {
    let c = x.ncols();
    let sub = x.select(Axis(0), members);
    let s = sub.t().dot(&sub);
    let eig = SymmetricEigen::new(DMatrix::from_fn(c, c, |i, j| s[[i, j]]));
    let (imax, &lmax) = eig.eigenvalues.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("c > 0");
    if !(lmax > 0.0) {
        return Err(Error::degenerate("cluster scatter matrix is zero"));
    }
    let mut v: Array1<f64> = eig.eigenvectors.column(imax).iter().copied().collect();
    v -= v.mean().unwrap_or(0.0);
    let n = v.dot(&v).sqrt();
    Ok(v / n)
}

enum Restart {
    Done(TemplateSet),
    EmptyCluster,
}

fn run_once(x: &Array2<f64>, total: f64, cfg: &ModKMeansConfig, rng: &mut ChaCha8Rng) -> Result<Restart> {
    let n = x.nrows();
    let picks = sample(rng, n, cfg.k).into_vec();
    let mut t = x.select(Axis(0), &picks);
    for mut row in t.outer_iter_mut() {
        let nrm = row.dot(&row).sqrt();
        if nrm == 0.0 {
            return Ok(Restart::EmptyCluster);
        }
        row /= nrm;
    }
    let (mut labels, mut gev) = assign(x, &t, total);
    let mut trace = Vec::new();
    let mut n_iter = 0;
    for _ in 0..cfg.max_iter {
        n_iter += 1;
        for k in 0..cfg.k {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
            if members.is_empty() {
                return Ok(Restart::EmptyCluster);
            }
            t.row_mut(k).assign(&dominant_eigenvector(x, &members)?);
        }
        let (l, g) = assign(x, &t, total);
        let delta = (g - gev).abs();
        labels = l;
        gev = g;
        trace.push(g);
        if delta < cfg.tol {
            break;
        }
    }
    Ok(Restart::Done(TemplateSet { templates: t, gev, n_iter, gev_trace: trace }))
}

/// Best of `n_init` restarts by GEV. A restart that empties a cluster is redrawn.
pub fn fit(maps: ArrayView2<f64>, cfg: &ModKMeansConfig) -> Result<TemplateSet> {
    let (n, c) = maps.dim();
    if cfg.k == 0 || cfg.n_init == 0 || cfg.max_iter == 0 {
        return Err(Error::invalid("k, n_init and max_iter must be positive"));
    }
    if n < 10 * cfg.k {
        return Err(Error::invalid(format!("need at least {} maps for K = {}, got {n}", 10 * cfg.k, cfg.k)));
    }
    if c < 2 {
        return Err(Error::invalid("need at least 2 channels"));
    }
    let x = centre_rows(maps);
    let total: f64 = x.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(Error::degenerate("all maps are flat"));
    }
    const MAX_REDRAWS: usize = 50;
    let runs: Vec<Result<TemplateSet>> = (0..cfg.n_init)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            for _ in 0..MAX_REDRAWS {
                if let Restart::Done(ts) = run_once(&x, total, cfg, &mut rng)? {
                    return Ok(ts);
                }
            }
            Err(Error::degenerate(format!("restart {r} kept producing empty clusters")))
        })
        .collect();
    let mut best: Option<TemplateSet> = None;
    for run in runs {
        let ts = run?;
        if best.as_ref().map_or(true, |b| ts.gev > b.gev) {
            best = Some(ts);
        }
    }
    Ok(best.expect("n_init > 0"))
}

/// Polarity-blind labels and explained variance for arbitrary maps.
pub fn assign_maps(maps: ArrayView2<f64>, templates: ArrayView2<f64>) -> Result<BackfitResult> {
    backfit(maps, templates)
}

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::kmeans::PI_FLOOR;
use crate::error::{Error, Result};
use crate::vade::GmmParams;

/// Share of hard assignments below which a component counts as dead.
pub const DEAD_SHARE: f64 = 0.01;
/// Jitter of a reinitialised mean, relative to the donor's mean σ.
pub const REINIT_JITTER: f64 = 0.1;

/// Components whose share of `argmax γ` assignments is below 1%.
pub fn detect_dead_clusters(gamma: &Array2<f64>) -> Vec<usize> {
    let (n, k) = gamma.dim();
    let mut counts = vec![0usize; k];
    for row in gamma.outer_iter() {
        let best = row.iter().enumerate().fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
        counts[best] += 1;
    }
    (0..k).filter(|&j| (counts[j] as f64) < DEAD_SHARE * n as f64).collect()
}

/// Hard-assignment counts per component.
pub fn hard_counts(gamma: &Array2<f64>) -> Vec<usize> {
    let mut counts = vec![0usize; gamma.ncols()];
    for row in gamma.axis_iter(Axis(0)) {
        let best = row.iter().enumerate().fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
        counts[best] += 1;
    }
    counts
}

/// Restarts component `dead` next to component `donor`: jittered mean, copied
/// variance, and half of the donor's weight. Weights are then floored and renormalised.
pub fn reinit_dead_cluster<R: Rng>(prior: &GmmParams, dead: usize, donor: usize, rng: &mut R) -> Result<GmmParams> {
    let k = prior.k();
    if dead >= k || donor >= k || dead == donor {
        return Err(Error::invalid(format!("cannot reinitialise component {dead} from {donor} with K = {k}")));
    }
    let mut p = prior.clone();
    let sigma = prior.logvar.row(donor).mapv(|lv| (0.5 * lv).exp()).mean().unwrap_or(1.0);
    let sd = REINIT_JITTER * sigma;
    for j in 0..prior.dz() {
        p.mu[[dead, j]] = prior.mu[[donor, j]] + sd * rng.sample::<f64, _>(StandardNormal);
    }
    p.logvar.row_mut(dead).assign(&prior.logvar.row(donor));
    let half = 0.5 * prior.pi[donor];
    p.pi[donor] = half;
    p.pi[dead] = half;
    let floored = p.pi.mapv(|v| v.max(PI_FLOOR));
    p.pi = &floored / floored.sum();
    Ok(p)
}

/// Reinitialises every dead component from the component with the most hard assignments.
pub fn reinit_all<R: Rng>(prior: &GmmParams, gamma: &Array2<f64>, dead: &[usize], rng: &mut R) -> Result<GmmParams> {
    let counts = hard_counts(gamma);
    let donor = (0..prior.k())
        .filter(|j| !dead.contains(j))
        .max_by_key(|&j| (counts[j], std::cmp::Reverse(j)))
        .ok_or_else(|| Error::degenerate("no surviving cluster to reinitialise from"))?;
    let mut p = prior.clone();
    for &d in dead {
        p = reinit_dead_cluster(&p, d, donor, rng)?;
    }
    Ok(p)
}

/// `√(((sil + 1)/2)·gev)`.
pub fn composite_score(sil: f64, gev: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&sil) || !(0.0..=1.0).contains(&gev) {
        return Err(Error::invalid(format!("composite score needs sil in [-1, 1] and gev in [0, 1], got {sil}, {gev}")));
    }
    Ok((0.5 * (sil + 1.0) * gev).sqrt())
}

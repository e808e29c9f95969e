use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::store::SweepRecord;
use crate::error::{Error, Result};
use crate::vade::ArchConfig;

/// Subject-averaged scores of one configuration. A missing silhouette counts as −1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub arch: ArchConfig,
    pub n_subjects: usize,
    pub mean_gev: f64,
    pub mean_silhouette: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

/// Per-configuration means over subjects, ordered by configuration.
pub fn summarize(records: &[SweepRecord]) -> Result<Vec<ConfigSummary>> {
    let mut by_cfg: BTreeMap<ArchConfig, Vec<&SweepRecord>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert((r.arch, r.subject.clone())) {
            return Err(Error::invalid(format!("duplicate record for {}", r.key())));
        }
        by_cfg.entry(r.arch).or_default().push(r);
    }
    Ok(by_cfg
        .into_iter()
        .map(|(arch, rs)| ConfigSummary {
            arch,
            n_subjects: rs.len(),
            mean_gev: mean(rs.iter().map(|r| r.report.gev)),
            mean_silhouette: mean(rs.iter().map(|r| r.report.silhouette.unwrap_or(-1.0))),
        })
        .collect())
}

/// Best configuration per K: highest mean GEV, then highest mean silhouette,
/// then the smallest `(d_z, L, ndf)`.
///
/// Every configuration of a K must have a record for every subject seen at that K.
pub fn select_best(records: &[SweepRecord]) -> Result<Vec<ConfigSummary>> {
    if records.is_empty() {
        return Err(Error::invalid("no sweep records to select from"));
    }
    let summaries = summarize(records)?;
    let mut subjects: BTreeMap<usize, BTreeMap<ArchConfig, BTreeSet<&str>>> = BTreeMap::new();
    for r in records {
        subjects.entry(r.arch.k).or_default().entry(r.arch).or_default().insert(&r.subject);
    }
    for (k, cfgs) in &subjects {
        let union: BTreeSet<&str> = cfgs.values().flatten().copied().collect();
        if let Some((a, s)) = cfgs.iter().find(|(_, s)| s.len() != union.len()) {
            return Err(Error::invalid(format!(
                "incomplete grid for K = {k}: dz {} L {} ndf {} has {} of {} subjects",
                a.dz,
                a.depth,
                a.ndf,
                s.len(),
                union.len()
            )));
        }
    }
    let mut best: BTreeMap<usize, ConfigSummary> = BTreeMap::new();
    for s in summaries {
        let better = match best.get(&s.arch.k) {
            None => true,
            Some(b) => {
                s.mean_gev > b.mean_gev
                    || (s.mean_gev == b.mean_gev && s.mean_silhouette > b.mean_silhouette)
                    || (s.mean_gev == b.mean_gev
                        && s.mean_silhouette == b.mean_silhouette
                        && (s.arch.dz, s.arch.depth, s.arch.ndf) < (b.arch.dz, b.arch.depth, b.arch.ndf))
            }
        };
        if better {
            best.insert(s.arch.k, s);
        }
    }
    Ok(best.into_values().collect())
}

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use super::grid::{pair_key, pair_seed, SweepGrid};
use super::store::{RecordStore, SweepFailure, SweepRecord};
use crate::error::{Error, Result};
use crate::trainer::{fit_subject, load_subject, RunOutputs, SubjectData, TrainConfig};
use crate::vade::ArchConfig;

/// Counts of what a sweep invocation did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepSummary {
    pub trained: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Trains one pair with its derived seed.
pub fn run_pair(arch: ArchConfig, subject: &str, data: &SubjectData, train: &TrainConfig, base_seed: u64) -> Result<SweepRecord> {
    let seed = pair_seed(&arch, subject, base_seed);
    let cfg = TrainConfig { seed, ..*train };
    let t0 = Instant::now();
    let run = fit_subject(arch, data, &cfg, &RunOutputs::default())?;
    Ok(SweepRecord {
        arch,
        subject: subject.to_string(),
        report: run.report,
        composite: run.best_composite,
        best_epoch: run.best_epoch,
        epochs_run: run.history.len(),
        wall_time_s: t0.elapsed().as_secs_f64(),
        seed,
    })
}

/// Trains every pair of the grid not yet in the store, on `jobs` worker threads.
///
/// `load` is called once per subject that still has pending work; a load
/// error aborts the sweep before any training. Training errors are recorded
/// as failures and the remaining jobs continue.
pub fn run_sweep<F>(grid: &SweepGrid, load: F, train: &TrainConfig, store: &RecordStore, jobs: usize) -> Result<SweepSummary>
where
    F: Fn(&str) -> Result<SubjectData>,
{
    grid.validate()?;
    train.validate()?;
    if jobs == 0 {
        return Err(Error::invalid("jobs must be at least 1"));
    }
    let done = store.completed()?;
    let all = grid.jobs()?;
    let pending: Vec<(ArchConfig, String)> = all.iter().filter(|(a, s)| !done.contains(&pair_key(a, s))).cloned().collect();
    let mut summary = SweepSummary { skipped: all.len() - pending.len(), ..Default::default() };
    info!("sweep: {} pairs, {} already complete", all.len(), summary.skipped);
    if pending.is_empty() {
        return Ok(summary);
    }
    let mut data = BTreeMap::new();
    for (_, s) in &pending {
        if !data.contains_key(s) {
            data.insert(s.clone(), load(s)?);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::invalid(e.to_string()))?;
    let outcomes: Vec<Result<bool>> = pool.install(|| {
        pending
            .par_iter()
            .map(|(arch, subject)| match run_pair(*arch, subject, &data[subject], train, grid.base_seed) {
                Ok(rec) => {
                    info!("{}: gev {:.4} composite {:.4}", rec.key(), rec.report.gev, rec.composite);
                    store.append(&rec).map(|_| true)
                }
                Err(e) => {
                    warn!("{} failed: {e}", pair_key(arch, subject));
                    let seed = pair_seed(arch, subject, grid.base_seed);
                    store
                        .append_failure(&SweepFailure { arch: *arch, subject: subject.clone(), seed, error: e.to_string() })
                        .map(|_| false)
                }
            })
            .collect()
    });
    for o in outcomes {
        if o? {
            summary.trained += 1;
        } else {
            summary.failed += 1;
        }
    }
    Ok(summary)
}

/// `run_sweep` over prepared subject directories `data_root/<subject>`.
pub fn run_sweep_dir(grid: &SweepGrid, data_root: &Path, train: &TrainConfig, store: &RecordStore, jobs: usize) -> Result<SweepSummary> {
    run_sweep(
        grid,
        |s| {
            let dir = data_root.join(s);
            if !dir.is_dir() {
                return Err(Error::invalid(format!("no prepared data for subject `{s}` at {}", dir.display())));
            }
            load_subject(&dir)
        },
        train,
        store,
        jobs,
    )
}

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::grid::pair_key;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::vade::ArchConfig;

/// Outcome of training one configuration on one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub arch: ArchConfig,
    pub subject: String,
    pub report: MetricsReport,
    pub composite: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub wall_time_s: f64,
    pub seed: u64,
}

impl SweepRecord {
    pub fn key(&self) -> String {
        pair_key(&self.arch, &self.subject)
    }
}

/// A job that raised an error; kept so the sweep can continue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub arch: ArchConfig,
    pub subject: String,
    pub seed: u64,
    pub error: String,
}

const RECORDS: &str = "records.jsonl";
const INDEX: &str = "completed.idx";
const FAILURES: &str = "failures.jsonl";

/// Append-only JSON-lines records plus an index of completed pair keys.
///
/// A record line is written and flushed before its key goes into the index,
/// so a key in the index always has a full record behind it.
#[derive(Debug)]
pub struct RecordStore {
    dir: PathBuf,
    lock: Mutex<()>,
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(format!("{line}\n").as_bytes())?;
    f.sync_data()?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

impl RecordStore {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), lock: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Keys listed in the completion index.
    pub fn completed(&self) -> Result<HashSet<String>> {
        Ok(read_lines(&self.dir.join(INDEX))?.into_iter().collect())
    }

    /// Records whose key is in the completion index; a torn trailing line is ignored.
    pub fn records(&self) -> Result<Vec<SweepRecord>> {
        let done = self.completed()?;
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let lines = read_lines(&self.dir.join(RECORDS))?;
        let n = lines.len();
        for (i, line) in lines.into_iter().enumerate() {
            let rec: SweepRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(_) if i + 1 == n => break,
                Err(e) => return Err(Error::Format(format!("record line {}: {e}", i + 1))),
            };
            let key = rec.key();
            if done.contains(&key) && seen.insert(key) {
                out.push(rec);
            }
        }
        Ok(out)
    }

    pub fn failures(&self) -> Result<Vec<SweepFailure>> {
        read_lines(&self.dir.join(FAILURES))?.iter().map(|l| Ok(serde_json::from_str(l)?)).collect()
    }

    pub fn append(&self, rec: &SweepRecord) -> Result<()> {
        if !rec.composite.is_finite() || !rec.report.gev.is_finite() {
            return Err(Error::invalid(format!("non-finite metrics for {}", rec.key())));
        }
        let line = serde_json::to_string(rec)?;
        let _guard = self.lock.lock().expect("store lock");
        append_line(&self.dir.join(RECORDS), &line)?;
        append_line(&self.dir.join(INDEX), &rec.key())
    }

    pub fn append_failure(&self, f: &SweepFailure) -> Result<()> {
        let line = serde_json::to_string(f)?;
        let _guard = self.lock.lock().expect("store lock");
        append_line(&self.dir.join(FAILURES), &line)
    }
}

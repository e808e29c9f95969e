use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use super::render::write_heatmap_pgm;
use super::select::{select_best, summarize};
use super::store::SweepRecord;
use crate::error::{Error, Result};
use crate::vade::ArchConfig;

/// One row of the best-per-K table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub dz: usize,
    pub depth: usize,
    pub ndf: usize,
    pub q1_sil: f64,
    pub gev: f64,
}

/// Sweep axis for marginal tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    K,
    Dz,
    Depth,
    Ndf,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::K, Axis::Dz, Axis::Depth, Axis::Ndf];

    pub fn name(self) -> &'static str {
        match self {
            Axis::K => "K",
            Axis::Dz => "dz",
            Axis::Depth => "depth",
            Axis::Ndf => "ndf",
        }
    }

    pub fn value(self, a: &ArchConfig) -> usize {
        match self {
            Axis::K => a.k,
            Axis::Dz => a.dz,
            Axis::Depth => a.depth,
            Axis::Ndf => a.ndf,
        }
    }
}

/// Mean metrics over all records sharing one value of an axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalRow {
    pub value: usize,
    pub n: usize,
    pub gev: f64,
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub composite: f64,
    pub ssim: f64,
}

pub fn best_rows(records: &[SweepRecord]) -> Result<Vec<BestRow>> {
    Ok(select_best(records)?
        .into_iter()
        .map(|b| BestRow { k: b.arch.k, dz: b.arch.dz, depth: b.arch.depth, ndf: b.arch.ndf, q1_sil: b.mean_silhouette, gev: b.mean_gev })
        .collect())
}

/// Undefined indices are left out of the means; a value with none defined gets NaN.
pub fn marginal_table(records: &[SweepRecord], axis: Axis) -> Vec<MarginalRow> {
    let mut groups: BTreeMap<usize, Vec<&SweepRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(axis.value(&r.arch)).or_default().push(r);
    }
    let mean = |v: Vec<f64>| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    groups
        .into_iter()
        .map(|(value, rs)| MarginalRow {
            value,
            n: rs.len(),
            gev: mean(rs.iter().map(|r| r.report.gev).collect()),
            silhouette: mean(rs.iter().filter_map(|r| r.report.silhouette).collect()),
            davies_bouldin: mean(rs.iter().filter_map(|r| r.report.davies_bouldin).collect()),
            composite: mean(rs.iter().map(|r| r.composite).collect()),
            ssim: mean(rs.iter().map(|r| r.report.ssim).collect()),
        })
        .collect()
}

fn write_rows<S: Serialize>(rows: &[S], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean GEV per configuration: one row per K, one column per `(d_z, L, ndf)`.
pub fn gev_grid(records: &[SweepRecord]) -> Result<(Vec<usize>, Vec<(usize, usize, usize)>, Array2<f64>)> {
    let summaries = summarize(records)?;
    let mut ks: Vec<usize> = summaries.iter().map(|s| s.arch.k).collect();
    let mut cols: Vec<(usize, usize, usize)> = summaries.iter().map(|s| (s.arch.dz, s.arch.depth, s.arch.ndf)).collect();
    ks.sort_unstable();
    ks.dedup();
    cols.sort_unstable();
    cols.dedup();
    let mut m = Array2::from_elem((ks.len(), cols.len()), f64::NAN);
    for s in &summaries {
        let i = ks.binary_search(&s.arch.k).expect("collected");
        let j = cols.binary_search(&(s.arch.dz, s.arch.depth, s.arch.ndf)).expect("collected");
        m[[i, j]] = s.mean_gev;
    }
    Ok((ks, cols, m))
}

/// Writes `best_per_k.csv`, `marginal_<axis>.csv` for every axis, and the
/// GEV heatmap as `gev_heatmap.csv` and `gev_heatmap.pgm`. Returns the paths written.
pub fn report(records: &[SweepRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::invalid("no sweep records to report"));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let best = out_dir.join("best_per_k.csv");
    write_rows(&best_rows(records)?, &best)?;
    written.push(best);
    for axis in Axis::ALL {
        let p = out_dir.join(format!("marginal_{}.csv", axis.name()));
        write_rows(&marginal_table(records, axis), &p)?;
        written.push(p);
    }
    let (ks, cols, m) = gev_grid(records)?;
    let csv_path = out_dir.join("gev_heatmap.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut header = vec!["K".to_string()];
    header.extend(cols.iter().map(|(dz, l, ndf)| format!("dz{dz}_L{l}_ndf{ndf}")));
    w.write_record(&header)?;
    for (i, k) in ks.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(m.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    written.push(csv_path);
    let pgm = out_dir.join("gev_heatmap.pgm");
    write_heatmap_pgm(m.view(), 0.0, 1.0, &pgm)?;
    written.push(pgm);
    Ok(written)
}

//! Architecture grid search over subjects with a resumable record store,
//! best-per-K selection, and CSV/image reports.

mod grid;
mod render;
mod report;
mod run;
mod select;
mod store;

pub use grid::{pair_key, pair_seed, SweepGrid};
pub use render::{
    diverging_color, heatmap_gray, read_pgm, read_ppm, render_topomap_image, topomap_rgb, write_heatmap_pgm, BACKGROUND,
};
pub use report::{best_rows, gev_grid, marginal_table, report, Axis, BestRow, MarginalRow};
pub use run::{run_pair, run_sweep, run_sweep_dir, SweepSummary};
pub use select::{select_best, summarize, ConfigSummary};
pub use store::{RecordStore, SweepFailure, SweepRecord};

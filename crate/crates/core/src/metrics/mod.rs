//! Clustering validity, reconstruction quality and explained variance.

mod backfit;
mod explain;
mod image;
mod matching;
mod validity;

use std::path::Path;

pub use backfit::{backfit, centroids_to_electrodes, electrode_samples, normalize_templates, BackfitResult};
pub use explain::{centroid_correlation_matrix, cluster_distribution, pca_project, ClusterDistribution, PcaProjection};
pub use matching::{match_templates, TemplateMatch};
pub use image::{mse, pearson, spatial_correlation, ssim, SSIM_RANGE};
pub use validity::{calinski_harabasz, davies_bouldin, dunn, silhouette, validity_indices, ValidityIndices};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Evaluation summary for one model on one subject.
///
/// Unprefixed validity indices are computed on latent means (`q1`); the
/// `q4_` variants on in-mask pixels of the reconstructions. An index that is
/// undefined for the current labelling (e.g. a single occupied cluster) is `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub silhouette: Option<f64>,
    pub davies_bouldin: Option<f64>,
    pub calinski_harabasz: Option<f64>,
    pub dunn: Option<f64>,
    pub q4_silhouette: Option<f64>,
    pub q4_davies_bouldin: Option<f64>,
    pub q4_calinski_harabasz: Option<f64>,
    pub q4_dunn: Option<f64>,
    pub mse: f64,
    pub ssim: f64,
    pub spatial_correlation: f64,
    pub gev: f64,
    pub counts: Vec<usize>,
    pub coverage: Vec<f64>,
}

impl MetricsReport {
    pub fn set_latent_indices(&mut self, v: Option<ValidityIndices>) {
        self.silhouette = v.map(|v| v.silhouette);
        self.davies_bouldin = v.map(|v| v.davies_bouldin);
        self.calinski_harabasz = v.map(|v| v.calinski_harabasz);
        self.dunn = v.map(|v| v.dunn).filter(|d| d.is_finite());
    }

    pub fn set_topographic_indices(&mut self, v: Option<ValidityIndices>) {
        self.q4_silhouette = v.map(|v| v.silhouette);
        self.q4_davies_bouldin = v.map(|v| v.davies_bouldin);
        self.q4_calinski_harabasz = v.map(|v| v.calinski_harabasz);
        self.q4_dunn = v.map(|v| v.dunn).filter(|d| d.is_finite());
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Writes a matrix as CSV without a header.
pub fn write_matrix_csv(m: &Array2<f64>, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in m.outer_iter() {
        w.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

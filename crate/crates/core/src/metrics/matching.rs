use ndarray::ArrayView2;
use pathfinding::prelude::{kuhn_munkres, Matrix};

use super::image::pearson;
use crate::error::{Error, Result};

/// Optimal one-to-one pairing of reference maps with estimated maps by |r|.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMatch {
    /// `estimate_index[g]` is the estimated map paired with reference `g`.
    pub estimate_index: Vec<usize>,
    /// Absolute correlation of each pair.
    pub abs_r: Vec<f64>,
}

impl TemplateMatch {
    pub fn mean_abs_r(&self) -> f64 {
        self.abs_r.iter().sum::<f64>() / self.abs_r.len().max(1) as f64
    }

    pub fn min_abs_r(&self) -> f64 {
        self.abs_r.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Hungarian matching of `reference` rows to `estimate` rows maximizing total |r|.
pub fn match_templates(reference: ArrayView2<f64>, estimate: ArrayView2<f64>) -> Result<TemplateMatch> {
    let (g, k) = (reference.nrows(), estimate.nrows());
    if g == 0 || g > k {
        return Err(Error::invalid(format!("cannot match {g} reference maps to {k} estimates")));
    }
    if reference.ncols() != estimate.ncols() {
        return Err(Error::shape("reference and estimated maps differ in length"));
    }
    let mut r = vec![0.0; g * k];
    for i in 0..g {
        let a = reference.row(i).to_vec();
        for j in 0..k {
            r[i * k + j] = pearson(&a, &estimate.row(j).to_vec())?.abs();
        }
    }
    // The solver needs an ordered weight type; 1e-12 resolution is ample.
    let w = Matrix::from_vec(g, k, r.iter().map(|v| (v * 1e12).round() as i64).collect()).expect("sized");
    let (_, estimate_index) = kuhn_munkres(&w);
    let abs_r = estimate_index.iter().enumerate().map(|(i, &j)| r[i * k + j]).collect();
    Ok(TemplateMatch { estimate_index, abs_r })
}

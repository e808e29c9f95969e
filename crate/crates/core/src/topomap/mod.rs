//! Electrode maps to 40×40 topographic images.

mod dataset;
mod interp;

pub use dataset::{
    augment_signflip, build_dataset, build_dataset_with, load_dataset, save_dataset, split, NormStats, TopomapDataset, CLIP_SIGMA,
    SPLIT_RATIO,
};
pub use interp::CloughTocher;

use ndarray::{Array1, Array2, ArrayView1};

use crate::eeg::Electrode;
use crate::error::{Error, Result};
use crate::vade::config::IMAGE_SIDE;

/// Radius the outermost electrode is scaled to inside the unit disc.
pub const ELECTRODE_RADIUS: f64 = 0.95;

/// Centre of pixel `(row, col)` in head coordinates `[−1, 1]²`, `+y` up (nose).
pub fn pixel_center(row: usize, col: usize) -> (f64, f64) {
    let step = 2.0 / IMAGE_SIDE as f64;
    (-1.0 + (col as f64 + 0.5) * step, 1.0 - (row as f64 + 0.5) * step)
}

/// Pixels whose centre lies inside the unit circle.
pub fn head_mask() -> Array2<bool> {
    Array2::from_shape_fn((IMAGE_SIDE, IMAGE_SIDE), |(r, c)| {
        let (x, y) = pixel_center(r, c);
        x * x + y * y <= 1.0
    })
}

/// Azimuthal equidistant projection from the vertex: `(θ cos φ, θ sin φ)`.
pub fn azimuthal_equidistant(p: [f64; 3]) -> [f64; 2] {
    let theta = p[2].clamp(-1.0, 1.0).acos();
    let phi = p[1].atan2(p[0]);
    [theta * phi.cos(), theta * phi.sin()]
}

/// Projects the montage and rescales so the farthest electrode sits at [`ELECTRODE_RADIUS`].
pub fn project_electrodes(montage: &[Electrode]) -> Vec<[f64; 2]> {
    let raw: Vec<[f64; 2]> = montage.iter().map(|e| azimuthal_equidistant(e.position())).collect();
    let rmax = raw.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max);
    if rmax == 0.0 {
        return raw;
    }
    let s = ELECTRODE_RADIUS / rmax;
    raw.into_iter().map(|p| [p[0] * s, p[1] * s]).collect()
}

/// Precomputed linear map from electrode values to a flattened image.
#[derive(Debug, Clone)]
pub struct RasterOperator {
    /// `(pixels, electrodes)`; rows of out-of-mask pixels are zero.
    weights: Array2<f64>,
    mask: Array2<bool>,
}

impl RasterOperator {
    pub fn new(pos2d: &[[f64; 2]]) -> Result<Self> {
        let ct = CloughTocher::new(pos2d)?;
        let mask = head_mask();
        let pixels: Vec<[f64; 2]> = (0..IMAGE_SIDE * IMAGE_SIDE)
            .map(|i| {
                let (x, y) = pixel_center(i / IMAGE_SIDE, i % IMAGE_SIDE);
                [x, y]
            })
            .collect();
        let mut weights = ct.weight_matrix(&pixels);
        for (i, mut row) in weights.outer_iter_mut().enumerate() {
            if !mask[[i / IMAGE_SIDE, i % IMAGE_SIDE]] {
                row.fill(0.0);
            }
        }
        Ok(Self { weights, mask })
    }

    pub fn for_montage(montage: &[Electrode]) -> Result<Self> {
        Self::new(&project_electrodes(montage))
    }

    pub fn n_electrodes(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn apply(&self, values: ArrayView1<f64>) -> Result<Array2<f64>> {
        if values.len() != self.n_electrodes() {
            return Err(Error::shape(format!("expected {} electrode values, got {}", self.n_electrodes(), values.len())));
        }
        let flat: Array1<f64> = self.weights.dot(&values);
        Ok(flat.into_shape_with_order((IMAGE_SIDE, IMAGE_SIDE)).expect("square image"))
    }

    /// Rasterizes every row of `(maps, electrodes)` into `(maps, pixels)`.
    pub fn apply_rows(&self, maps: &Array2<f64>) -> Result<Array2<f64>> {
        if maps.ncols() != self.n_electrodes() {
            return Err(Error::shape(format!("expected {} electrode columns, got {}", self.n_electrodes(), maps.ncols())));
        }
        Ok(maps.dot(&self.weights.t()))
    }
}

/// One-off rasterization of a single map.
pub fn rasterize_map(values: ArrayView1<f64>, pos2d: &[[f64; 2]]) -> Result<Array2<f64>> {
    RasterOperator::new(pos2d)?.apply(values)
}

//! Polarity-blind template assignment and explained variance.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::eeg::Electrode;
use crate::error::{Error, Result};
use crate::topomap::project_electrodes;
use crate::vade::config::IMAGE_SIDE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackfitResult {
    pub labels: Vec<usize>,
    /// Signed correlation with the chosen template.
    pub rho: Vec<f64>,
    pub gev: f64,
}

/// Zero-mean, unit-norm rows; errors on a row with no spatial variance.
pub fn normalize_templates(templates: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut t = templates.to_owned();
    for (k, mut row) in t.outer_iter_mut().enumerate() {
        let m = row.mean().unwrap_or(0.0);
        row -= m;
        let n = row.dot(&row).sqrt();
        if !(n > 0.0) {
            return Err(Error::degenerate(format!("template {k} has no spatial variance")));
        }
        row /= n;
    }
    Ok(t)
}

/// Assigns each map (row of `maps`, `(T, channels)`) to the template with the
/// largest absolute spatial correlation and computes
/// `GEV = Σ GFP²ρ² / Σ GFP²`. Zero-GFP maps get weight 0 and `ρ = 0`.
pub fn backfit(maps: ArrayView2<f64>, templates: ArrayView2<f64>) -> Result<BackfitResult> {
    let c = maps.ncols();
    if templates.ncols() != c {
        return Err(Error::shape(format!("maps have {c} channels, templates {}", templates.ncols())));
    }
    if templates.nrows() == 0 {
        return Err(Error::invalid("no templates"));
    }
    let t = normalize_templates(templates)?;
    let mut labels = Vec::with_capacity(maps.nrows());
    let mut rho = Vec::with_capacity(maps.nrows());
    let (mut num, mut den) = (0.0, 0.0);
    for row in maps.outer_iter() {
        let m = row.mean().unwrap_or(0.0);
        let centred = row.mapv(|v| v - m);
        let ss = centred.dot(&centred);
        let gfp2 = ss / c as f64;
        if ss == 0.0 {
            labels.push(0);
            rho.push(0.0);
            continue;
        }
        let corr = t.dot(&centred) / ss.sqrt();
        let mut best = 0;
        for k in 1..corr.len() {
            if corr[k].abs() > corr[best].abs() {
                best = k;
            }
        }
        let r = corr[best].clamp(-1.0, 1.0);
        labels.push(best);
        rho.push(r);
        num += gfp2 * r * r;
        den += gfp2;
    }
    if den == 0.0 {
        return Err(Error::degenerate("all maps have zero GFP"));
    }
    Ok(BackfitResult { labels, rho, gev: num / den })
}

/// Bilinear sample of `img` at head coordinates `(x, y)`.
fn bilinear(img: ArrayView2<f64>, x: f64, y: f64) -> f64 {
    let step = 2.0 / IMAGE_SIDE as f64;
    let fc = ((x + 1.0) / step - 0.5).clamp(0.0, (IMAGE_SIDE - 1) as f64);
    let fr = ((1.0 - y) / step - 0.5).clamp(0.0, (IMAGE_SIDE - 1) as f64);
    let (c0, r0) = (fc.floor() as usize, fr.floor() as usize);
    let (c1, r1) = ((c0 + 1).min(IMAGE_SIDE - 1), (r0 + 1).min(IMAGE_SIDE - 1));
    let (tc, tr) = (fc - c0 as f64, fr - r0 as f64);
    (1.0 - tr) * ((1.0 - tc) * img[[r0, c0]] + tc * img[[r0, c1]]) + tr * ((1.0 - tc) * img[[r1, c0]] + tc * img[[r1, c1]])
}

/// Decoded images `(K, 40·40)` back to electrode space: bilinear sampling at
/// each electrode's projected position, then zero-mean and unit norm per row.
pub fn centroids_to_electrodes(decoded: ArrayView2<f64>, montage: &[Electrode]) -> Result<Array2<f64>> {
    let raw = electrode_samples(decoded, &project_electrodes(montage))?;
    normalize_templates(raw.view())
}

/// Bilinear samples without normalization.
pub fn electrode_samples(decoded: ArrayView2<f64>, pos2d: &[[f64; 2]]) -> Result<Array2<f64>> {
    if decoded.ncols() != IMAGE_SIDE * IMAGE_SIDE {
        return Err(Error::shape(format!("decoded images must have {} pixels, got {}", IMAGE_SIDE * IMAGE_SIDE, decoded.ncols())));
    }
    if let Some(p) = pos2d.iter().find(|p| p[0].hypot(p[1]) > 1.0) {
        return Err(Error::invalid(format!("electrode at {p:?} lies outside the head mask")));
    }
    let mut out = Array2::zeros((decoded.nrows(), pos2d.len()));
    for (k, row) in decoded.axis_iter(Axis(0)).enumerate() {
        let img = row.into_shape_with_order((IMAGE_SIDE, IMAGE_SIDE)).map_err(|e| Error::shape(e.to_string()))?;
        for (e, p) in pos2d.iter().enumerate() {
            out[[k, e]] = bilinear(img, p[0], p[1]);
        }
    }
    Ok(out)
}

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use super::recording::EegRecording;
use crate::error::{Error, Result};

/// Default transition bandwidth of the FIR design, in Hz.
pub const TRANSITION_BW: f64 = 1.0;

/// Subtracts the across-channel mean at every sample.
pub fn common_average_reference(rec: &EegRecording) -> EegRecording {
    let mean = rec.data.mean_axis(Axis(0)).expect("at least one channel");
    rec.with_data(&rec.data - &mean.insert_axis(Axis(0)))
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Number of taps: smallest odd integer ≥ 3.3·fs/transition_bw.
pub fn filter_length(fs: f64, transition_bw: f64) -> usize {
    let n = (3.3 * fs / transition_bw).ceil() as usize;
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

/// Hamming-windowed sinc bandpass, scaled to unit gain at the band centre.
pub fn design_bandpass(fs: f64, low: f64, high: f64) -> Result<Vec<f64>> {
    if !(low > 0.0 && low < high && high < fs / 2.0) {
        return Err(Error::invalid(format!("band edges must satisfy 0 < low < high < fs/2, got {low}–{high} Hz at {fs} Hz")));
    }
    let n = filter_length(fs, TRANSITION_BW);
    let mid = (n - 1) as f64 / 2.0;
    let (f1, f2) = (low / fs, high / fs);
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let m = i as f64 - mid;
            let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
            (2.0 * f2 * sinc(2.0 * f2 * m) - 2.0 * f1 * sinc(2.0 * f1 * m)) * w
        })
        .collect();
    let fc = 0.5 * (f1 + f2);
    let gain: f64 = h.iter().enumerate().map(|(i, &v)| v * (2.0 * PI * fc * (i as f64 - mid)).cos()).sum();
    for v in &mut h {
        *v /= gain;
    }
    Ok(h)
}

/// Index into a signal of length `n` with mirror reflection at both ends (edge sample not repeated).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let r = i.rem_euclid(period);
    (if r < n as isize { r } else { period - r }) as usize
}

/// Applies a symmetric odd-length FIR centred on each sample, so the output has no delay.
pub fn zero_phase_fir(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    let half = (h.len() / 2) as isize;
    let padded: Vec<f64> = (-half..n as isize + half).map(|i| x[reflect(i, n)]).collect();
    (0..n).map(|t| padded[t..t + h.len()].iter().zip(h).map(|(a, b)| a * b).sum()).collect()
}

/// Zero-phase FIR bandpass applied independently to every channel.
pub fn bandpass_filter(rec: &EegRecording, low: f64, high: f64) -> Result<EegRecording> {
    let h = design_bandpass(rec.fs, low, high)?;
    let rows: Vec<Vec<f64>> = rec
        .data
        .outer_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|ch| zero_phase_fir(&ch.to_vec(), &h))
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let data = Array2::from_shape_vec(rec.data.raw_dim(), flat).expect("filtered shape");
    Ok(rec.with_data(data))
}

/// Global field power and, once extracted, its peak positions.
#[derive(Debug, Clone, PartialEq)]
pub struct GfpSeries {
    pub values: Array1<f64>,
    pub peak_indices: Vec<usize>,
}

/// Population standard deviation across channels at each sample.
pub fn gfp(rec: &EegRecording) -> GfpSeries {
    GfpSeries { values: rec.data.std_axis(Axis(0), 0.0), peak_indices: Vec::new() }
}

/// Strict interior local maxima, thinned so that kept peaks are at least
/// `min_distance` samples apart. Taller peaks win; equal heights keep the earlier index.
pub fn extract_gfp_peaks(series: &GfpSeries, min_distance: usize) -> Result<GfpSeries> {
    let v = &series.values;
    let n = v.len();
    if n < 3 {
        return Err(Error::invalid(format!("GFP series needs at least 3 samples, got {n}")));
    }
    if min_distance == 0 {
        return Err(Error::invalid("min_distance must be at least 1"));
    }
    let mut cand: Vec<usize> = (1..n - 1).filter(|&t| v[t - 1] < v[t] && v[t] > v[t + 1]).collect();
    cand.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut taken = vec![false; n];
    let mut kept = Vec::new();
    for t in cand {
        let lo = t.saturating_sub(min_distance - 1);
        let hi = (t + min_distance).min(n);
        if !taken[lo..hi].iter().any(|&x| x) {
            taken[t] = true;
            kept.push(t);
        }
    }
    kept.sort_unstable();
    Ok(GfpSeries { values: v.clone(), peak_indices: kept })
}

/// Channel maps at the given sample indices, one row per peak.
pub fn maps_at(rec: &EegRecording, indices: &[usize]) -> Array2<f64> {
    rec.data.select(Axis(1), indices).reversed_axes().as_standard_layout().into_owned()
}

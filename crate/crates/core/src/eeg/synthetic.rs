//! Ground-truth microstate recordings for testing.
//!
//! A Markov chain over `G` fixed scalp maps drives a 10 Hz carrier with a slow
//! amplitude envelope; each state segment has a random sign. White Gaussian
//! noise is added at a given signal-to-noise power ratio.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use super::recording::{EegRecording, Electrode};
use crate::error::{Error, Result};

/// Carrier frequency of the simulated oscillation (alpha band).
pub const CARRIER_HZ: f64 = 10.0;
const ENVELOPE_HZ: f64 = 0.5;
const ENVELOPE_DEPTH: f64 = 0.3;
/// Peak template amplitude in µV.
const SCALE_UV: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_templates: usize,
    /// Seconds.
    pub duration: f64,
    pub fs: f64,
    /// Mean dwell time of a state, in ms.
    pub mean_state_duration: f64,
    /// Signal-to-noise power ratio; `f64::INFINITY` gives a noiseless recording.
    pub snr: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n_templates: 4, duration: 60.0, fs: 250.0, mean_state_duration: 80.0, snr: 5.0, seed: 1 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self, n_channels: usize) -> Result<()> {
        if self.n_templates < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 templates"));
        }
        if self.n_templates >= n_channels {
            return Err(Error::invalid(format!(
                "{} templates cannot be orthogonal over {n_channels} channels",
                self.n_templates
            )));
        }
        if !(self.mean_state_duration > 0.0) || !(self.snr > 0.0) || !(self.fs > 0.0) || !(self.duration > 0.0) {
            return Err(Error::invalid("duration, fs, mean_state_duration and snr must be positive"));
        }
        if self.mean_state_duration * self.fs / 1000.0 < 1.0 {
            return Err(Error::invalid("mean state duration is shorter than one sample"));
        }
        Ok(())
    }
}

/// A generated recording with the maps and labels that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticRecording {
    pub recording: EegRecording,
    /// `(G, channels)`, zero-mean and unit-norm rows.
    pub templates: Array2<f64>,
    /// Active template at every sample.
    pub states: Vec<usize>,
}

/// Potential of a current dipole `p` at `r0` seen at `e`: `p·(e − r0)/|e − r0|³`.
fn dipole(e: [f64; 3], r0: [f64; 3], p: [f64; 3]) -> f64 {
    let d = [e[0] - r0[0], e[1] - r0[1], e[2] - r0[2]];
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    (p[0] * d[0] + p[1] * d[1] + p[2] * d[2]) / (n * n * n)
}

/// `g` random dipolar maps, average-referenced, Gram–Schmidt orthogonalised and unit-norm.
pub fn dipolar_templates<R: Rng>(montage: &[Electrode], g: usize, rng: &mut R) -> Array2<f64> {
    let c = montage.len();
    let mut out = Array2::<f64>::zeros((g, c));
    let mut k = 0;
    while k < g {
        let dir: [f64; 3] = UnitSphere.sample(rng);
        // Sources in the upper half of a sphere of radius 0.6, well inside the scalp.
        let depth = rng.gen_range(0.3..0.6);
        let r0 = [dir[0] * depth, dir[1] * depth, dir[2].abs() * depth];
        let p: [f64; 3] = UnitSphere.sample(rng);
        let mut v: Array1<f64> = montage.iter().map(|e| dipole(e.position(), r0, p)).collect();
        let m = v.mean().unwrap_or(0.0);
        v -= m;
        for j in 0..k {
            let t = out.row(j);
            let proj = v.dot(&t);
            v.scaled_add(-proj, &t);
        }
        let n = v.dot(&v).sqrt();
        // Reject draws that are nearly spanned by earlier templates.
        if n < 1e-3 {
            continue;
        }
        out.row_mut(k).assign(&(v / n));
        k += 1;
    }
    out
}

pub fn generate_synthetic(spec: &SyntheticSpec, montage: &[Electrode]) -> Result<SyntheticRecording> {
    spec.validate(montage.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let templates = dipolar_templates(montage, spec.n_templates, &mut rng);
    let n = (spec.duration * spec.fs).round() as usize;
    let c = montage.len();
    let switch_p = 1000.0 / (spec.mean_state_duration * spec.fs);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let env_phase = rng.gen_range(0.0..2.0 * PI);

    let mut states = Vec::with_capacity(n);
    let mut signs = Vec::with_capacity(n);
    let mut state = rng.gen_range(0..spec.n_templates);
    let mut sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    for t in 0..n {
        if t > 0 && rng.gen::<f64>() < switch_p {
            let next = rng.gen_range(0..spec.n_templates - 1);
            state = if next >= state { next + 1 } else { next };
            sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        }
        states.push(state);
        signs.push(sign);
    }

    let mut data = Array2::<f64>::zeros((c, n));
    for t in 0..n {
        let time = t as f64 / spec.fs;
        let env = 1.0 + ENVELOPE_DEPTH * (2.0 * PI * ENVELOPE_HZ * time + env_phase).sin();
        let a = SCALE_UV * signs[t] * env * (2.0 * PI * CARRIER_HZ * time + phase).sin();
        data.column_mut(t).assign(&(&templates.row(states[t]) * a));
    }
    if spec.snr.is_finite() {
        let power = data.iter().map(|v| v * v).sum::<f64>() / data.len().max(1) as f64;
        let sd = (power / spec.snr).sqrt();
        let noise = Normal::new(0.0, sd).map_err(|e| Error::invalid(e.to_string()))?;
        for v in data.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(SyntheticRecording { recording: EegRecording::new(data, spec.fs, montage.to_vec())?, templates, states })
}

/// Lengths of runs of identical labels.
pub fn run_lengths(states: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut len = 0;
    for (i, s) in states.iter().enumerate() {
        if i > 0 && states[i - 1] != *s {
            out.push(len);
            len = 0;
        }
        len += 1;
    }
    if len > 0 {
        out.push(len);
    }
    out
}

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vade::config::{DEPTH_VALUES, DZ_VALUES, K_RANGE, NDF_VALUES};
use crate::vade::ArchConfig;

/// Axes of the architecture search and the subjects to run it on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(rename = "K_values")]
    pub k_values: Vec<usize>,
    pub dz_values: Vec<usize>,
    pub depth_values: Vec<usize>,
    pub ndf_values: Vec<usize>,
    pub subjects: Vec<String>,
    pub base_seed: u64,
}

impl SweepGrid {
    /// K ∈ {3..20} × d_z ∈ {16, 32, 64} × L ∈ {2, 3, 4} × ndf ∈ {32, 64, 128}.
    pub fn full(subjects: Vec<String>, base_seed: u64) -> Self {
        Self {
            k_values: K_RANGE.collect(),
            dz_values: DZ_VALUES.to_vec(),
            depth_values: DEPTH_VALUES.to_vec(),
            ndf_values: NDF_VALUES.to_vec(),
            subjects,
            base_seed,
        }
    }

    /// K ∈ {3, 4}, d_z = 16, L ∈ {2, 4}, ndf = 32.
    pub fn desk_scale(subjects: Vec<String>, base_seed: u64) -> Self {
        Self {
            k_values: vec![3, 4],
            dz_values: vec![16],
            depth_values: vec![2, 4],
            ndf_values: vec![32],
            subjects,
            base_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty()
            || self.dz_values.is_empty()
            || self.depth_values.is_empty()
            || self.ndf_values.is_empty()
            || self.subjects.is_empty()
        {
            return Err(Error::invalid("every sweep axis and the subject list must be nonempty"));
        }
        let mut subjects = self.subjects.clone();
        subjects.sort();
        subjects.dedup();
        if subjects.len() != self.subjects.len() {
            return Err(Error::invalid("duplicate subject id in sweep grid"));
        }
        if self.subjects.iter().any(|s| s.is_empty() || s.contains(['/', '\\', '\n'])) {
            return Err(Error::invalid("subject ids must be nonempty and contain no path separators"));
        }
        self.configs().map(|_| ())
    }

    /// Every architecture of the grid, in axis order (K outermost).
    pub fn configs(&self) -> Result<Vec<ArchConfig>> {
        let mut out = Vec::with_capacity(self.n_configs());
        for &k in &self.k_values {
            for &dz in &self.dz_values {
                for &depth in &self.depth_values {
                    for &ndf in &self.ndf_values {
                        out.push(ArchConfig::new(k, dz, depth, ndf)?);
                    }
                }
            }
        }
        let mut sorted = out.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != out.len() {
            return Err(Error::invalid("sweep axes contain duplicate values"));
        }
        Ok(out)
    }

    pub fn n_configs(&self) -> usize {
        self.k_values.len() * self.dz_values.len() * self.depth_values.len() * self.ndf_values.len()
    }

    /// All `(config, subject)` jobs.
    pub fn jobs(&self) -> Result<Vec<(ArchConfig, String)>> {
        let configs = self.configs()?;
        Ok(configs.iter().flat_map(|c| self.subjects.iter().map(move |s| (*c, s.clone()))).collect())
    }
}

/// Stable key of a `(config, subject)` pair.
pub fn pair_key(arch: &ArchConfig, subject: &str) -> String {
    format!("K{}_dz{}_L{}_ndf{}/{}", arch.k, arch.dz, arch.depth, arch.ndf, subject)
}

/// First eight bytes (little-endian) of SHA-256 over the pair key and base seed.
pub fn pair_seed(arch: &ArchConfig, subject: &str, base_seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(pair_key(arch, subject).as_bytes());
    h.update(base_seed.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

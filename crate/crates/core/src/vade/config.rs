use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the square topographic image.
pub const IMAGE_SIDE: usize = 40;
/// Flattened input dimensionality.
pub const D_X: usize = IMAGE_SIDE * IMAGE_SIDE;
/// Spatial size after each stride-2 4×4 stage (padding 1).
pub const STAGE_SIZES: [usize; 5] = [40, 20, 10, 5, 2];

pub const K_RANGE: std::ops::RangeInclusive<usize> = 3..=20;
pub const DZ_VALUES: [usize; 3] = [16, 32, 64];
pub const DEPTH_VALUES: [usize; 3] = [2, 3, 4];
pub const NDF_VALUES: [usize; 3] = [32, 64, 128];

/// One point of the architecture grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArchConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub dz: usize,
    pub depth: usize,
    pub ndf: usize,
}

impl ArchConfig {
    pub fn new(k: usize, dz: usize, depth: usize, ndf: usize) -> Result<Self> {
        let cfg = Self { k, dz, depth, ndf };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !K_RANGE.contains(&self.k) {
            return Err(Error::invalid(format!("K = {} outside [3, 20]", self.k)));
        }
        if !DZ_VALUES.contains(&self.dz) {
            return Err(Error::invalid(format!("dz = {} not in {{16, 32, 64}}", self.dz)));
        }
        if !DEPTH_VALUES.contains(&self.depth) {
            return Err(Error::invalid(format!("depth = {} not in {{2, 3, 4}}", self.depth)));
        }
        if !NDF_VALUES.contains(&self.ndf) {
            return Err(Error::invalid(format!("ndf = {} not in {{32, 64, 128}}", self.ndf)));
        }
        Ok(())
    }

    /// Output channels of encoder stage `i`.
    pub fn stage_channels(&self, i: usize) -> usize {
        self.ndf << i
    }

    /// Spatial side of the deepest encoder feature map (and decoder seed).
    pub fn seed_side(&self) -> usize {
        STAGE_SIZES[self.depth]
    }

    /// `0.3 / ln K`.
    pub fn lambda_e(&self) -> f64 {
        0.3 / (self.k as f64).ln()
    }
}

/// Weights of the auxiliary objective terms and the β schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta_max: f64,
    pub cycles: usize,
    pub lambda_s: f64,
    pub lambda_b: f64,
    pub lambda_t: f64,
    pub lambda_pol: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { beta_max: 0.1, cycles: 4, lambda_s: 50.0, lambda_b: 5.0, lambda_t: 0.2, lambda_pol: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.beta_max, self.lambda_s, self.lambda_b, self.lambda_t, self.lambda_pol];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("loss weights must be finite and nonnegative"));
        }
        if self.cycles == 0 {
            return Err(Error::invalid("cycles must be at least 1"));
        }
        Ok(())
    }
}

/// Architecture plus loss weights, as read from and written to JSON.
///
/// `lambda_e` is derived from `K` and written for reference; when present
/// on input it must agree with the derived value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub arch: ArchConfig,
    pub weights: LossWeights,
}

#[derive(Serialize, Deserialize)]
struct ModelConfigJson {
    #[serde(rename = "K")]
    k: usize,
    dz: usize,
    depth: usize,
    ndf: usize,
    #[serde(default = "d_beta_max")]
    beta_max: f64,
    #[serde(default = "d_cycles")]
    cycles: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda_e: Option<f64>,
    #[serde(default = "d_lambda_s")]
    lambda_s: f64,
    #[serde(default = "d_lambda_b")]
    lambda_b: f64,
    #[serde(default = "d_lambda_t")]
    lambda_t: f64,
    #[serde(default = "d_lambda_pol")]
    lambda_pol: f64,
}

fn d_beta_max() -> f64 {
    LossWeights::default().beta_max
}
fn d_cycles() -> usize {
    LossWeights::default().cycles
}
fn d_lambda_s() -> f64 {
    LossWeights::default().lambda_s
}
fn d_lambda_b() -> f64 {
    LossWeights::default().lambda_b
}
fn d_lambda_t() -> f64 {
    LossWeights::default().lambda_t
}
fn d_lambda_pol() -> f64 {
    LossWeights::default().lambda_pol
}

impl ModelConfig {
    pub fn new(arch: ArchConfig) -> Self {
        Self { arch, weights: LossWeights::default() }
    }

    pub fn to_json(&self) -> String {
        let j = ModelConfigJson {
            k: self.arch.k,
            dz: self.arch.dz,
            depth: self.arch.depth,
            ndf: self.arch.ndf,
            beta_max: self.weights.beta_max,
            cycles: self.weights.cycles,
            lambda_e: Some(self.arch.lambda_e()),
            lambda_s: self.weights.lambda_s,
            lambda_b: self.weights.lambda_b,
            lambda_t: self.weights.lambda_t,
            lambda_pol: self.weights.lambda_pol,
        };
        serde_json::to_string_pretty(&j).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: ModelConfigJson = serde_json::from_str(s)?;
        let arch = ArchConfig::new(j.k, j.dz, j.depth, j.ndf)?;
        if let Some(le) = j.lambda_e {
            if (le - arch.lambda_e()).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "lambda_e is derived as 0.3/ln K = {:.6}; got {le}",
                    arch.lambda_e()
                )));
            }
        }
        let weights = LossWeights {
            beta_max: j.beta_max,
            cycles: j.cycles,
            lambda_s: j.lambda_s,
            lambda_b: j.lambda_b,
            lambda_t: j.lambda_t,
            lambda_pol: j.lambda_pol,
        };
        weights.validate()?;
        Ok(Self { arch, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_ranges() {
        assert!(ArchConfig::new(4, 16, 4, 32).is_ok());
        assert!(ArchConfig::new(2, 16, 4, 32).is_err());
        assert!(ArchConfig::new(21, 16, 4, 32).is_err());
        assert!(ArchConfig::new(4, 8, 4, 32).is_err());
        assert!(ArchConfig::new(4, 16, 5, 32).is_err());
        assert!(ArchConfig::new(4, 16, 4, 16).is_err());
        let n = K_RANGE.count() * DZ_VALUES.len() * DEPTH_VALUES.len() * NDF_VALUES.len();
        assert_eq!(n, 486);
    }

    #[test]
    fn lambda_e_natural_log() {
        let c = ArchConfig::new(4, 16, 4, 32).unwrap();
        assert!((c.lambda_e() - 0.3 / 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn json_keys_and_defaults() {
        let c = ModelConfig::from_json(r#"{"K": 5, "dz": 32, "depth": 3, "ndf": 64}"#).unwrap();
        assert_eq!(c.arch, ArchConfig { k: 5, dz: 32, depth: 3, ndf: 64 });
        assert_eq!(c.weights, LossWeights::default());
        let v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        for key in ["K", "dz", "depth", "ndf", "beta_max", "cycles", "lambda_e", "lambda_s", "lambda_b", "lambda_t", "lambda_pol"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(ModelConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn inconsistent_lambda_e_rejected() {
        assert!(ModelConfig::from_json(r#"{"K": 4, "dz": 16, "depth": 4, "ndf": 32, "lambda_e": 1.0}"#).is_err());
    }
}

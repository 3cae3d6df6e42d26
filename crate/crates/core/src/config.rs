//! Run configuration: one JSON file drives every subcommand.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{build_canonical_domain, DomainSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshConfig {
    pub h: f64,
    #[serde(default = "default_grading")]
    pub grading_exponent: f64,
}

fn default_grading() -> f64 {
    2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeConfig {
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub modes: usize,
    pub samples: usize,
    pub seed: u64,
}

/// Domain given either as a canonical builder (kind + params) or as a file
/// path to a serialized DomainSpec.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainConfig {
    Canonical {
        kind: String,
        #[serde(default)]
        params: serde_json::Value,
    },
    File {
        file: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub alpha: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub mesh: MeshConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub s_grid: Vec<f64>,
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default)]
    pub modes: Option<usize>,
    pub output_dir: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha: must be in (0,1), got {}", self.alpha)));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::Config(format!("T: must be positive, got {}", self.t_final)));
        }
        if self.time.steps < 16 {
            return Err(Error::Config(format!("time.steps: must be ≥ 16, got {}", self.time.steps)));
        }
        if !(self.mesh.h > 0.0) {
            return Err(Error::Config(format!("mesh.h: must be positive, got {}", self.mesh.h)));
        }
        if self.mesh.grading_exponent < 1.0 {
            return Err(Error::Config(format!(
                "mesh.grading_exponent: must be ≥ 1, got {}",
                self.mesh.grading_exponent
            )));
        }
        if let Some(e) = &self.ensemble {
            if e.samples == 0 {
                return Err(Error::Config("ensemble.samples: must be ≥ 1".into()));
            }
            if e.modes == 0 {
                return Err(Error::Config("ensemble.modes: must be ≥ 1".into()));
            }
        }
        if self.output_dir.is_empty() {
            return Err(Error::Config("output_dir: must not be empty".into()));
        }
        Ok(())
    }

    pub fn build_domain(&self) -> Result<DomainSpec> {
        let domain = match &self.domain {
            DomainConfig::Canonical { kind, params } => build_canonical_domain(kind, params)?,
            DomainConfig::File { file } => {
                let text = std::fs::read_to_string(file)?;
                let value: serde_json::Value = serde_json::from_str(&text)?;
                DomainSpec::from_json(&value)?
            }
        };
        // δ validity needs the built domain
        let delta_max = domain.delta_max();
        for &d in &self.deltas {
            if !(d > 0.0 && d < delta_max) {
                return Err(Error::Config(format!(
                    "deltas: {d} outside (0, {delta_max})"
                )));
            }
        }
        Ok(domain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_json() -> serde_json::Value {
        serde_json::json!({
            "domain": {"kind": "flat_bottom_rect", "params": {"width": 1.0, "height": 1.0, "R0": 0.4}},
            "alpha": 0.5,
            "T": 1.0,
            "mesh": {"h": 0.1, "grading_exponent": 2.0},
            "time": {"steps": 32},
            "deltas": [0.04, 0.02],
            "s_grid": [0.5, 1.0, 2.0, 4.0, 8.0],
            "ensemble": {"modes": 5, "samples": 4, "seed": 42},
            "output_dir": "out"
        })
    }

    #[test]
    fn round_trip_and_domain_build() {
        let cfg: RunConfig = serde_json::from_value(base_json()).unwrap();
        cfg.validate().unwrap();
        let d = cfg.build_domain().unwrap();
        assert!(d.contains_origin_on_boundary);
        let text = serde_json::to_string(&cfg).unwrap();
        let cfg2: RunConfig = serde_json::from_str(&text).unwrap();
        cfg2.validate().unwrap();
    }

    #[test]
    fn validation_names_the_field() {
        let mut v = base_json();
        v["alpha"] = serde_json::json!(1.2);
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("alpha"), "message: {err}");

        let mut v = base_json();
        v["time"]["steps"] = serde_json::json!(4);
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("steps"));
    }

    #[test]
    fn oversized_delta_rejected() {
        let mut v = base_json();
        v["deltas"] = serde_json::json!([0.5]);
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        cfg.validate().unwrap();
        assert!(cfg.build_domain().is_err());
    }
}

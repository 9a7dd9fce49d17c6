//! Experiment configuration shared by the command-line runner and the tests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::besov::AnalysisParams;
use crate::chaos::NonlinearitySpec;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::noise::NoiseSpec;

/// Version string written next to every artifact.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub n_points: usize,
    pub box_length: f64,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.dim, self.n_points, self.box_length)
    }
}

/// A named nonlinearity or explicit `C₀ x^m + G(x)` coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityChoice {
    /// `x3`, `x5`, `x7` or `x5_mixed` (`x⁵ + x²/2 − x/4`).
    Preset(String),
    Coefficients { c0: f64, m: usize, g: Vec<f64> },
}

impl NonlinearityChoice {
    pub fn spec(&self) -> Result<NonlinearitySpec> {
        match self {
            Self::Preset(name) => match name.as_str() {
                "x3" => NonlinearitySpec::monomial(3),
                "x5" => NonlinearitySpec::monomial(5),
                "x7" => NonlinearitySpec::monomial(7),
                "x5_mixed" => NonlinearitySpec::new(1.0, 5, vec![0.0, -0.25, 0.5]),
                other => Err(Error::Params(format!("unknown nonlinearity preset '{other}'"))),
            },
            Self::Coefficients { c0, m, g } => NonlinearitySpec::new(*c0, *m, g.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub analysis: AnalysisParams,
    pub nonlinearity: NonlinearityChoice,
    pub noise: NoiseSpec,
    pub eps_grid: Vec<f64>,
    pub ensemble_size: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub final_time: f64,
    /// Exponent used by the regularity and decay diagnostics.
    pub diagnostic_kappa: f64,
    /// Base level of the localization schedule in decompositions.
    pub loc_base: i32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec { dim: 1, n_points: 256, box_length: std::f64::consts::TAU },
            analysis: AnalysisParams::default(),
            nonlinearity: NonlinearityChoice::Preset("x5".into()),
            noise: NoiseSpec::default(),
            eps_grid: vec![0.5, 0.25, 0.125],
            ensemble_size: 8,
            master_seed: 20240501,
            output_dir: PathBuf::from("out"),
            final_time: 0.25,
            diagnostic_kappa: 0.3,
            loc_base: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.analysis.validate()?;
        self.noise.validate()?;
        self.grid.build()?;
        self.nonlinearity.spec()?;
        if self.eps_grid.is_empty() || self.eps_grid.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(Error::Params("eps grid must be non-empty with entries in (0,1]".into()));
        }
        if self.ensemble_size == 0 {
            return Err(Error::Params("ensemble size must be positive".into()));
        }
        if !(self.final_time > 0.0) {
            return Err(Error::Params("final time must be positive".into()));
        }
        if !(self.diagnostic_kappa > 0.0) {
            return Err(Error::Params("diagnostic kappa must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. The output directory does not
    /// affect results and is left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        crate::sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_roundtrips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = ExperimentConfig::from_json(r#"{"master_seed": 5, "nonlinearity": {"preset": "x3"}}"#).unwrap();
        assert_eq!(c.master_seed, 5);
        assert_eq!(c.nonlinearity.spec().unwrap().m, 3);
        assert_ne!(c.hash(), ExperimentConfig::default().hash());
        let moved = ExperimentConfig { output_dir: "elsewhere".into(), ..c.clone() };
        assert_eq!(moved.hash(), c.hash());
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"eps_grid": [0.0]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"nonlinearity": {"preset": "x4"}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"grid": {"dim": 4, "n_points": 16, "box_length": 1.0}}"#).is_err());
    }
}

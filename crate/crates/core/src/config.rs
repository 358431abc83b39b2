//! Sectioned TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [potential]
//! kind = "power"      # power | constant | table
//! sign = "positive"
//! alpha = 1.0
//! amplitude = 1.0
//! dim = 2
//!
//! [mc]
//! n_paths = 20000
//!
//! [grid]
//! t = [1.0, 5.0]
//! x = [[0.0, 0.0], [1.0, 0.0]]
//! y = [[0.0, 0.0], [0.0, 1.0]]
//! ```
//!
//! Unknown keys are rejected; the error names the accepted keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::duhamel::DuhamelConfig;
use crate::envelopes::{SampleGrid, SamplePoint};
use crate::error::{Error, Result};
use crate::fkmc::{GreenConfig, McConfig};
use crate::pde::GridConfig;
use crate::potentials::{PotentialSpec, RadialProfile, Sign};
use crate::verify::FitConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialModel {
    #[default]
    Power,
    Constant,
    /// Radial magnitude read from a two-column `r,value` CSV file.
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    #[serde(default)]
    pub kind: PotentialModel,
    #[serde(default = "default_sign")]
    pub sign: Sign,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    pub dim: usize,
    /// Value of a constant potential.
    #[serde(default)]
    pub value: f64,
    /// CSV profile for `kind = "table"`, relative to the config file.
    pub table: Option<PathBuf>,
    pub class_lower: Option<f64>,
    pub class_upper: Option<f64>,
}

fn default_sign() -> Sign {
    Sign::Positive
}

fn one() -> f64 {
    1.0
}

impl PotentialSection {
    pub fn build(&self, base_dir: &Path) -> Result<PotentialSpec> {
        let spec = match self.kind {
            PotentialModel::Power => PotentialSpec::power_decay(self.sign, self.alpha, self.amplitude, self.dim)?,
            PotentialModel::Constant => PotentialSpec::constant(self.value, self.dim),
            PotentialModel::Table => {
                let path = self
                    .table
                    .as_ref()
                    .ok_or_else(|| Error::Config("potential.kind = \"table\" needs potential.table".into()))?;
                let profile = RadialProfile::from_csv(base_dir.join(path))?;
                return PotentialSpec::custom_radial(
                    self.sign,
                    self.alpha,
                    profile,
                    self.class_lower.unwrap_or(self.amplitude),
                    self.class_upper.unwrap_or(self.amplitude),
                    self.dim,
                );
            }
        };
        match (self.class_lower, self.class_upper) {
            (None, None) => Ok(spec),
            (lo, hi) => spec.with_class(lo.unwrap_or(self.amplitude), hi.unwrap_or(self.amplitude)),
        }
    }
}

/// Sample points: every time in `t` combined with every `(x[i], y[i])` pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl GridSection {
    pub fn build(&self, dim: usize) -> Result<SampleGrid> {
        if self.x.len() != self.y.len() {
            return Err(Error::Config(format!(
                "grid.x has {} points but grid.y has {}",
                self.x.len(),
                self.y.len()
            )));
        }
        let points = self
            .t
            .iter()
            .flat_map(|&t| {
                self.x
                    .iter()
                    .zip(&self.y)
                    .map(move |(x, y)| SamplePoint::new(t, x.clone(), y.clone()))
            })
            .collect();
        SampleGrid::new(dim, points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeChoice {
    #[default]
    Positive,
    Negative,
    Gaussian,
}

/// Fit settings plus the envelope family used by `verify` without a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub envelope: EnvelopeChoice,
    pub grid_points: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub band_ceiling: f64,
    pub min_snr: f64,
    pub sigma: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            envelope: EnvelopeChoice::default(),
            grid_points: fit.grid_points,
            grid_min: fit.grid_min,
            grid_max: fit.grid_max,
            band_ceiling: fit.band_ceiling,
            min_snr: fit.min_snr,
            sigma: fit.sigma,
        }
    }
}

impl VerifySection {
    pub fn fit(&self) -> FitConfig {
        FitConfig {
            grid_points: self.grid_points,
            grid_min: self.grid_min,
            grid_max: self.grid_max,
            band_ceiling: self.band_ceiling,
            min_snr: self.min_snr,
            sigma: self.sigma,
        }
    }
}

/// Ball of the killed kernel and of the exit check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirichletSection {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Default for DirichletSection {
    fn default() -> Self {
        Self {
            center: vec![0.0],
            radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Single source of randomness; overrides `mc.seed`.
    pub seed: Option<u64>,
    pub potential: Option<PotentialSection>,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub pde: GridConfig,
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub green: GreenConfig,
    #[serde(default)]
    pub duhamel: DuhamelConfig,
    #[serde(default)]
    pub dirichlet: DirichletSection,
    /// Directory the config was read from; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// The potential section, which every potential-dependent command needs.
    pub fn potential(&self) -> Result<PotentialSpec> {
        self.potential
            .as_ref()
            .ok_or_else(|| Error::Config("missing [potential] section".into()))?
            .build(&self.base_dir)
    }

    pub fn mc(&self) -> McConfig {
        McConfig {
            seed: self.seed.unwrap_or(self.mc.seed),
            ..self.mc.clone()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.mc.seed)
    }
}

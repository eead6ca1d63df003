//! JSON configuration documents for each command.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sfocc::io::DataFiles;
use sfocc::simulate::CustomConfig;
use sfocc::spatial::CovFamily;
use sfocc::{McmcConfig, ModelSpec, Variant};

pub const DEFAULT_SEED: u64 = 1;

/// Survey data given either as a directory with the standard file names or
/// as explicit file paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataRef {
    Dir(PathBuf),
    Files(DataFiles),
}

impl DataRef {
    /// Resolves relative paths against `base`.
    pub fn resolve(&self, base: &Path) -> DataFiles {
        match self {
            DataRef::Dir(d) => DataFiles::in_dir(&base.join(d)),
            DataRef::Files(f) => DataFiles {
                detections: base.join(&f.detections),
                coords: base.join(&f.coords),
                occ_covariates: f.occ_covariates.as_ref().map(|p| base.join(p)),
                det_covariates: f.det_covariates.as_ref().map(|p| base.join(p)),
            },
        }
    }
}

fn default_chains() -> usize {
    3
}

fn default_thin() -> usize {
    1
}

fn default_batch() -> usize {
    25
}

fn default_target() -> f64 {
    0.43
}

fn default_tuning() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSettings {
    #[serde(default = "default_chains")]
    pub n_chains: usize,
    pub n_iterations: usize,
    pub n_burn: usize,
    #[serde(default = "default_thin")]
    pub n_thin: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_batch")]
    pub adapt_batch: usize,
    #[serde(default = "default_target")]
    pub accept_target: f64,
    #[serde(default = "default_tuning")]
    pub phi_tuning: f64,
}

impl McmcSettings {
    pub fn to_config(&self, seed: u64) -> Result<McmcConfig> {
        let cfg = McmcConfig {
            n_chains: self.n_chains,
            n_iterations: self.n_iterations,
            n_burn: self.n_burn,
            n_thin: self.n_thin,
            seed,
            adapt_batch: self.adapt_batch,
            accept_target: self.accept_target,
            phi_tuning: self.phi_tuning,
        };
        cfg.check()?;
        Ok(cfg)
    }
}

/// Fills spatial defaults (m = 15, exponential covariance) left out of a
/// JSON model block.
pub fn complete_spec(mut spec: ModelSpec) -> ModelSpec {
    if spec.variant.is_spatial() {
        spec.m.get_or_insert(15);
        spec.cov_family.get_or_insert(CovFamily::Exponential);
    }
    spec
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub scenario: Option<u8>,
    #[serde(default)]
    pub custom: Option<CustomConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: DataRef,
    pub model: ModelSpec,
    pub mcmc: McmcSettings,
    /// Species names in the order used for fitting; other species follow
    /// in file order.
    #[serde(default)]
    pub species_order: Option<Vec<String>>,
    /// Put the most frequently detected species first.
    #[serde(default)]
    pub order_by_detections: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// Directory of a posterior store.
    pub fit: PathBuf,
    /// `site,x,y` of the new locations.
    pub coords: PathBuf,
    /// `site,<name>...` occurrence covariates of the new locations.
    #[serde(default)]
    pub occ_covariates: Option<PathBuf>,
    /// Species included in richness; all species when absent.
    #[serde(default)]
    pub richness_species: Option<Vec<String>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub fits: Vec<PathBuf>,
    /// Training data shared by every fit.
    pub data: DataRef,
    #[serde(default)]
    pub holdout: Option<DataRef>,
    /// Posterior stores fit to the full data, used as latent-occupancy references.
    #[serde(default)]
    pub references: Vec<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_q() -> usize {
    3
}

fn default_m() -> usize {
    15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimstudyConfig {
    pub scenarios: Vec<u8>,
    pub models: Vec<Variant>,
    pub n_replicates: usize,
    pub mcmc: McmcSettings,
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SimstudyConfig {
    pub fn check(&self) -> Result<()> {
        if self.n_replicates == 0 {
            bail!("n_replicates must be at least 1");
        }
        if self.scenarios.is_empty() || self.models.is_empty() {
            bail!("simstudy needs at least one scenario and one model");
        }
        Ok(())
    }

    pub fn spec(&self, variant: Variant) -> ModelSpec {
        let mut spec = ModelSpec::new(variant);
        if variant.is_factor() {
            spec = spec.with_q(self.q);
        }
        if variant.is_spatial() {
            spec = spec.with_m(self.m);
        }
        spec
    }
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

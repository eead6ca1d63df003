//! Spatial factor multi-species occupancy models.
//!
//! Implements six related joint species distribution models (with or without
//! imperfect detection, spatial autocorrelation and residual species
//! correlations) fit by Pólya-Gamma Gibbs sampling, with Nearest Neighbor
//! Gaussian Process spatial factors, a scenario simulator, diagnostics,
//! model comparison and posterior prediction.

pub mod diagnostics;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod model;
pub mod predict;
pub mod rngmath;
pub mod simulate;
pub mod spatial;

pub use error::{Error, Result};
pub use gibbs::{run_model, GibbsSampler, Stage};
pub use model::{
    collapse_replicates, reorder_species, validate, McmcConfig, ModelSpec, ParamState, PosteriorSamples,
    PriorSpec, SurveyData, ValidationReport, Variant,
};
pub use rngmath::RandomStream;
pub use spatial::{CovFamily, CovarianceSpec, NngpGraph};

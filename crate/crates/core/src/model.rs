//! Survey data, model specifications, sampler state and posterior storage.

use std::fmt;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rngmath::{chol_in_place, inv_logit};
use crate::spatial::{check_matern_nu, CovFamily};

/// One detection-nondetection cell: `None` is a missing replicate.
pub type Detection = Option<u8>;

/// Replicated detection-nondetection survey with site coordinates and
/// occurrence/detection designs.
#[derive(Clone, Debug, PartialEq)]
pub struct SurveyData {
    /// species × site × replicate
    pub y: Array3<Detection>,
    /// site × 2
    pub coords: Array2<f64>,
    /// site × p_occ, leading column of ones
    pub x_occ: Array2<f64>,
    /// site × replicate × p_det, leading column of ones
    pub v_det: Array3<f64>,
    /// replicates surveyed at each site
    pub k: Vec<usize>,
    pub species_names: Vec<String>,
    pub site_names: Vec<String>,
    pub occ_covariate_names: Vec<String>,
    pub det_covariate_names: Vec<String>,
}

impl SurveyData {
    pub fn n_species(&self) -> usize {
        self.y.dim().0
    }

    pub fn n_sites(&self) -> usize {
        self.y.dim().1
    }

    pub fn k_max(&self) -> usize {
        self.y.dim().2
    }

    pub fn p_occ(&self) -> usize {
        self.x_occ.ncols()
    }

    pub fn p_det(&self) -> usize {
        self.v_det.dim().2
    }

    /// Hex SHA-256 over a canonical encoding of every field.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let (n, j, k) = self.y.dim();
        for d in [n, j, k, self.p_occ(), self.p_det()] {
            h.update((d as u64).to_le_bytes());
        }
        for v in self.y.iter() {
            h.update([match v {
                None => 0xff,
                Some(b) => *b,
            }]);
        }
        for arr in [self.coords.iter(), self.x_occ.iter()] {
            for v in arr {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        for v in self.v_det.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        for kk in &self.k {
            h.update((*kk as u64).to_le_bytes());
        }
        for names in [
            &self.species_names,
            &self.site_names,
            &self.occ_covariate_names,
            &self.det_covariate_names,
        ] {
            for s in names {
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Number of replicates of species `i` at site `j` that are not missing.
    pub(crate) fn observed(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, u8)> + '_ {
        (0..self.k[j]).filter_map(move |k| self.y[(i, j, k)].map(|v| (k, v)))
    }

    /// Restricts the data to the given sites (in the order given).
    pub fn select_sites(&self, sites: &[usize]) -> SurveyData {
        SurveyData {
            y: self.y.select(Axis(1), sites),
            coords: self.coords.select(Axis(0), sites),
            x_occ: self.x_occ.select(Axis(0), sites),
            v_det: self.v_det.select(Axis(0), sites),
            k: sites.iter().map(|&s| self.k[s]).collect(),
            species_names: self.species_names.clone(),
            site_names: sites.iter().map(|&s| self.site_names[s].clone()).collect(),
            occ_covariate_names: self.occ_covariate_names.clone(),
            det_covariate_names: self.det_covariate_names.clone(),
        }
    }
}

/// The six candidate models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "lfJSDM")]
    LfJsdm,
    #[serde(rename = "sfJSDM")]
    SfJsdm,
    #[serde(rename = "msPGOcc")]
    MsPgOcc,
    #[serde(rename = "spMsPGOcc")]
    SpMsPgOcc,
    #[serde(rename = "lfMsPGOcc")]
    LfMsPgOcc,
    #[serde(rename = "sfMsPGOcc")]
    SfMsPgOcc,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::LfJsdm,
        Variant::SfJsdm,
        Variant::MsPgOcc,
        Variant::SpMsPgOcc,
        Variant::LfMsPgOcc,
        Variant::SfMsPgOcc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::LfJsdm => "lfJSDM",
            Variant::SfJsdm => "sfJSDM",
            Variant::MsPgOcc => "msPGOcc",
            Variant::SpMsPgOcc => "spMsPGOcc",
            Variant::LfMsPgOcc => "lfMsPGOcc",
            Variant::SfMsPgOcc => "sfMsPGOcc",
        }
    }

    pub fn from_name(name: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == name)
    }

    /// Models imperfect detection (has a detection sub-model and latent z).
    pub fn has_detection(self) -> bool {
        !matches!(self, Variant::LfJsdm | Variant::SfJsdm)
    }

    /// Uses factor loadings and q latent factors.
    pub fn is_factor(self) -> bool {
        matches!(
            self,
            Variant::LfJsdm | Variant::SfJsdm | Variant::LfMsPgOcc | Variant::SfMsPgOcc
        )
    }

    pub fn is_spatial(self) -> bool {
        matches!(self, Variant::SfJsdm | Variant::SpMsPgOcc | Variant::SfMsPgOcc)
    }

    /// Independent spatial process per species.
    pub fn is_species_spatial(self) -> bool {
        self == Variant::SpMsPgOcc
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub var: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

fn default_normal() -> NormalPrior {
    NormalPrior { mean: 0.0, var: 2.72 }
}

fn default_ig() -> InvGammaPrior {
    InvGammaPrior {
        shape: 0.1,
        scale: 0.1,
    }
}

fn default_sigma_sq_ig() -> InvGammaPrior {
    InvGammaPrior {
        shape: 2.0,
        scale: 1.0,
    }
}

/// Hyperpriors. Defaults are vague on the logit scale and overridable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    #[serde(default = "default_normal")]
    pub mu_beta: NormalPrior,
    #[serde(default = "default_normal")]
    pub mu_alpha: NormalPrior,
    #[serde(default = "default_ig")]
    pub tau_sq_beta: InvGammaPrior,
    #[serde(default = "default_ig")]
    pub tau_sq_alpha: InvGammaPrior,
    /// Uniform support for spatial decay; `None` uses (3/d_max, 3/d_min).
    #[serde(default)]
    pub phi_bounds: Option<(f64, f64)>,
    /// Species spatial variances (spMsPGOcc only).
    #[serde(default = "default_sigma_sq_ig")]
    pub sigma_sq: InvGammaPrior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            mu_beta: default_normal(),
            mu_alpha: default_normal(),
            tau_sq_beta: default_ig(),
            tau_sq_alpha: default_ig(),
            phi_bounds: None,
            sigma_sq: default_sigma_sq_ig(),
        }
    }
}

impl PriorSpec {
    pub fn check(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, p) in [("mu_beta", self.mu_beta), ("mu_alpha", self.mu_alpha)] {
            if !(p.var > 0.0 && p.var.is_finite() && p.mean.is_finite()) {
                errs.push(format!("{name} prior needs finite mean and positive variance"));
            }
        }
        for (name, p) in [
            ("tau_sq_beta", self.tau_sq_beta),
            ("tau_sq_alpha", self.tau_sq_alpha),
            ("sigma_sq", self.sigma_sq),
        ] {
            if !(p.shape > 0.0 && p.scale > 0.0) {
                errs.push(format!("{name} inverse-gamma shape and scale must be positive"));
            }
        }
        if let Some((a, b)) = self.phi_bounds {
            if !(a > 0.0 && a < b && b.is_finite()) {
                errs.push(format!("phi bounds must satisfy 0 < a < b, got ({a}, {b})"));
            }
        }
        errs
    }

    /// Uniform support for phi, derived from extreme inter-site distances if
    /// not set explicitly.
    pub fn phi_support(&self, coords: &Array2<f64>) -> Result<(f64, f64)> {
        if let Some(b) = self.phi_bounds {
            return Ok(b);
        }
        let (dmin, dmax) = distance_range(coords)
            .ok_or_else(|| Error::invalid("need two distinct sites to derive phi bounds"))?;
        if dmax <= dmin {
            return Ok((3.0 / dmax * 0.5, 3.0 / dmin * 2.0));
        }
        Ok((3.0 / dmax, 3.0 / dmin))
    }
}

/// Smallest and largest non-zero inter-site distance.
pub fn distance_range(coords: &Array2<f64>) -> Option<(f64, f64)> {
    let n = coords.nrows();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for a in 0..n {
        for b in 0..a {
            let d = ((coords[(a, 0)] - coords[(b, 0)]).powi(2) + (coords[(a, 1)] - coords[(b, 1)]).powi(2)).sqrt();
            if d > 0.0 {
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
    }
    (hi > 0.0).then_some((lo, hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    #[serde(default)]
    pub q: Option<usize>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub cov_family: Option<CovFamily>,
    /// Matérn smoothness (0.5, 1.5 or 2.5), only with `cov_family = matern`.
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub priors: PriorSpec,
}

impl ModelSpec {
    /// Spec with default priors; spatial variants get m = 15 and an
    /// exponential covariance, factor variants need `with_q`.
    pub fn new(variant: Variant) -> Self {
        let spatial = variant.is_spatial();
        Self {
            variant,
            q: None,
            m: spatial.then_some(15),
            cov_family: spatial.then_some(CovFamily::Exponential),
            nu: None,
            priors: PriorSpec::default(),
        }
    }

    pub fn with_q(mut self, q: usize) -> Self {
        self.q = Some(q);
        self
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = Some(m);
        self
    }

    pub fn with_priors(mut self, priors: PriorSpec) -> Self {
        self.priors = priors;
        self
    }

    /// Number of latent processes: q for factor variants, N for spMsPGOcc.
    pub fn n_processes(&self, n_species: usize) -> usize {
        if self.variant.is_factor() {
            self.q.unwrap_or(0)
        } else if self.variant.is_species_spatial() {
            n_species
        } else {
            0
        }
    }

    pub fn check(&self, n_species: usize) -> Vec<String> {
        let mut errs = Vec::new();
        let v = self.variant;
        match (v.is_factor(), self.q) {
            (true, None) => errs.push(format!("{v} requires a factor count q")),
            (true, Some(q)) if q < 1 || q > n_species => {
                errs.push(format!("{v}: q = {q} must lie in 1..={n_species}"))
            }
            (false, Some(_)) => errs.push(format!("{v} is not a factor model; q must be absent")),
            _ => {}
        }
        if v.is_spatial() {
            match self.m {
                None => errs.push(format!("{v} requires a neighbor count m")),
                Some(0) => errs.push("neighbor count m must be at least 1".into()),
                _ => {}
            }
            match self.cov_family {
                None => errs.push(format!("{v} requires cov_family")),
                Some(CovFamily::Matern) => {
                    if let Err(e) = check_matern_nu(self.nu) {
                        errs.push(e.to_string());
                    }
                }
                Some(_) => {}
            }
        } else if self.m.is_some() || self.cov_family.is_some() {
            errs.push(format!("{v} is not spatial; m and cov_family must be absent"));
        }
        errs.extend(self.priors.check());
        errs
    }
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
pub struct McmcConfig {
    pub n_chains: usize,
    pub n_iterations: usize,
    pub n_burn: usize,
    pub n_thin: usize,
    pub seed: u64,
    /// Iterations per adaptation batch for the phi Metropolis scale.
    #[serde(default = "default_batch")]
    pub adapt_batch: usize,
    #[serde(default = "default_target")]
    pub accept_target: f64,
    /// Initial random-walk sd on the logit-phi scale.
    #[serde(default = "default_tuning")]
    pub phi_tuning: f64,
}

impl McmcConfig {
    pub fn new(n_chains: usize, n_iterations: usize, n_burn: usize, n_thin: usize, seed: u64) -> Self {
        Self {
            n_chains,
            n_iterations,
            n_burn,
            n_thin,
            seed,
            adapt_batch: default_batch(),
            accept_target: default_target(),
            phi_tuning: default_tuning(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::invalid("n_chains must be at least 1"));
        }
        if self.n_burn >= self.n_iterations {
            return Err(Error::invalid(format!(
                "n_burn ({}) must be smaller than n_iterations ({})",
                self.n_burn, self.n_iterations
            )));
        }
        if self.n_thin == 0 {
            return Err(Error::invalid("n_thin must be at least 1"));
        }
        if self.n_retained() == 0 {
            return Err(Error::invalid("configuration retains no draws"));
        }
        if self.adapt_batch == 0 || !(self.accept_target > 0.0 && self.accept_target < 1.0) {
            return Err(Error::invalid("adaptation settings out of range"));
        }
        if !(self.phi_tuning > 0.0) {
            return Err(Error::invalid("phi_tuning must be positive"));
        }
        Ok(())
    }

    /// Draws kept per chain.
    pub fn n_retained(&self) -> usize {
        self.n_iterations.saturating_sub(self.n_burn) / self.n_thin.max(1)
    }

    /// Whether 1-based iteration `it` is retained.
    pub fn keeps(&self, it: usize) -> bool {
        it > self.n_burn && (it - self.n_burn).is_multiple_of(self.n_thin)
    }
}

/// One full Gibbs state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamState {
    /// species × p_occ
    pub beta: Array2<f64>,
    /// species × p_det (detection variants)
    pub alpha: Option<Array2<f64>>,
    pub mu_beta: Vec<f64>,
    pub tau_sq_beta: Vec<f64>,
    pub mu_alpha: Vec<f64>,
    pub tau_sq_alpha: Vec<f64>,
    /// species × q (factor variants)
    pub lambda: Option<Array2<f64>>,
    /// process × site: q factors, or N species processes for spMsPGOcc
    pub w: Option<Array2<f64>>,
    /// species × site latent occurrence (the collapsed response for JSDMs)
    pub z: Array2<u8>,
    pub omega_occ: Array2<f64>,
    /// species × site × replicate; NaN where undefined
    pub omega_det: Array3<f64>,
    pub phi: Vec<f64>,
    pub sigma_sq: Vec<f64>,
}

/// Thinned post-burn-in draws from one chain. Leading axis indexes draws.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSamples {
    pub beta: Array3<f64>,
    pub alpha: Option<Array3<f64>>,
    pub mu_beta: Array2<f64>,
    pub tau_sq_beta: Array2<f64>,
    pub mu_alpha: Option<Array2<f64>>,
    pub tau_sq_alpha: Option<Array2<f64>>,
    pub lambda: Option<Array3<f64>>,
    pub w: Option<Array3<f64>>,
    /// Not kept for JSDM variants, nor when loaded from a posterior store.
    pub z: Option<Array3<u8>>,
    pub phi: Option<Array2<f64>>,
    pub sigma_sq: Option<Array2<f64>>,
    /// Occurrence probabilities, draw × species × site.
    pub psi: Array3<f64>,
    /// Post-burn-in Metropolis acceptance rate per spatial process.
    pub phi_acceptance: Vec<f64>,
    /// Final random-walk scale per spatial process.
    pub phi_tuning: Vec<f64>,
}

impl ChainSamples {
    pub fn n_draws(&self) -> usize {
        self.beta.dim().0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    pub spec: ModelSpec,
    pub mcmc: McmcConfig,
    pub data_digest: String,
    /// Training-site coordinates (needed for spatial prediction).
    pub coords: Array2<f64>,
    /// Training occurrence design, site × p_occ.
    pub x_occ: Array2<f64>,
    pub species_names: Vec<String>,
    pub site_names: Vec<String>,
    pub occ_covariate_names: Vec<String>,
    pub det_covariate_names: Vec<String>,
    pub chains: Vec<ChainSamples>,
    /// Posterior mean of z (species × site), occupancy variants only.
    pub z_mean: Option<Array2<f64>>,
}

impl PosteriorSamples {
    pub fn n_species(&self) -> usize {
        self.species_names.len()
    }

    pub fn n_sites(&self) -> usize {
        self.site_names.len()
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.n_draws()).sum()
    }

    /// Iterates over `(chain, draw)` pairs in storage order.
    pub fn draw_index(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.chains
            .iter()
            .enumerate()
            .flat_map(|(c, ch)| (0..ch.n_draws()).map(move |d| (c, d)))
    }

    /// Posterior mean occurrence probability, species × site.
    pub fn psi_mean(&self) -> Array2<f64> {
        let (_, n, j) = self.chains[0].psi.dim();
        let mut acc = Array2::zeros((n, j));
        for ch in &self.chains {
            acc += &ch.psi.sum_axis(Axis(0));
        }
        acc / self.total_draws() as f64
    }

    /// Pools a per-chain block across chains along the draw axis.
    pub fn pooled<F>(&self, get: F) -> Option<Array3<f64>>
    where
        F: Fn(&ChainSamples) -> Option<&Array3<f64>>,
    {
        let views: Option<Vec<_>> = self.chains.iter().map(|c| get(c).map(|a| a.view())).collect();
        views.and_then(|v| ndarray::concatenate(Axis(0), &v).ok())
    }
}

/// Occurrence probabilities (species × site) from one set of coefficients
/// and, when present, loadings with factors or species-specific effects.
pub fn occurrence_probabilities(
    x_occ: ArrayView2<f64>,
    beta: ArrayView2<f64>,
    lambda: Option<ArrayView2<f64>>,
    w: Option<ArrayView2<f64>>,
) -> Array2<f64> {
    let (n, j) = (beta.nrows(), x_occ.nrows());
    Array2::from_shape_fn((n, j), |(i, s)| {
        let fixed: f64 = x_occ.row(s).iter().zip(beta.row(i).iter()).map(|(a, b)| a * b).sum();
        let latent = match (lambda, w) {
            (Some(l), Some(w)) => (0..l.ncols()).map(|r| l[(i, r)] * w[(r, s)]).sum(),
            (None, Some(w)) => w[(i, s)],
            _ => 0.0,
        };
        inv_logit(fixed + latent)
    })
}

/// Errors and warnings found by [`validate`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn into_result(self) -> Result<ValidationReport> {
        if self.is_ok() {
            Ok(self)
        } else {
            Err(Error::Validation(self))
        }
    }
}

fn full_column_rank(rows: &[&[f64]], p: usize) -> bool {
    if p == 0 {
        return true;
    }
    let mut g = vec![0.0; p * p];
    for r in rows {
        for a in 0..p {
            for b in 0..=a {
                g[a * p + b] += r[a] * r[b];
            }
        }
    }
    chol_in_place(&mut g, p).is_ok()
}

/// Checks data/spec invariants without mutating either.
pub fn validate(data: &SurveyData, spec: &ModelSpec) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let (n, j, kmax) = data.y.dim();
    let errs = &mut rep.errors;

    if n == 0 || j == 0 || kmax == 0 {
        errs.push(format!("detection array must be non-empty, got {n}x{j}x{kmax}"));
        return rep;
    }
    if data.coords.dim() != (j, 2) {
        errs.push(format!("coords must be {j}x2, got {:?}", data.coords.dim()));
    }
    if data.x_occ.nrows() != j || data.x_occ.ncols() == 0 {
        errs.push(format!("occurrence design must have {j} rows and >= 1 column"));
    }
    let (vj, vk, vp) = data.v_det.dim();
    if vj != j || vk != kmax || vp == 0 {
        errs.push(format!(
            "detection design must be {j}x{kmax}xp with p >= 1, got {vj}x{vk}x{vp}"
        ));
    }
    if data.k.len() != j {
        errs.push(format!("replicate counts must have length {j}"));
    }
    if data.species_names.len() != n {
        errs.push(format!("expected {n} species names"));
    }
    if data.site_names.len() != j {
        errs.push(format!("expected {j} site names"));
    }
    if data.occ_covariate_names.len() != data.x_occ.ncols() || data.det_covariate_names.len() != vp {
        errs.push("covariate name counts do not match design widths".into());
    }
    if !errs.is_empty() {
        return rep;
    }

    for (s, &kj) in data.k.iter().enumerate() {
        if kj == 0 || kj > kmax {
            errs.push(format!("site {s}: replicate count {kj} outside 1..={kmax}"));
        }
    }
    for ((i, s, k), v) in data.y.indexed_iter() {
        match v {
            Some(b) if *b > 1 => errs.push(format!(
                "y has invalid value {b} at (species {i}, site {s}, replicate {k})"
            )),
            Some(_) if k >= data.k[s] => errs.push(format!(
                "y observed beyond K_j at (species {i}, site {s}, replicate {k})"
            )),
            _ => {}
        }
    }
    for s in 0..j {
        if (0..n).all(|i| (0..kmax).all(|k| data.y[(i, s, k)].is_none())) {
            errs.push(format!("site {s} has no observed replicates for any species"));
        }
    }
    if data.coords.iter().any(|v| !v.is_finite()) {
        errs.push("coordinates must be finite".into());
    }

    if data.x_occ.iter().any(|v| !v.is_finite()) {
        errs.push("occurrence design has non-finite values".into());
    } else {
        if data.x_occ.column(0).iter().any(|&v| v != 1.0) {
            errs.push("occurrence design must start with an intercept column of ones".into());
        }
        let rows: Vec<Vec<f64>> = data.x_occ.rows().into_iter().map(|r| r.to_vec()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        if !full_column_rank(&refs, data.p_occ()) {
            errs.push("occurrence design is rank deficient".into());
        }
    }
    let mut det_rows = Vec::new();
    let mut det_ok = true;
    for s in 0..j {
        for k in 0..data.k[s].min(kmax) {
            let row: Vec<f64> = (0..vp).map(|t| data.v_det[(s, k, t)]).collect();
            if row.iter().any(|v| !v.is_finite()) {
                det_ok = false;
                errs.push(format!("detection design non-finite at (site {s}, replicate {k})"));
            } else if row[0] != 1.0 {
                det_ok = false;
                errs.push(format!("detection intercept must be 1 at (site {s}, replicate {k})"));
            }
            det_rows.push(row);
        }
    }
    if det_ok && spec.variant.has_detection() {
        let refs: Vec<&[f64]> = det_rows.iter().map(|r| r.as_slice()).collect();
        if !full_column_rank(&refs, vp) {
            errs.push("detection design is rank deficient".into());
        }
    }

    errs.extend(spec.check(n));

    // duplicate coordinates
    let mut idx: Vec<usize> = (0..j).collect();
    idx.sort_by(|&a, &b| {
        data.coords[(a, 0)]
            .total_cmp(&data.coords[(b, 0)])
            .then(data.coords[(a, 1)].total_cmp(&data.coords[(b, 1)]))
    });
    for w in idx.windows(2) {
        if data.coords[(w[0], 0)] == data.coords[(w[1], 0)] && data.coords[(w[0], 1)] == data.coords[(w[1], 1)] {
            let msg = format!("sites {} and {} share coordinates", w[0].min(w[1]), w[0].max(w[1]));
            if spec.variant.is_spatial() {
                rep.errors.push(msg);
            } else {
                rep.warnings.push(msg);
            }
        }
    }

    for i in 0..n {
        let seen = (0..j).any(|s| (0..kmax).any(|k| data.y[(i, s, k)] == Some(1)));
        if !seen {
            rep.warnings.push(format!("species {} ({}) is never detected", i, data.species_names[i]));
        }
    }
    rep
}

/// `y*_i(s_j) = 1` iff any non-missing replicate is a detection.
pub fn collapse_replicates(data: &SurveyData) -> Result<Array2<u8>> {
    let (n, j, kmax) = data.y.dim();
    let mut out = Array2::zeros((n, j));
    for s in 0..j {
        let mut any_obs = false;
        for i in 0..n {
            for k in 0..kmax {
                if let Some(v) = data.y[(i, s, k)] {
                    any_obs = true;
                    if v > 0 {
                        out[(i, s)] = 1;
                    }
                }
            }
        }
        if !any_obs {
            return Err(Error::invalid(format!("site {s} has every replicate missing")));
        }
    }
    Ok(out)
}

/// Permutes the species axis; `order[new] = old`.
pub fn reorder_species(data: &SurveyData, order: &[usize]) -> Result<SurveyData> {
    let n = data.n_species();
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&o| o >= n || std::mem::replace(&mut seen[o], true)) {
        return Err(Error::invalid(format!("order must be a permutation of 0..{n}")));
    }
    let mut out = data.clone();
    out.y = data.y.select(Axis(0), order);
    out.species_names = order.iter().map(|&o| data.species_names[o].clone()).collect();
    Ok(out)
}

/// Species sorted by descending number of sites with at least one detection
/// (ties keep input order). Placing a common species first helps the
/// loadings constraints.
pub fn order_by_detection_frequency(data: &SurveyData) -> Vec<usize> {
    let (n, j, kmax) = data.y.dim();
    let counts: Vec<usize> = (0..n)
        .map(|i| {
            (0..j)
                .filter(|&s| (0..kmax).any(|k| data.y[(i, s, k)] == Some(1)))
                .count()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn tiny() -> SurveyData {
        let y = Array3::from_shape_vec(
            (2, 3, 3),
            vec![
                Some(0), Some(0), Some(0), Some(0), Some(1), None, Some(1), Some(1), Some(0), //
                Some(1), Some(0), Some(0), Some(0), Some(0), None, Some(0), Some(0), Some(0),
            ],
        )
        .unwrap();
        SurveyData {
            y,
            coords: array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            x_occ: array![[1.0, -0.5], [1.0, 0.2], [1.0, 1.1]],
            v_det: Array3::from_shape_fn((3, 3, 1), |_| 1.0),
            k: vec![3, 2, 3],
            species_names: vec!["a".into(), "b".into()],
            site_names: vec!["s0".into(), "s1".into(), "s2".into()],
            occ_covariate_names: vec!["(Intercept)".into(), "x1".into()],
            det_covariate_names: vec!["(Intercept)".into()],
        }
    }

    #[test]
    fn collapse_rows() {
        let y = collapse_replicates(&tiny()).unwrap();
        assert_eq!(y, array![[0, 1, 1], [1, 0, 0]]);
    }

    #[test]
    fn collapse_rejects_all_missing_site() {
        let mut d = tiny();
        for i in 0..2 {
            for k in 0..3 {
                d.y[(i, 1, k)] = None;
            }
        }
        assert!(collapse_replicates(&d).is_err());
    }

    #[test]
    fn validate_flags_bad_value() {
        let mut d = tiny();
        d.y[(1, 2, 0)] = Some(2);
        let rep = validate(&d, &ModelSpec::new(Variant::MsPgOcc));
        assert_eq!(rep.errors.len(), 1);
        assert!(rep.errors[0].contains("species 1, site 2, replicate 0"));
    }

    #[test]
    fn duplicate_coords_error_only_when_spatial() {
        let mut d = tiny();
        d.coords = array![[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        let sp = validate(&d, &ModelSpec::new(Variant::SfMsPgOcc).with_q(1));
        assert!(sp.errors.iter().any(|e| e.contains("share coordinates")));
        let ns = validate(&d, &ModelSpec::new(Variant::MsPgOcc));
        assert!(ns.is_ok(), "{:?}", ns.errors);
        assert!(ns.warnings.iter().any(|e| e.contains("share coordinates")));
    }

    #[test]
    fn validate_spec_invariants() {
        let d = tiny();
        assert!(!validate(&d, &ModelSpec::new(Variant::SfMsPgOcc)).is_ok());
        assert!(!validate(&d, &ModelSpec::new(Variant::SfMsPgOcc).with_q(3)).is_ok());
        assert!(!validate(&d, &ModelSpec::new(Variant::MsPgOcc).with_q(1)).is_ok());
        assert!(!validate(&d, &ModelSpec::new(Variant::MsPgOcc).with_m(5)).is_ok());
        assert!(validate(&d, &ModelSpec::new(Variant::LfJsdm).with_q(2)).is_ok());
    }

    #[test]
    fn validate_is_pure() {
        let d = tiny();
        let spec = ModelSpec::new(Variant::MsPgOcc);
        let a = validate(&d, &spec);
        let b = validate(&d, &spec);
        assert_eq!(a, b);
        assert_eq!(d, tiny());
    }

    #[test]
    fn reorder_round_trip_and_errors() {
        let d = tiny();
        assert_eq!(reorder_species(&d, &[0, 1]).unwrap(), d);
        let s = reorder_species(&d, &[1, 0]).unwrap();
        assert_eq!(s.species_names, vec!["b", "a"]);
        assert_eq!(reorder_species(&s, &[1, 0]).unwrap(), d);
        assert!(reorder_species(&d, &[0, 0]).is_err());
        assert!(reorder_species(&d, &[0]).is_err());
    }

    #[test]
    fn detection_frequency_order() {
        let d = tiny();
        assert_eq!(order_by_detection_frequency(&d), vec![0, 1]);
        let r = reorder_species(&d, &[1, 0]).unwrap();
        let o = order_by_detection_frequency(&r);
        assert_eq!(reorder_species(&r, &o).unwrap().species_names[0], "a");
    }

    #[test]
    fn retained_count() {
        let c = McmcConfig::new(3, 15_000, 10_000, 5, 1);
        assert_eq!(c.n_retained(), 1000);
        assert_eq!((1..=15_000).filter(|&i| c.keeps(i)).count(), 1000);
        assert!(McmcConfig::new(1, 10, 10, 1, 1).check().is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::from_name(v.name()), Some(v));
            let js = serde_json::to_string(&v).unwrap();
            assert_eq!(js, format!("\"{}\"", v.name()));
        }
    }
}

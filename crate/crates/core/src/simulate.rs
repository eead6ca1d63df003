//! Forward simulation of detection-nondetection data with ground truth.
//!
//! [`simulate_scenario`] reproduces the six simulation designs (10 species,
//! 225 sites on a 15×15 unit-square grid, 3 replicates, 15 occurrence
//! covariates); [`simulate_custom`] exposes the same forward model with
//! user-supplied values.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SurveyData;
use crate::rngmath::{chol_in_place, inv_logit, RandomStream};
use crate::spatial::{covariance_matrix, CovFamily, CovarianceSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteLayout {
    /// `side × side` cell centres on the unit square.
    Grid { side: usize },
    /// Uniform random sites on the unit square.
    Random { n: usize },
    Coords(Vec<[f64; 2]>),
}

/// Species coefficients: drawn from a community distribution or fixed.
/// Column 0 is the intercept; the number of covariates is `len - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefSpec {
    Community { mean: Vec<f64>, var: Vec<f64> },
    /// species × coefficient
    Fixed(Vec<Vec<f64>>),
}

impl CoefSpec {
    fn width(&self) -> usize {
        match self {
            CoefSpec::Community { mean, .. } => mean.len(),
            CoefSpec::Fixed(rows) => rows.first().map_or(0, |r| r.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionSpec {
    /// Same detection probability everywhere; detection design is intercept-only.
    Constant { p: f64 },
    Covariates(CoefSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGen {
    pub family: CovFamily,
    /// one decay per process
    pub phi: Vec<f64>,
    #[serde(default)]
    pub nu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSpec {
    None,
    /// `q` factors; loadings drawn N(0, 1) below the unit diagonal unless
    /// supplied. Non-spatial factors are iid N(0, 1).
    Factor {
        q: usize,
        #[serde(default)]
        loadings: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        spatial: Option<SpatialGen>,
    },
    /// Independent spatial process per species.
    SpeciesSpatial { spatial: SpatialGen, sigma_sq: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomConfig {
    pub n_species: usize,
    pub sites: SiteLayout,
    /// Replicates per site (K_max).
    pub replicates: usize,
    /// Optional per-site replicate counts (each in 1..=replicates).
    #[serde(default)]
    pub replicates_per_site: Option<Vec<usize>>,
    pub occurrence: CoefSpec,
    pub detection: DetectionSpec,
    pub latent: LatentSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommunityTruth {
    pub mu_beta: Vec<f64>,
    pub tau_sq_beta: Vec<f64>,
    #[serde(default)]
    pub mu_alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub tau_sq_alpha: Option<Vec<f64>>,
}

/// Generating values for a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub scenario: Option<u8>,
    pub seed: u64,
    /// species × site
    pub psi_true: Array2<f64>,
    pub z_true: Array2<u8>,
    pub beta_true: Array2<f64>,
    pub alpha_true: Option<Array2<f64>>,
    pub detection_constant: Option<f64>,
    pub lambda_true: Option<Array2<f64>>,
    /// process × site
    pub w_true: Option<Array2<f64>>,
    pub phi_true: Option<Vec<f64>>,
    pub sigma_sq_true: Option<Vec<f64>>,
    pub community_true: Option<CommunityTruth>,
}

pub const SCENARIO_SPECIES: usize = 10;
pub const SCENARIO_GRID_SIDE: usize = 15;
pub const SCENARIO_REPLICATES: usize = 3;
pub const SCENARIO_OCC_COVARIATES: usize = 15;
pub const SCENARIO_DET_COVARIATES: usize = 5;
pub const SCENARIO_FACTORS: usize = 3;
/// Decay range giving effective ranges (3/phi) between 0.1 and 0.8.
pub const SCENARIO_PHI_RANGE: (f64, f64) = (3.0 / 0.8, 3.0 / 0.1);

/// Generating design of one of the six simulation scenarios, with community
/// hypervalues drawn from `stream`.
pub fn scenario_config(id: u8, stream: &mut RandomStream) -> Result<CustomConfig> {
    if !(1..=6).contains(&id) {
        return Err(Error::invalid(format!("scenario id must be 1..=6, got {id}")));
    }
    let draw_community = |stream: &mut RandomStream, int_mean: f64, int_var: f64, n_cov: usize| {
        let mut mean = vec![int_mean];
        let mut var = vec![int_var];
        for _ in 0..n_cov {
            mean.push(stream.uniform_range(-1.0, 1.0));
            var.push(stream.uniform_range(0.0, 2.0));
        }
        CoefSpec::Community { mean, var }
    };
    let occurrence = draw_community(stream, 0.2, 1.5, SCENARIO_OCC_COVARIATES);
    let detection = if id <= 2 {
        DetectionSpec::Constant { p: 0.8 }
    } else {
        DetectionSpec::Covariates(draw_community(stream, 0.0, 0.2, SCENARIO_DET_COVARIATES))
    };
    let spatial_phi = |stream: &mut RandomStream, n: usize| {
        (0..n)
            .map(|_| stream.uniform_range(SCENARIO_PHI_RANGE.0, SCENARIO_PHI_RANGE.1))
            .collect::<Vec<_>>()
    };
    let latent = match id {
        1 | 5 => LatentSpec::Factor {
            q: SCENARIO_FACTORS,
            loadings: None,
            spatial: None,
        },
        2 | 6 => LatentSpec::Factor {
            q: SCENARIO_FACTORS,
            loadings: None,
            spatial: Some(SpatialGen {
                family: CovFamily::Exponential,
                phi: spatial_phi(stream, SCENARIO_FACTORS),
                nu: None,
            }),
        },
        3 => LatentSpec::None,
        _ => {
            let sigma_sq = (0..SCENARIO_SPECIES).map(|_| stream.uniform_range(0.5, 2.0)).collect();
            LatentSpec::SpeciesSpatial {
                spatial: SpatialGen {
                    family: CovFamily::Exponential,
                    phi: spatial_phi(stream, SCENARIO_SPECIES),
                    nu: None,
                },
                sigma_sq,
            }
        }
    };
    Ok(CustomConfig {
        n_species: SCENARIO_SPECIES,
        sites: SiteLayout::Grid {
            side: SCENARIO_GRID_SIDE,
        },
        replicates: SCENARIO_REPLICATES,
        replicates_per_site: None,
        occurrence,
        detection,
        latent,
    })
}

/// Simulates scenario `id` (1..=6). Deterministic in `(id, seed)`.
pub fn simulate_scenario(id: u8, seed: u64) -> Result<(SurveyData, ScenarioTruth)> {
    let mut stream = RandomStream::new(seed, id as u64);
    let cfg = scenario_config(id, &mut stream)?;
    let (data, mut truth) = generate(&cfg, &mut stream, seed)?;
    truth.scenario = Some(id);
    Ok((data, truth))
}

/// Simulates from a user-supplied design. Deterministic in `(cfg, seed)`.
pub fn simulate_custom(cfg: &CustomConfig, seed: u64) -> Result<(SurveyData, ScenarioTruth)> {
    let mut stream = RandomStream::new(seed, 0);
    generate(cfg, &mut stream, seed)
}

fn check_config(cfg: &CustomConfig) -> Result<()> {
    let n = cfg.n_species;
    if n == 0 || cfg.replicates == 0 {
        return Err(Error::invalid("n_species and replicates must be at least 1"));
    }
    let check_coef = |c: &CoefSpec, what: &str| -> Result<()> {
        match c {
            CoefSpec::Community { mean, var } => {
                if mean.is_empty() || mean.len() != var.len() {
                    return Err(Error::invalid(format!("{what}: mean and var need equal non-zero length")));
                }
                if mean.iter().chain(var).any(|v| !v.is_finite()) || var.iter().any(|v| *v < 0.0) {
                    return Err(Error::invalid(format!("{what}: values must be finite, variances >= 0")));
                }
            }
            CoefSpec::Fixed(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.is_empty() || r.len() != rows[0].len()) {
                    return Err(Error::invalid(format!("{what}: need {n} equal-length rows")));
                }
                if rows.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("{what}: values must be finite")));
                }
            }
        }
        Ok(())
    };
    check_coef(&cfg.occurrence, "occurrence")?;
    match &cfg.detection {
        DetectionSpec::Constant { p } if !(*p >= 0.0 && *p <= 1.0) => {
            return Err(Error::invalid(format!("constant detection {p} outside [0, 1]")))
        }
        DetectionSpec::Covariates(c) => check_coef(c, "detection")?,
        _ => {}
    }
    if let Some(k) = &cfg.replicates_per_site {
        if k.iter().any(|&v| v == 0 || v > cfg.replicates) {
            return Err(Error::invalid("replicates_per_site entries must lie in 1..=replicates"));
        }
    }
    match &cfg.latent {
        LatentSpec::None => {}
        LatentSpec::Factor { q, loadings, spatial } => {
            if *q == 0 || *q > n {
                return Err(Error::invalid(format!("factor count {q} must lie in 1..={n}")));
            }
            if let Some(l) = loadings {
                if l.len() != n || l.iter().any(|r| r.len() != *q) {
                    return Err(Error::invalid(format!("loadings must be {n}x{q}")));
                }
            }
            if let Some(sp) = spatial {
                if sp.phi.len() != *q {
                    return Err(Error::invalid(format!("need {q} phi values")));
                }
            }
        }
        LatentSpec::SpeciesSpatial { spatial, sigma_sq } => {
            if spatial.phi.len() != n || sigma_sq.len() != n {
                return Err(Error::invalid(format!("need {n} phi and sigma_sq values")));
            }
        }
    }
    Ok(())
}

fn layout_coords(layout: &SiteLayout, stream: &mut RandomStream) -> Result<Array2<f64>> {
    match layout {
        SiteLayout::Grid { side } => {
            if *side == 0 {
                return Err(Error::invalid("grid side must be at least 1"));
            }
            let s = *side as f64;
            Ok(Array2::from_shape_fn((side * side, 2), |(idx, c)| {
                let cell = if c == 0 { idx % side } else { idx / side };
                (cell as f64 + 0.5) / s
            }))
        }
        SiteLayout::Random { n } => {
            if *n == 0 {
                return Err(Error::invalid("need at least one site"));
            }
            Ok(Array2::from_shape_fn((*n, 2), |_| stream.uniform()))
        }
        SiteLayout::Coords(pts) => {
            if pts.is_empty() || pts.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid("coordinates must be non-empty and finite"));
            }
            Ok(Array2::from_shape_fn((pts.len(), 2), |(i, c)| pts[i][c]))
        }
    }
}

fn draw_coefs(spec: &CoefSpec, n: usize, stream: &mut RandomStream) -> Array2<f64> {
    match spec {
        CoefSpec::Community { mean, var } => {
            Array2::from_shape_fn((n, mean.len()), |(_, t)| mean[t] + var[t].sqrt() * stream.normal())
        }
        CoefSpec::Fixed(rows) => Array2::from_shape_fn((n, rows[0].len()), |(i, t)| rows[i][t]),
    }
}

/// Draws `procs` independent zero-mean Gaussian processes over `coords`.
fn draw_gp(coords: &Array2<f64>, specs: &[CovarianceSpec], stream: &mut RandomStream) -> Result<Array2<f64>> {
    let j = coords.nrows();
    let mut out = Array2::zeros((specs.len(), j));
    for (r, spec) in specs.iter().enumerate() {
        spec.check()?;
        let mut c: Vec<f64> = covariance_matrix(coords.view(), spec).into_iter().collect();
        chol_in_place(&mut c, j)?;
        let eps: Vec<f64> = (0..j).map(|_| stream.normal()).collect();
        for a in 0..j {
            out[(r, a)] = (0..=a).map(|b| c[a * j + b] * eps[b]).sum();
        }
    }
    Ok(out)
}

fn generate(cfg: &CustomConfig, stream: &mut RandomStream, seed: u64) -> Result<(SurveyData, ScenarioTruth)> {
    check_config(cfg)?;
    let n = cfg.n_species;
    let coords = layout_coords(&cfg.sites, stream)?;
    let j = coords.nrows();
    let kmax = cfg.replicates;
    let k: Vec<usize> = match &cfg.replicates_per_site {
        Some(v) if v.len() != j => {
            return Err(Error::invalid(format!("replicates_per_site needs {j} entries")))
        }
        Some(v) => v.clone(),
        None => vec![kmax; j],
    };

    let p_occ = cfg.occurrence.width();
    let x_occ = Array2::from_shape_fn((j, p_occ), |(_, t)| if t == 0 { 1.0 } else { stream.normal() });
    let p_det = match &cfg.detection {
        DetectionSpec::Constant { .. } => 1,
        DetectionSpec::Covariates(c) => c.width(),
    };
    let v_det = Array3::from_shape_fn((j, kmax, p_det), |(s, kk, t)| {
        if kk >= k[s] {
            f64::NAN
        } else if t == 0 {
            1.0
        } else {
            stream.normal()
        }
    });

    let beta = draw_coefs(&cfg.occurrence, n, stream);
    let alpha = match &cfg.detection {
        DetectionSpec::Covariates(c) => Some(draw_coefs(c, n, stream)),
        DetectionSpec::Constant { .. } => None,
    };

    let (lambda, w, phi, sigma_sq) = match &cfg.latent {
        LatentSpec::None => (None, None, None, None),
        LatentSpec::Factor { q, loadings, spatial } => {
            let q = *q;
            let lambda = match loadings {
                Some(l) => Array2::from_shape_fn((n, q), |(i, r)| l[i][r]),
                None => Array2::from_shape_fn((n, q), |(i, r)| {
                    if i == r {
                        1.0
                    } else if r < i {
                        stream.normal()
                    } else {
                        0.0
                    }
                }),
            };
            let (w, phi) = match spatial {
                Some(sp) => {
                    let specs = sp
                        .phi
                        .iter()
                        .map(|&ph| CovarianceSpec::new(sp.family, ph, 1.0, sp.nu))
                        .collect::<Result<Vec<_>>>()?;
                    (draw_gp(&coords, &specs, stream)?, Some(sp.phi.clone()))
                }
                None => (Array2::from_shape_fn((q, j), |_| stream.normal()), None),
            };
            (Some(lambda), Some(w), phi, None)
        }
        LatentSpec::SpeciesSpatial { spatial, sigma_sq } => {
            let specs = spatial
                .phi
                .iter()
                .zip(sigma_sq)
                .map(|(&ph, &s2)| CovarianceSpec::new(spatial.family, ph, s2, spatial.nu))
                .collect::<Result<Vec<_>>>()?;
            let w = draw_gp(&coords, &specs, stream)?;
            (None, Some(w), Some(spatial.phi.clone()), Some(sigma_sq.clone()))
        }
    };

    let psi = Array2::from_shape_fn((n, j), |(i, s)| {
        let mut eta: f64 = (0..p_occ).map(|t| x_occ[(s, t)] * beta[(i, t)]).sum();
        match (&lambda, &w) {
            (Some(l), Some(w)) => eta += (0..l.ncols()).map(|r| l[(i, r)] * w[(r, s)]).sum::<f64>(),
            (None, Some(w)) => eta += w[(i, s)],
            _ => {}
        }
        inv_logit(eta)
    });
    let z = Array2::from_shape_fn((n, j), |(i, s)| u8::from(stream.uniform() < psi[(i, s)]));
    let det_const = match cfg.detection {
        DetectionSpec::Constant { p } => Some(p),
        _ => None,
    };
    let y = Array3::from_shape_fn((n, j, kmax), |(i, s, kk)| {
        if kk >= k[s] {
            return None;
        }
        let pi = match (&alpha, det_const) {
            (Some(a), _) => inv_logit((0..p_det).map(|t| v_det[(s, kk, t)] * a[(i, t)]).sum()),
            (None, Some(p)) => p,
            _ => unreachable!(),
        };
        let u = stream.uniform();
        Some(u8::from(z[(i, s)] == 1 && u < pi))
    });

    let community = |c: &CoefSpec| match c {
        CoefSpec::Community { mean, var } => Some((mean.clone(), var.clone())),
        CoefSpec::Fixed(_) => None,
    };
    let community_true = community(&cfg.occurrence).map(|(mu_beta, tau_sq_beta)| {
        let det = match &cfg.detection {
            DetectionSpec::Covariates(c) => community(c),
            _ => None,
        };
        CommunityTruth {
            mu_beta,
            tau_sq_beta,
            mu_alpha: det.as_ref().map(|d| d.0.clone()),
            tau_sq_alpha: det.map(|d| d.1),
        }
    });

    let data = SurveyData {
        y,
        coords,
        x_occ,
        v_det,
        k,
        species_names: (1..=n).map(|i| format!("sp{i:02}")).collect(),
        site_names: (1..=j).map(|s| format!("site{s:04}")).collect(),
        occ_covariate_names: std::iter::once("(Intercept)".to_string())
            .chain((1..p_occ).map(|t| format!("occ_cov{t}")))
            .collect(),
        det_covariate_names: std::iter::once("(Intercept)".to_string())
            .chain((1..p_det).map(|t| format!("det_cov{t}")))
            .collect(),
    };
    let truth = ScenarioTruth {
        scenario: None,
        seed,
        psi_true: psi,
        z_true: z,
        beta_true: beta,
        alpha_true: alpha,
        detection_constant: det_const,
        lambda_true: lambda,
        w_true: w,
        phi_true: phi,
        sigma_sq_true: sigma_sq,
        community_true,
    };
    Ok((data, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, ModelSpec, Variant};

    #[test]
    fn invalid_scenario_id() {
        assert!(simulate_scenario(0, 1).is_err());
        assert!(simulate_scenario(7, 1).is_err());
    }

    #[test]
    fn scenario_shapes() {
        let (d, t) = simulate_scenario(3, 4).unwrap();
        assert_eq!(d.y.dim(), (10, 225, 3));
        assert_eq!(d.p_occ(), 16);
        assert_eq!(d.p_det(), 6);
        assert!(t.w_true.is_none());
        let (d1, t1) = simulate_scenario(1, 4).unwrap();
        assert_eq!(d1.p_det(), 1);
        assert_eq!(t1.detection_constant, Some(0.8));
        assert_eq!(t1.lambda_true.as_ref().unwrap().dim(), (10, 3));
        let (_, t4) = simulate_scenario(4, 4).unwrap();
        assert_eq!(t4.w_true.as_ref().unwrap().dim(), (10, 225));
        assert!(validate(&d, &ModelSpec::new(Variant::MsPgOcc)).is_ok());
    }

    #[test]
    fn deterministic() {
        let a = simulate_scenario(6, 99).unwrap();
        let b = simulate_scenario(6, 99).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0.y, simulate_scenario(6, 100).unwrap().0.y);
    }

    #[test]
    fn no_detection_without_presence() {
        for id in 1..=6 {
            let (d, t) = simulate_scenario(id, 11).unwrap();
            for ((i, s, _), v) in d.y.indexed_iter() {
                if *v == Some(1) {
                    assert_eq!(t.z_true[(i, s)], 1);
                }
            }
        }
    }

    #[test]
    fn grid_spans_unit_square() {
        let (d, _) = simulate_scenario(3, 1).unwrap();
        let first = (d.coords[(0, 0)], d.coords[(0, 1)]);
        assert!((first.0 - 1.0 / 30.0).abs() < 1e-12 && (first.1 - 1.0 / 30.0).abs() < 1e-12);
        assert!(d.coords.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn custom_dimension_errors() {
        let cfg = CustomConfig {
            n_species: 2,
            sites: SiteLayout::Grid { side: 2 },
            replicates: 1,
            replicates_per_site: Some(vec![1, 1]),
            occurrence: CoefSpec::Fixed(vec![vec![0.0], vec![0.0]]),
            detection: DetectionSpec::Constant { p: 0.5 },
            latent: LatentSpec::None,
        };
        assert!(simulate_custom(&cfg, 1).is_err());
        let mut ok = cfg.clone();
        ok.replicates_per_site = None;
        assert!(simulate_custom(&ok, 1).is_ok());
        let mut bad = ok.clone();
        bad.occurrence = CoefSpec::Fixed(vec![vec![0.0]]);
        assert!(simulate_custom(&bad, 1).is_err());
    }
}

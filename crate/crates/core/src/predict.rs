//! Posterior prediction of occurrence at new sites and species richness.

use ndarray::{s, Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PosteriorSamples;
use crate::rngmath::{inv_logit, RandomStream};
use crate::spatial::{build_nngp_graph, new_site_weights, CovFamily, CovarianceSpec, NngpGraph};

/// New sites with their occurrence design (leading column of ones).
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionGrid {
    pub coords: Array2<f64>,
    pub x_occ: Array2<f64>,
}

impl PredictionGrid {
    pub fn new(coords: Array2<f64>, x_occ: Array2<f64>) -> Result<Self> {
        if coords.ncols() != 2 {
            return Err(Error::invalid("prediction coordinates need two columns"));
        }
        if coords.nrows() == 0 {
            return Err(Error::invalid("prediction grid is empty"));
        }
        if coords.nrows() != x_occ.nrows() {
            return Err(Error::invalid(format!(
                "{} prediction coordinates but {} covariate rows",
                coords.nrows(),
                x_occ.nrows()
            )));
        }
        if coords.iter().chain(x_occ.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("prediction coordinates and covariates must be finite"));
        }
        Ok(Self { coords, x_occ })
    }

    pub fn n_sites(&self) -> usize {
        self.coords.nrows()
    }
}

/// Draw × species × new-site occurrence probabilities and states.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub psi: Array3<f64>,
    pub z: Array3<u8>,
}

/// Per-site richness draws and their posterior mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Richness {
    /// draw × site
    pub draws: Array2<u32>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// New sites sorted by first then second coordinate.
fn new_site_order(coords: &Array2<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..coords.nrows()).collect();
    idx.sort_by(|&a, &b| {
        coords[(a, 0)]
            .total_cmp(&coords[(b, 0)])
            .then(coords[(a, 1)].total_cmp(&coords[(b, 1)]))
            .then(a.cmp(&b))
    });
    idx
}

/// Draws ψ and z at new sites for every retained draw. Spatial processes
/// are drawn from their conditional given the training-site values of the
/// same draw; independent latent factors from their N(0, 1) prior.
pub fn predict_occurrence(
    fit: &PosteriorSamples,
    grid: &PredictionGrid,
    graph: Option<&NngpGraph>,
    seed: u64,
) -> Result<Prediction> {
    let p = fit.occ_covariate_names.len();
    if grid.x_occ.ncols() != p {
        return Err(Error::invalid(format!(
            "grid has {} occurrence covariates but the fit has {p}",
            grid.x_occ.ncols()
        )));
    }
    let variant = fit.spec.variant;
    let owned;
    let graph = match (variant.is_spatial(), graph) {
        (false, _) => None,
        (true, Some(g)) => {
            if g.n_sites() != fit.n_sites() {
                return Err(Error::invalid("graph does not match the training sites"));
            }
            Some(g)
        }
        (true, None) => {
            let m = fit.spec.m.ok_or_else(|| Error::invalid("spatial fit has no neighbor count"))?;
            owned = build_nngp_graph(fit.coords.view(), m)?;
            Some(&owned)
        }
    };
    let (n, jn) = (fit.n_species(), grid.n_sites());
    let order = new_site_order(&grid.coords);
    let family = fit.spec.cov_family.unwrap_or(CovFamily::Exponential);
    let base = RandomStream::new(seed, 0);
    let draws: Vec<(usize, usize)> = fit.draw_index().collect();

    let per_draw: Vec<Result<(Array2<f64>, Array2<u8>)>> = draws
        .par_iter()
        .enumerate()
        .map(|(idx, &(c, d))| {
            let mut stream = base.substream(idx as u64);
            let ch = &fit.chains[c];
            let mut eta = ch.beta.slice(s![d, .., ..]).dot(&grid.x_occ.t());
            if let Some(w_all) = &ch.w {
                let w_d = w_all.slice(s![d, .., ..]);
                let n_proc = w_d.nrows();
                let mut w_new = Array2::<f64>::zeros((n_proc, jn));
                let mut scratch = Vec::new();
                for r in 0..n_proc {
                    let w_r = w_d.row(r).to_vec();
                    match graph {
                        Some(g) => {
                            let phi = ch.phi.as_ref().expect("spatial fit has phi")[(d, r)];
                            let sigma_sq = ch.sigma_sq.as_ref().map_or(1.0, |s2| s2[(d, r)]);
                            let spec = CovarianceSpec {
                                family,
                                phi,
                                sigma_sq,
                                nu: fit.spec.nu,
                            };
                            for &t in &order {
                                let pt = [grid.coords[(t, 0)], grid.coords[(t, 1)]];
                                let (mean, var) = new_site_weights(g, &spec, pt, &mut scratch)?.apply(&w_r);
                                w_new[(r, t)] = mean + var.max(0.0).sqrt() * stream.normal();
                            }
                        }
                        None => {
                            for &t in &order {
                                w_new[(r, t)] = stream.normal();
                            }
                        }
                    }
                }
                match &ch.lambda {
                    Some(l) => eta += &l.slice(s![d, .., ..]).dot(&w_new),
                    None => eta += &w_new,
                }
            }
            let psi = eta.mapv(inv_logit);
            let mut z = Array2::<u8>::zeros((n, jn));
            for i in 0..n {
                for &t in &order {
                    z[(i, t)] = u8::from(stream.uniform() < psi[(i, t)]);
                }
            }
            Ok((psi, z))
        })
        .collect();

    let mut psi = Array3::zeros((draws.len(), n, jn));
    let mut z = Array3::zeros((draws.len(), n, jn));
    for (k, res) in per_draw.into_iter().enumerate() {
        let (p_d, z_d) = res?;
        psi.index_axis_mut(Axis(0), k).assign(&p_d);
        z.index_axis_mut(Axis(0), k).assign(&z_d);
    }
    Ok(Prediction { psi, z })
}

/// Richness over `subset` species from draw × species × site states.
pub fn richness(z: &Array3<u8>, subset: &[usize]) -> Result<Richness> {
    let (s, n, j) = z.dim();
    if subset.is_empty() {
        return Err(Error::invalid("richness needs a non-empty species subset"));
    }
    if let Some(bad) = subset.iter().find(|&&i| i >= n) {
        return Err(Error::invalid(format!("species index {bad} out of range (N = {n})")));
    }
    let mut seen = vec![false; n];
    for &i in subset {
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::invalid(format!("species index {i} listed twice")));
        }
    }
    let mut draws = Array2::<u32>::zeros((s, j));
    for d in 0..s {
        for &i in subset {
            for t in 0..j {
                draws[(d, t)] += u32::from(z[(d, i, t)]);
            }
        }
    }
    let mut mean = vec![0.0; j];
    let mut sd = vec![0.0; j];
    for t in 0..j {
        let col = draws.column(t);
        let m = col.iter().map(|&v| v as f64).sum::<f64>() / s as f64;
        let v = if s > 1 {
            col.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / (s as f64 - 1.0)
        } else {
            0.0
        };
        mean[t] = m;
        sd[t] = v.sqrt();
    }
    Ok(Richness { draws, mean, sd })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn richness_all_present() {
        let z = Array3::from_elem((4, 3, 5), 1u8);
        let r = richness(&z, &[0, 1, 2]).unwrap();
        assert!(r.draws.iter().all(|&v| v == 3));
        assert!(r.sd.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn richness_single_species_matches_z() {
        let z = Array3::from_shape_fn((3, 2, 4), |(d, i, t)| ((d + i + t) % 2) as u8);
        let r = richness(&z, &[1]).unwrap();
        for d in 0..3 {
            for t in 0..4 {
                assert_eq!(r.draws[(d, t)], z[(d, 1, t)] as u32);
            }
        }
    }

    #[test]
    fn richness_binomial_moments() {
        let mut st = RandomStream::new(3, 0);
        let z = Array3::from_shape_fn((20000, 10, 1), |_| u8::from(st.uniform() < 0.5));
        let all: Vec<usize> = (0..10).collect();
        let r = richness(&z, &all).unwrap();
        assert!((r.mean[0] - 5.0).abs() < 0.05, "{}", r.mean[0]);
        assert!((r.sd[0] - 2.5f64.sqrt()).abs() < 0.03, "{}", r.sd[0]);
    }

    #[test]
    fn richness_errors() {
        let z = Array3::from_elem((1, 2, 1), 0u8);
        assert!(richness(&z, &[]).is_err());
        assert!(richness(&z, &[2]).is_err());
        assert!(richness(&z, &[0, 0]).is_err());
    }

    #[test]
    fn grid_checks() {
        assert!(PredictionGrid::new(Array2::zeros((0, 2)), Array2::zeros((0, 1))).is_err());
        assert!(PredictionGrid::new(Array2::zeros((2, 2)), Array2::zeros((3, 1))).is_err());
        let mut x = Array2::ones((1, 1));
        x[(0, 0)] = f64::NAN;
        assert!(PredictionGrid::new(Array2::zeros((1, 2)), x).is_err());
    }
}

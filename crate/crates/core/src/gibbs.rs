//! Pólya-Gamma Metropolis-within-Gibbs sampler for all six candidate models.
//!
//! Every Bernoulli-logit likelihood term is augmented with a PG(1, η)
//! variable ω, after which coefficients, loadings and latent factors have
//! Gaussian full conditionals with precision `Xᵀ Ω X + prior` and information
//! `Xᵀ (κ - Ω·offset) + prior·mean`, where κ = response − ½. Spatial decay
//! parameters are updated with a random-walk Metropolis step on the logit of
//! their uniform support.
//!
//! Scan order per iteration: ω_occ → z → ω_det → α → β → community → Λ → w → φ.

use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayViewMut2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    collapse_replicates, occurrence_probabilities, validate, ChainSamples, McmcConfig, ModelSpec, ParamState, PosteriorSamples,
    SurveyData,
};
use crate::rngmath::{inv_logit, pg_one, sample_canonical_in_place, RandomStream};
use crate::spatial::{build_nngp_graph, CovFamily, CovarianceSpec, NngpFactors, NngpGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Occurrence,
    Detection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Latent {
    None,
    Factor,
    Species,
}

/// Probability that a species is present given its occurrence probability,
/// per-replicate detection probabilities and observed replicates.
pub fn occupancy_conditional(psi: f64, pi: &[f64], y: &[u8]) -> f64 {
    if y.contains(&1) {
        return 1.0;
    }
    let miss: f64 = pi.iter().map(|p| 1.0 - p).product();
    let present = psi * miss;
    present / (present + (1.0 - psi))
}

/// Shape and scale of the inverse-gamma full conditional for a community
/// variance given species values and the current community mean.
pub fn tau_sq_conditional(shape: f64, scale: f64, values: &[f64], mu: f64) -> (f64, f64) {
    let ss: f64 = values.iter().map(|v| (v - mu).powi(2)).sum();
    (shape + values.len() as f64 / 2.0, scale + ss / 2.0)
}

/// Metropolis decision on a log acceptance ratio given a uniform draw.
pub fn metropolis_accept(log_ratio: f64, u: f64) -> bool {
    u.ln() < log_ratio
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-chain sampler: owns a copy of the data, the shared NNGP graph and
/// the cached per-process NNGP factors for the current decay values.
#[derive(Clone, Debug)]
pub struct GibbsSampler {
    data: SurveyData,
    spec: ModelSpec,
    latent: Latent,
    n_proc: usize,
    graph: Option<Arc<NngpGraph>>,
    phi_bounds: (f64, f64),
    cov_family: CovFamily,
    nu: Option<f64>,
    /// any non-missing detection per (species, site)
    detected: Array2<bool>,
    factors: Vec<NngpFactors>,
    proposal: Option<NngpFactors>,
    tuning: Vec<f64>,
    batch_accepts: Vec<usize>,
    total_accepts: Vec<usize>,
    total_proposals: usize,
    batches: usize,
    adapt_batch: usize,
    accept_target: f64,
    adapt: bool,
    buf_prec: Vec<f64>,
    buf_info: Vec<f64>,
    buf_rows: Vec<f64>,
    buf_wrows: Vec<f64>,
}

impl GibbsSampler {
    pub fn new(data: &SurveyData, spec: &ModelSpec) -> Result<Self> {
        let graph = if spec.variant.is_spatial() {
            let m = spec.m.ok_or_else(|| Error::invalid("spatial variant needs m"))?;
            Some(Arc::new(build_nngp_graph(data.coords.view(), m)?))
        } else {
            None
        };
        Self::with_graph(data, spec, graph)
    }

    /// Builds a sampler reusing an already constructed graph over `data.coords`.
    pub fn with_graph(data: &SurveyData, spec: &ModelSpec, graph: Option<Arc<NngpGraph>>) -> Result<Self> {
        validate(data, spec).into_result()?;
        let variant = spec.variant;
        let latent = if variant.is_factor() {
            Latent::Factor
        } else if variant.is_species_spatial() {
            Latent::Species
        } else {
            Latent::None
        };
        let n_proc = spec.n_processes(data.n_species());
        if variant.is_spatial() && graph.is_none() {
            return Err(Error::invalid("spatial variant needs an NNGP graph"));
        }
        let phi_bounds = if variant.is_spatial() {
            spec.priors.phi_support(&data.coords)?
        } else {
            (1.0, 2.0)
        };
        let mut data = data.clone();
        data.x_occ = data.x_occ.as_standard_layout().into_owned();
        data.v_det = data.v_det.as_standard_layout().into_owned();
        let detected = Self::detected_cells(&data);
        let factors = match &graph {
            Some(g) if variant.is_spatial() => vec![NngpFactors::empty(g); n_proc],
            _ => Vec::new(),
        };
        let proposal = graph.as_ref().map(|g| NngpFactors::empty(g));
        let p = data.p_occ().max(data.p_det()).max(n_proc.max(1));
        Ok(Self {
            data,
            spec: spec.clone(),
            latent,
            n_proc,
            graph,
            phi_bounds,
            cov_family: spec.cov_family.unwrap_or(CovFamily::Exponential),
            nu: spec.nu,
            detected,
            factors,
            proposal,
            tuning: vec![0.5; n_proc],
            batch_accepts: vec![0; n_proc],
            total_accepts: vec![0; n_proc],
            total_proposals: 0,
            batches: 0,
            adapt_batch: 25,
            accept_target: 0.43,
            adapt: true,
            buf_prec: vec![0.0; p * p],
            buf_info: vec![0.0; p],
            buf_rows: Vec::new(),
            buf_wrows: Vec::new(),
        })
    }

    fn detected_cells(data: &SurveyData) -> Array2<bool> {
        let (n, j, _) = data.y.dim();
        Array2::from_shape_fn((n, j), |(i, s)| data.observed(i, s).any(|(_, v)| v == 1))
    }

    pub fn data(&self) -> &SurveyData {
        &self.data
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn graph(&self) -> Option<&NngpGraph> {
        self.graph.as_deref()
    }

    pub fn phi_bounds(&self) -> (f64, f64) {
        self.phi_bounds
    }

    pub fn tuning(&self) -> &[f64] {
        &self.tuning
    }

    /// Configures the adaptive Metropolis scale for phi.
    pub fn set_adaptation(&mut self, enabled: bool, batch: usize, target: f64, initial_sd: f64) {
        self.adapt = enabled;
        self.adapt_batch = batch.max(1);
        self.accept_target = target;
        self.tuning.iter_mut().for_each(|t| *t = initial_sd);
    }

    /// Replaces the detection array (same shape and missingness pattern).
    /// For JSDM variants the collapsed response in `state.z` is refreshed.
    pub fn set_detections(&mut self, y: Array3<Option<u8>>, state: &mut ParamState) -> Result<()> {
        if y.dim() != self.data.y.dim() {
            return Err(Error::invalid("replacement detections must keep their shape"));
        }
        self.data.y = y;
        self.detected = Self::detected_cells(&self.data);
        if !self.spec.variant.has_detection() {
            state.z = collapse_replicates(&self.data)?;
        }
        Ok(())
    }

    fn cov(&self, phi: f64, sigma_sq: f64) -> CovarianceSpec {
        CovarianceSpec {
            family: self.cov_family,
            phi,
            sigma_sq,
            nu: self.nu,
        }
    }

    /// Recomputes cached NNGP factors from `state.phi` / `state.sigma_sq`.
    pub fn sync(&mut self, state: &ParamState) -> Result<()> {
        let Some(graph) = self.graph.clone() else {
            return Ok(());
        };
        for r in 0..self.n_proc {
            let sigma = if self.latent == Latent::Species { state.sigma_sq[r] } else { 1.0 };
            let cov = self.cov(state.phi[r], sigma);
            self.factors[r].recompute(&graph, &cov)?;
        }
        Ok(())
    }

    /// Initial state: z from collapsed detections, coefficients at zero,
    /// free loadings N(0, 1), factors N(0, 1), phi at mid-support.
    pub fn initial_state(&mut self, stream: &mut RandomStream) -> Result<ParamState> {
        let (n, j, kmax) = self.data.y.dim();
        let p_occ = self.data.p_occ();
        let has_det = self.spec.variant.has_detection();
        let p_det = if has_det { self.data.p_det() } else { 0 };
        let pr = &self.spec.priors;
        let z = collapse_replicates(&self.data)?;
        let q = self.spec.q.unwrap_or(0);
        let lambda = (self.latent == Latent::Factor).then(|| {
            Array2::from_shape_fn((n, q), |(i, r)| {
                if i == r {
                    1.0
                } else if r < i {
                    stream.normal()
                } else {
                    0.0
                }
            })
        });
        let w = (self.latent != Latent::None).then(|| Array2::from_shape_fn((self.n_proc, j), |_| stream.normal()));
        let spatial = self.spec.variant.is_spatial();
        let mid = 0.5 * (self.phi_bounds.0 + self.phi_bounds.1);
        let state = ParamState {
            beta: Array2::zeros((n, p_occ)),
            alpha: has_det.then(|| Array2::zeros((n, p_det))),
            mu_beta: vec![pr.mu_beta.mean; p_occ],
            tau_sq_beta: vec![1.0; p_occ],
            mu_alpha: vec![pr.mu_alpha.mean; p_det],
            tau_sq_alpha: vec![1.0; p_det],
            lambda,
            w,
            z,
            omega_occ: Array2::from_elem((n, j), 0.25),
            omega_det: Array3::from_elem((n, j, if has_det { kmax } else { 0 }), f64::NAN),
            phi: if spatial { vec![mid; self.n_proc] } else { Vec::new() },
            sigma_sq: if self.latent == Latent::Species { vec![1.0; n] } else { Vec::new() },
        };
        self.sync(&state)?;
        Ok(state)
    }

    #[inline]
    fn occ_fixed(&self, state: &ParamState, i: usize, j: usize) -> f64 {
        let p = self.data.p_occ();
        let x = &self.data.x_occ.as_slice().unwrap()[j * p..(j + 1) * p];
        let b = state.beta.row(i);
        match b.as_slice() {
            Some(b) => dot(x, b),
            None => x.iter().zip(b.iter()).map(|(a, c)| a * c).sum(),
        }
    }

    #[inline]
    fn latent_effect(&self, state: &ParamState, i: usize, j: usize) -> f64 {
        match self.latent {
            Latent::None => 0.0,
            Latent::Species => state.w.as_ref().unwrap()[(i, j)],
            Latent::Factor => {
                let lam = state.lambda.as_ref().unwrap();
                let w = state.w.as_ref().unwrap();
                (0..lam.ncols()).map(|r| lam[(i, r)] * w[(r, j)]).sum()
            }
        }
    }

    /// Occurrence linear predictor.
    pub fn occ_eta(&self, state: &ParamState, i: usize, j: usize) -> f64 {
        self.occ_fixed(state, i, j) + self.latent_effect(state, i, j)
    }

    #[inline]
    fn v_row(&self, j: usize, k: usize) -> &[f64] {
        let (_, kmax, p) = self.data.v_det.dim();
        let off = (j * kmax + k) * p;
        &self.data.v_det.as_slice().unwrap()[off..off + p]
    }

    /// Detection linear predictor (detection variants only).
    pub fn det_eta(&self, state: &ParamState, i: usize, j: usize, k: usize) -> f64 {
        let a = state.alpha.as_ref().expect("detection variant");
        self.v_row(j, k).iter().zip(a.row(i).iter()).map(|(v, c)| v * c).sum()
    }

    /// Occurrence probabilities, species × site.
    pub fn psi(&self, state: &ParamState) -> Array2<f64> {
        occurrence_probabilities(
            self.data.x_occ.view(),
            state.beta.view(),
            state.lambda.as_ref().map(|l| l.view()),
            state.w.as_ref().map(|w| w.view()),
        )
    }

    /// Detection probabilities, species × site × replicate (NaN beyond K_j).
    pub fn detection_probs(&self, state: &ParamState) -> Option<Array3<f64>> {
        state.alpha.as_ref()?;
        let (n, j, kmax) = self.data.y.dim();
        Some(Array3::from_shape_fn((n, j, kmax), |(i, s, k)| {
            if k < self.data.k[s] {
                inv_logit(self.det_eta(state, i, s, k))
            } else {
                f64::NAN
            }
        }))
    }

    pub fn update_omega(&self, state: &mut ParamState, stage: Stage, stream: &mut RandomStream) -> Result<()> {
        let (n, j) = state.z.dim();
        match stage {
            Stage::Occurrence => {
                let etas = self.occ_eta_matrix(state);
                for i in 0..n {
                    for s in 0..j {
                        let eta = etas[(i, s)];
                        if !eta.is_finite() {
                            return Err(Error::numeric(format!(
                                "non-finite occurrence linear predictor at species {i}, site {s}"
                            )));
                        }
                        state.omega_occ[(i, s)] = pg_one(eta, stream);
                    }
                }
            }
            Stage::Detection => {
                if state.alpha.is_none() {
                    return Ok(());
                }
                for i in 0..n {
                    for s in 0..j {
                        if state.z[(i, s)] == 0 {
                            continue;
                        }
                        for k in 0..self.data.k[s] {
                            if self.data.y[(i, s, k)].is_none() {
                                continue;
                            }
                            let eta = self.det_eta(state, i, s, k);
                            if !eta.is_finite() {
                                return Err(Error::numeric(format!(
                                    "non-finite detection linear predictor at species {i}, site {s}, replicate {k}"
                                )));
                            }
                            state.omega_det[(i, s, k)] = pg_one(eta, stream);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn update_z(&self, state: &mut ParamState, stream: &mut RandomStream) {
        if !self.spec.variant.has_detection() {
            return;
        }
        let (n, j) = state.z.dim();
        let etas = self.occ_eta_matrix(state);
        for i in 0..n {
            for s in 0..j {
                if self.detected[(i, s)] {
                    state.z[(i, s)] = 1;
                    continue;
                }
                let psi = inv_logit(etas[(i, s)]);
                let mut miss = 1.0;
                for k in 0..self.data.k[s] {
                    if self.data.y[(i, s, k)].is_some() {
                        miss *= 1.0 - inv_logit(self.det_eta(state, i, s, k));
                    }
                }
                let present = psi * miss;
                let prob = present / (present + (1.0 - psi));
                state.z[(i, s)] = u8::from(stream.uniform() < prob);
            }
        }
    }

    pub fn update_species_coefficients(
        &mut self,
        state: &mut ParamState,
        stage: Stage,
        stream: &mut RandomStream,
    ) -> Result<()> {
        let (n, j) = state.z.dim();
        let mut prec = std::mem::take(&mut self.buf_prec);
        let mut info = std::mem::take(&mut self.buf_info);
        let mut rows = std::mem::take(&mut self.buf_rows);
        let mut wrows = std::mem::take(&mut self.buf_wrows);
        let res = (|| {
            match stage {
                Stage::Occurrence => {
                    let p = self.data.p_occ();
                    let x = self.data.x_occ.as_slice().unwrap();
                    let latent = self.latent_matrix(state);
                    wrows.resize(j * p, 0.0);
                    for i in 0..n {
                        let (prec, info) = (&mut prec[..p * p], &mut info[..p]);
                        prior_block(prec, info, &state.mu_beta, &state.tau_sq_beta);
                        for s in 0..j {
                            let om = state.omega_occ[(i, s)];
                            let kappa = state.z[(i, s)] as f64 - 0.5;
                            let off = latent.as_ref().map_or(0.0, |l| l[(i, s)]);
                            let r = kappa - om * off;
                            let xs = &x[s * p..(s + 1) * p];
                            for (a, (w, xv)) in wrows[s * p..(s + 1) * p].iter_mut().zip(xs).enumerate() {
                                *w = om * xv;
                                info[a] += xv * r;
                            }
                        }
                        add_crossprod(prec, p, x, &wrows[..j * p]);
                        sample_canonical_in_place(prec, info, p, stream)
                            .map_err(|e| Error::numeric(format!("occurrence coefficients of species {i}: {e}")))?;
                        state.beta.row_mut(i).iter_mut().zip(info.iter()).for_each(|(b, v)| *b = *v);
                    }
                }
                Stage::Detection => {
                    if state.alpha.is_none() {
                        return Ok(());
                    }
                    let p = self.data.p_det();
                    for i in 0..n {
                        let (prec, info) = (&mut prec[..p * p], &mut info[..p]);
                        prior_block(prec, info, &state.mu_alpha, &state.tau_sq_alpha);
                        rows.clear();
                        wrows.clear();
                        for s in 0..j {
                            if state.z[(i, s)] == 0 {
                                continue;
                            }
                            for k in 0..self.data.k[s] {
                                let Some(y) = self.data.y[(i, s, k)] else { continue };
                                let om = state.omega_det[(i, s, k)];
                                let kappa = y as f64 - 0.5;
                                for (a, &v) in self.v_row(s, k).iter().enumerate() {
                                    rows.push(v);
                                    wrows.push(om * v);
                                    info[a] += v * kappa;
                                }
                            }
                        }
                        add_crossprod(prec, p, &rows, &wrows);
                        sample_canonical_in_place(prec, info, p, stream)
                            .map_err(|e| Error::numeric(format!("detection coefficients of species {i}: {e}")))?;
                        let a = state.alpha.as_mut().unwrap();
                        a.row_mut(i).iter_mut().zip(info.iter()).for_each(|(b, v)| *b = *v);
                    }
                }
            }
            Ok(())
        })();
        self.buf_prec = prec;
        self.buf_info = info;
        self.buf_rows = rows;
        self.buf_wrows = wrows;
        res
    }

    /// Latent contribution to the occurrence predictor, species × site.
    fn latent_matrix(&self, state: &ParamState) -> Option<Array2<f64>> {
        match self.latent {
            Latent::None => None,
            Latent::Species => state.w.clone(),
            Latent::Factor => Some(state.lambda.as_ref()?.dot(state.w.as_ref()?)),
        }
    }

    /// Occurrence linear predictors for all species and sites.
    fn occ_eta_matrix(&self, state: &ParamState) -> Array2<f64> {
        let mut eta = state.beta.dot(&self.data.x_occ.t());
        if let Some(l) = self.latent_matrix(state) {
            eta += &l;
        }
        eta
    }

    pub fn update_community(&self, state: &mut ParamState, stream: &mut RandomStream) {
        let pr = &self.spec.priors;
        update_community_block(
            &state.beta,
            &mut state.mu_beta,
            &mut state.tau_sq_beta,
            (pr.mu_beta.mean, pr.mu_beta.var),
            (pr.tau_sq_beta.shape, pr.tau_sq_beta.scale),
            stream,
        );
        if let Some(alpha) = &state.alpha {
            update_community_block(
                alpha,
                &mut state.mu_alpha,
                &mut state.tau_sq_alpha,
                (pr.mu_alpha.mean, pr.mu_alpha.var),
                (pr.tau_sq_alpha.shape, pr.tau_sq_alpha.scale),
                stream,
            );
        }
    }

    /// Draws the free (strictly lower-triangular) loadings with N(0, 1) priors.
    pub fn update_loadings(&mut self, state: &mut ParamState, stream: &mut RandomStream) -> Result<()> {
        if self.latent != Latent::Factor {
            return Ok(());
        }
        let (n, j) = state.z.dim();
        let q = self.n_proc;
        let xbeta = state.beta.dot(&self.data.x_occ.t());
        let mut prec = vec![0.0; q * q];
        let mut info = vec![0.0; q];
        for i in 1..n {
            let nf = i.min(q);
            let (prec, info) = (&mut prec[..nf * nf], &mut info[..nf]);
            prec.iter_mut().for_each(|v| *v = 0.0);
            info.iter_mut().for_each(|v| *v = 0.0);
            for a in 0..nf {
                prec[a * nf + a] = 1.0;
            }
            let w = state.w.as_ref().unwrap();
            for s in 0..j {
                let om = state.omega_occ[(i, s)];
                let mut fixed = xbeta[(i, s)];
                if i < q {
                    fixed += w[(i, s)];
                }
                let r = state.z[(i, s)] as f64 - 0.5 - om * fixed;
                for a in 0..nf {
                    let wa = w[(a, s)];
                    info[a] += wa * r;
                    for b in 0..=a {
                        prec[a * nf + b] += om * wa * w[(b, s)];
                    }
                }
            }
            sample_canonical_in_place(prec, info, nf, stream)
                .map_err(|e| Error::numeric(format!("loadings of species {i}: {e}")))?;
            let lam = state.lambda.as_mut().unwrap();
            for a in 0..nf {
                lam[(i, a)] = info[a];
            }
        }
        Ok(())
    }

    /// Prior precision and information for process `r` at ordered position
    /// `pos` from the site's own conditional and every site that lists it as
    /// a neighbor.
    fn nngp_site_prior(&self, r: usize, pos: usize, w_r: &[f64]) -> (f64, f64) {
        let g = self.graph.as_deref().unwrap();
        let f = &self.factors[r];
        let fv = f.variance(pos);
        let mut prec = 1.0 / fv;
        let mut info = f.conditional_mean(g, pos, w_r) / fv;
        let wj = w_r[g.order()[pos]];
        for &(c, slot) in g.children(pos) {
            let b = f.weight(c, slot);
            let fc = f.variance(c);
            let resid = w_r[g.order()[c]] - f.conditional_mean(g, c, w_r) + b * wj;
            prec += b * b / fc;
            info += b * resid / fc;
        }
        (prec, info)
    }

    pub fn update_factors(&mut self, state: &mut ParamState, stream: &mut RandomStream) -> Result<()> {
        let (n, j) = state.z.dim();
        match self.latent {
            Latent::None => Ok(()),
            Latent::Species => {
                let g = self.graph.clone().unwrap();
                let mut w = state.w.take().unwrap();
                let xb = state.beta.dot(&self.data.x_occ.t());
                for i in 0..n {
                    for pos in 0..j {
                        let s = g.order()[pos];
                        let (pp, pi) = self.nngp_site_prior(i, pos, w.row(i).as_slice().unwrap());
                        let om = state.omega_occ[(i, s)];
                        let kappa = state.z[(i, s)] as f64 - 0.5;
                        let prec = pp + om;
                        let info = pi + kappa - om * xb[(i, s)];
                        w[(i, s)] = info / prec + stream.normal() / prec.sqrt();
                    }
                }
                state.w = Some(w);
                Ok(())
            }
            Latent::Factor => {
                let q = self.n_proc;
                let spatial = self.graph.is_some();
                let g = self.graph.clone();
                let mut w = state.w.take().unwrap();
                let lam = state.lambda.as_ref().unwrap();
                let xbeta = state.beta.dot(&self.data.x_occ.t());
                let mut prec = vec![0.0; q * q];
                let mut info = vec![0.0; q];
                let mut res = Ok(());
                for pos in 0..j {
                    let s = match &g {
                        Some(g) => g.order()[pos],
                        None => pos,
                    };
                    prec.iter_mut().for_each(|v| *v = 0.0);
                    info.iter_mut().for_each(|v| *v = 0.0);
                    for r in 0..q {
                        if spatial {
                            let (pp, pi) = self.nngp_site_prior(r, pos, w.row(r).as_slice().unwrap());
                            prec[r * q + r] = pp;
                            info[r] = pi;
                        } else {
                            prec[r * q + r] = 1.0;
                        }
                    }
                    for i in 0..n {
                        let om = state.omega_occ[(i, s)];
                        let xb = xbeta[(i, s)];
                        let r_i = state.z[(i, s)] as f64 - 0.5 - om * xb;
                        for a in 0..q {
                            let la = lam[(i, a)];
                            if la == 0.0 {
                                continue;
                            }
                            info[a] += la * r_i;
                            for b in 0..=a {
                                prec[a * q + b] += om * la * lam[(i, b)];
                            }
                        }
                    }
                    if let Err(e) = sample_canonical_in_place(&mut prec, &mut info, q, stream) {
                        res = Err(Error::numeric(format!("latent factors at site {s}: {e}")));
                        break;
                    }
                    for r in 0..q {
                        w[(r, s)] = info[r];
                    }
                }
                state.w = Some(w);
                res
            }
        }
    }

    /// Log of the phi full conditional on the logit-support scale, up to a
    /// constant: NNGP log-density plus log-Jacobian.
    fn phi_log_target(&self, factors: &NngpFactors, phi: f64, w_r: &[f64]) -> f64 {
        let (a, b) = self.phi_bounds;
        let g = self.graph.as_deref().unwrap();
        factors.log_density_sites(g, w_r) + (phi - a).ln() + (b - phi).ln()
    }

    /// Evaluates the Metropolis log-ratio for moving process `r` from its
    /// current phi to `proposal`, without changing any state.
    pub fn phi_log_ratio(&mut self, state: &ParamState, r: usize, proposal: f64) -> Result<f64> {
        let g = self.graph.clone().ok_or_else(|| Error::invalid("not a spatial variant"))?;
        let sigma = if self.latent == Latent::Species { state.sigma_sq[r] } else { 1.0 };
        let w_r = state.w.as_ref().unwrap().row(r).to_vec();
        let cur = self.phi_log_target(&self.factors[r], state.phi[r], &w_r);
        let mut prop = self.proposal.take().unwrap();
        let res = prop.recompute(&g, &self.cov(proposal, sigma));
        let out = res.map(|_| self.phi_log_target(&prop, proposal, &w_r) - cur);
        self.proposal = Some(prop);
        out
    }

    pub fn update_phi(&mut self, state: &mut ParamState, stream: &mut RandomStream) -> Result<()> {
        let Some(g) = self.graph.clone() else {
            return Ok(());
        };
        let (a, b) = self.phi_bounds;
        let w = state.w.take().unwrap();
        let mut res = Ok(());
        for r in 0..self.n_proc {
            let w_r = w.row(r);
            let w_r = w_r.as_slice().unwrap();
            let sigma = if self.latent == Latent::Species { state.sigma_sq[r] } else { 1.0 };
            let cur_phi = state.phi[r];
            let theta = logit((cur_phi - a) / (b - a)) + self.tuning[r] * stream.normal();
            let prop_phi = a + (b - a) * inv_logit(theta);
            let u = stream.uniform();
            if prop_phi > a && prop_phi < b {
                let mut prop = self.proposal.take().unwrap();
                match prop.recompute(&g, &self.cov(prop_phi, sigma)) {
                    Ok(()) => {
                        let lr = self.phi_log_target(&prop, prop_phi, w_r)
                            - self.phi_log_target(&self.factors[r], cur_phi, w_r);
                        if metropolis_accept(lr, u) {
                            std::mem::swap(&mut prop, &mut self.factors[r]);
                            state.phi[r] = prop_phi;
                            self.batch_accepts[r] += 1;
                            self.total_accepts[r] += 1;
                        }
                    }
                    // numerically singular proposal: reject
                    Err(Error::Numeric(_)) => {}
                    Err(e) => res = Err(e),
                }
                self.proposal = Some(prop);
            }
            if self.latent == Latent::Species {
                let pr = self.spec.priors.sigma_sq;
                let qf = self.factors[r].unit_quadratic_form(&g, w_r);
                let s2 = stream.inverse_gamma(pr.shape + g.n_sites() as f64 / 2.0, pr.scale + qf / 2.0);
                state.sigma_sq[r] = s2;
                self.factors[r].set_sigma_sq(s2);
            }
        }
        self.total_proposals += 1;
        state.w = Some(w);
        res
    }

    /// Batch adaptation of the phi random-walk scale toward the target rate.
    fn adapt_tuning(&mut self) {
        self.batches += 1;
        let delta = (1.0 / (self.batches as f64).sqrt()).min(0.05);
        for r in 0..self.n_proc {
            let rate = self.batch_accepts[r] as f64 / self.adapt_batch as f64;
            let lt = self.tuning[r].ln() + if rate > self.accept_target { delta } else { -delta };
            self.tuning[r] = lt.exp();
            self.batch_accepts[r] = 0;
        }
    }

    fn reset_acceptance(&mut self) {
        self.total_accepts.iter_mut().for_each(|v| *v = 0);
        self.batch_accepts.iter_mut().for_each(|v| *v = 0);
        self.total_proposals = 0;
    }

    /// Acceptance rates of phi proposals since the last reset.
    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.total_accepts
            .iter()
            .map(|&a| if self.total_proposals == 0 { 0.0 } else { a as f64 / self.total_proposals as f64 })
            .collect()
    }

    /// One full scan in the fixed update order.
    pub fn step(&mut self, state: &mut ParamState, stream: &mut RandomStream) -> Result<()> {
        self.update_omega(state, Stage::Occurrence, stream)?;
        self.update_z(state, stream);
        self.update_omega(state, Stage::Detection, stream)?;
        self.update_species_coefficients(state, Stage::Detection, stream)?;
        self.update_species_coefficients(state, Stage::Occurrence, stream)?;
        self.update_community(state, stream);
        self.update_loadings(state, stream)?;
        self.update_factors(state, stream)?;
        self.update_phi(state, stream)
    }

    /// Runs one chain and returns its retained draws.
    pub fn run_chain(&mut self, mcmc: &McmcConfig, chain: usize) -> Result<ChainSamples> {
        mcmc.check()?;
        let mut stream = RandomStream::new(mcmc.seed, chain as u64);
        self.set_adaptation(true, mcmc.adapt_batch, mcmc.accept_target, mcmc.phi_tuning);
        let wrap = |iteration: usize, e: Error| Error::Chain {
            chain,
            iteration,
            source: Box::new(e),
        };
        let mut state = self.initial_state(&mut stream).map_err(|e| wrap(0, e))?;
        let mut rec = Recorder::new(self, &state, mcmc.n_retained());
        self.reset_acceptance();
        for it in 1..=mcmc.n_iterations {
            self.step(&mut state, &mut stream).map_err(|e| wrap(it, e))?;
            if it <= mcmc.n_burn {
                if self.adapt && it % self.adapt_batch == 0 {
                    self.adapt_tuning();
                }
                if it == mcmc.n_burn {
                    self.reset_acceptance();
                }
            }
            if mcmc.keeps(it) {
                rec.record(self, &state);
            }
        }
        Ok(rec.finish(self))
    }
}

fn prior_block(prec: &mut [f64], info: &mut [f64], mu: &[f64], tau_sq: &[f64]) {
    let p = info.len();
    prec.iter_mut().for_each(|v| *v = 0.0);
    for t in 0..p {
        prec[t * p + t] = 1.0 / tau_sq[t];
        info[t] = mu[t] / tau_sq[t];
    }
}

/// Adds `xᵀ wx` to the row-major `p × p` buffer, where `x` and `wx` hold
/// rows of length `p`.
fn add_crossprod(prec: &mut [f64], p: usize, x: &[f64], wx: &[f64]) {
    let rows = x.len() / p;
    if rows == 0 {
        return;
    }
    let x = ArrayView2::from_shape((rows, p), x).expect("row buffer");
    let wx = ArrayView2::from_shape((rows, p), wx).expect("row buffer");
    let mut out = ArrayViewMut2::from_shape((p, p), prec).expect("precision buffer");
    general_mat_mul(1.0, &x.t(), &wx, 1.0, &mut out);
}

fn update_community_block(
    coefs: &Array2<f64>,
    mu: &mut [f64],
    tau_sq: &mut [f64],
    mean_prior: (f64, f64),
    var_prior: (f64, f64),
    stream: &mut RandomStream,
) {
    let n = coefs.nrows() as f64;
    for t in 0..coefs.ncols() {
        let col = coefs.column(t);
        let sum: f64 = col.sum();
        let prec = 1.0 / mean_prior.1 + n / tau_sq[t];
        let mean = (mean_prior.0 / mean_prior.1 + sum / tau_sq[t]) / prec;
        mu[t] = mean + stream.normal() / prec.sqrt();
        let vals = col.to_vec();
        let (shape, scale) = tau_sq_conditional(var_prior.0, var_prior.1, &vals, mu[t]);
        tau_sq[t] = stream.inverse_gamma(shape, scale);
    }
}

struct Recorder {
    d: usize,
    out: ChainSamples,
}

impl Recorder {
    fn new(s: &GibbsSampler, state: &ParamState, n: usize) -> Self {
        let (ns, j) = state.z.dim();
        let p_occ = state.beta.ncols();
        let has_det = state.alpha.is_some();
        let p_det = state.mu_alpha.len();
        let np = s.n_proc;
        let spatial = s.spec.variant.is_spatial();
        let out = ChainSamples {
            beta: Array3::zeros((n, ns, p_occ)),
            alpha: has_det.then(|| Array3::zeros((n, ns, p_det))),
            mu_beta: Array2::zeros((n, p_occ)),
            tau_sq_beta: Array2::zeros((n, p_occ)),
            mu_alpha: has_det.then(|| Array2::zeros((n, p_det))),
            tau_sq_alpha: has_det.then(|| Array2::zeros((n, p_det))),
            lambda: state.lambda.as_ref().map(|l| Array3::zeros((n, l.nrows(), l.ncols()))),
            w: state.w.as_ref().map(|_| Array3::zeros((n, np, j))),
            z: has_det.then(|| Array3::zeros((n, ns, j))),
            phi: spatial.then(|| Array2::zeros((n, np))),
            sigma_sq: (s.latent == Latent::Species).then(|| Array2::zeros((n, np))),
            psi: Array3::zeros((n, ns, j)),
            phi_acceptance: Vec::new(),
            phi_tuning: Vec::new(),
        };
        Self { d: 0, out }
    }

    fn record(&mut self, s: &GibbsSampler, state: &ParamState) {
        let d = self.d;
        let o = &mut self.out;
        o.beta.slice_mut(s![d, .., ..]).assign(&state.beta);
        if let (Some(a), Some(src)) = (o.alpha.as_mut(), state.alpha.as_ref()) {
            a.slice_mut(s![d, .., ..]).assign(src);
        }
        o.mu_beta.row_mut(d).assign(&ndarray::aview1(&state.mu_beta));
        o.tau_sq_beta.row_mut(d).assign(&ndarray::aview1(&state.tau_sq_beta));
        if let Some(m) = o.mu_alpha.as_mut() {
            m.row_mut(d).assign(&ndarray::aview1(&state.mu_alpha));
        }
        if let Some(m) = o.tau_sq_alpha.as_mut() {
            m.row_mut(d).assign(&ndarray::aview1(&state.tau_sq_alpha));
        }
        if let (Some(l), Some(src)) = (o.lambda.as_mut(), state.lambda.as_ref()) {
            l.slice_mut(s![d, .., ..]).assign(src);
        }
        if let (Some(w), Some(src)) = (o.w.as_mut(), state.w.as_ref()) {
            w.slice_mut(s![d, .., ..]).assign(src);
        }
        if let Some(z) = o.z.as_mut() {
            z.slice_mut(s![d, .., ..]).assign(&state.z);
        }
        if let Some(p) = o.phi.as_mut() {
            p.row_mut(d).assign(&ndarray::aview1(&state.phi));
        }
        if let Some(p) = o.sigma_sq.as_mut() {
            p.row_mut(d).assign(&ndarray::aview1(&state.sigma_sq));
        }
        o.psi.slice_mut(s![d, .., ..]).assign(&s.psi(state));
        self.d += 1;
    }

    fn finish(mut self, s: &GibbsSampler) -> ChainSamples {
        if s.graph.is_some() {
            self.out.phi_acceptance = s.acceptance_rates();
            self.out.phi_tuning = s.tuning.clone();
        }
        self.out
    }
}

/// Fits `spec` to `data` with `mcmc.n_chains` independent chains.
pub fn run_model(spec: &ModelSpec, data: &SurveyData, mcmc: &McmcConfig) -> Result<PosteriorSamples> {
    mcmc.check()?;
    validate(data, spec).into_result()?;
    let graph = if spec.variant.is_spatial() {
        Some(Arc::new(build_nngp_graph(data.coords.view(), spec.m.unwrap())?))
    } else {
        None
    };
    let proto = GibbsSampler::with_graph(data, spec, graph)?;
    let chains: Vec<ChainSamples> = (0..mcmc.n_chains)
        .into_par_iter()
        .map(|c| proto.clone().run_chain(mcmc, c))
        .collect::<Result<_>>()?;
    let z_mean = if spec.variant.has_detection() {
        let (n, j) = (data.n_species(), data.n_sites());
        let mut acc = Array2::<f64>::zeros((n, j));
        let mut total = 0usize;
        for ch in &chains {
            let z = ch.z.as_ref().unwrap();
            total += z.dim().0;
            for ((_, i, s), v) in z.indexed_iter() {
                acc[(i, s)] += *v as f64;
            }
        }
        Some(acc / total as f64)
    } else {
        None
    };
    Ok(PosteriorSamples {
        spec: spec.clone(),
        mcmc: mcmc.clone(),
        data_digest: data.digest(),
        coords: data.coords.clone(),
        x_occ: data.x_occ.clone(),
        species_names: data.species_names.clone(),
        site_names: data.site_names.clone(),
        occ_covariate_names: data.occ_covariate_names.clone(),
        det_covariate_names: data.det_covariate_names.clone(),
        chains,
        z_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn z_conditional_enumeration_example() {
        let p = occupancy_conditional(0.5, &[0.5, 0.5, 0.5], &[0, 0, 0]);
        assert_abs_diff_eq!(p, 0.0625 / 0.5625, epsilon = 1e-15);
        assert_eq!(occupancy_conditional(0.01, &[0.3, 0.3], &[0, 1]), 1.0);
        assert!(occupancy_conditional(1e-12, &[0.5], &[0]) < 1e-11);
    }

    #[test]
    fn tau_sq_shape_from_conjugacy() {
        let vals: Vec<f64> = (0..10).map(|v| v as f64).collect();
        let (shape, scale) = tau_sq_conditional(0.1, 0.1, &vals, 4.5);
        assert_abs_diff_eq!(shape, 5.1, epsilon = 1e-15);
        assert_abs_diff_eq!(scale, 0.1 + 82.5 / 2.0, epsilon = 1e-12);
        let (shape1, _) = tau_sq_conditional(0.1, 0.1, &[2.0], 0.0);
        assert_abs_diff_eq!(shape1, 0.6, epsilon = 1e-15);
    }

    #[test]
    fn equal_proposal_always_accepted() {
        let mut s = RandomStream::new(3, 0);
        for _ in 0..10_000 {
            assert!(metropolis_accept(0.0, s.uniform()));
        }
    }
}

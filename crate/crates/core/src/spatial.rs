//! Spatial correlation functions and the Nearest Neighbor Gaussian Process.
//!
//! Sites are ordered by ascending first coordinate (ties by the second) and
//! each ordered site conditions on at most `m` nearest predecessors. The
//! resulting sparse precision `(I - B)ᵀ F⁻¹ (I - B)` defines a valid joint
//! Gaussian whose density factors into per-site univariate normals.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rngmath::{chol_in_place, solve_lower_in_place, solve_lower_transpose_in_place};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovFamily {
    Exponential,
    Spherical,
    Gaussian,
    Matern,
}

/// Correlation family plus its parameters. `phi` is a decay (1/distance).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub family: CovFamily,
    pub phi: f64,
    pub sigma_sq: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

impl CovarianceSpec {
    pub fn new(family: CovFamily, phi: f64, sigma_sq: f64, nu: Option<f64>) -> Result<Self> {
        let spec = Self {
            family,
            phi,
            sigma_sq,
            nu,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn exponential(phi: f64, sigma_sq: f64) -> Result<Self> {
        Self::new(CovFamily::Exponential, phi, sigma_sq, None)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::invalid(format!("phi must be positive, got {}", self.phi)));
        }
        if !(self.sigma_sq > 0.0 && self.sigma_sq.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma_sq must be positive, got {}",
                self.sigma_sq
            )));
        }
        if self.family == CovFamily::Matern {
            check_matern_nu(self.nu)?;
        }
        Ok(())
    }

    pub fn with_phi(mut self, phi: f64) -> Self {
        self.phi = phi;
        self
    }

    pub fn with_sigma_sq(mut self, sigma_sq: f64) -> Self {
        self.sigma_sq = sigma_sq;
        self
    }

    #[inline]
    fn corr(&self, d: f64) -> f64 {
        unit_correlation(self.family, self.phi, self.nu.unwrap_or(0.5), d)
    }
}

pub(crate) fn check_matern_nu(nu: Option<f64>) -> Result<()> {
    match nu {
        Some(v) if v == 0.5 || v == 1.5 || v == 2.5 => Ok(()),
        Some(v) => Err(Error::invalid(format!(
            "Matern smoothness {v} unsupported; use 0.5, 1.5 or 2.5"
        ))),
        None => Err(Error::invalid("Matern family requires nu")),
    }
}

#[inline]
fn unit_correlation(family: CovFamily, phi: f64, nu: f64, d: f64) -> f64 {
    let h = phi * d;
    match family {
        CovFamily::Exponential => (-h).exp(),
        CovFamily::Gaussian => (-h * h).exp(),
        CovFamily::Spherical => {
            if h >= 1.0 {
                0.0
            } else {
                1.0 - 1.5 * h + 0.5 * h * h * h
            }
        }
        CovFamily::Matern => {
            if nu == 0.5 {
                (-h).exp()
            } else if nu == 1.5 {
                (1.0 + h) * (-h).exp()
            } else {
                (1.0 + h + h * h / 3.0) * (-h).exp()
            }
        }
    }
}

/// Correlation at distance `d` (not scaled by `sigma_sq`).
pub fn correlation(spec: &CovarianceSpec, d: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::invalid(format!("distance must be non-negative, got {d}")));
    }
    spec.check()?;
    Ok(spec.corr(d))
}

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Dense covariance matrix over the rows of `coords` (site order).
pub fn covariance_matrix(coords: ArrayView2<f64>, spec: &CovarianceSpec) -> Array2<f64> {
    let n = coords.nrows();
    let pt = |i: usize| [coords[(i, 0)], coords[(i, 1)]];
    Array2::from_shape_fn((n, n), |(i, j)| spec.sigma_sq * spec.corr(dist(pt(i), pt(j))))
}

/// Ordered sites with their nearest-predecessor neighbor sets.
#[derive(Clone, Debug)]
pub struct NngpGraph {
    coords: Array2<f64>,
    m: usize,
    /// ordered position -> site index
    order: Vec<usize>,
    /// site index -> ordered position
    rank: Vec<usize>,
    /// per ordered position, neighbor ordered positions (nearest first)
    neighbors: Vec<Vec<usize>>,
    /// neighbors as site indices
    neighbor_sites: Vec<Vec<usize>>,
    /// per ordered position: distances among neighbors, row-major n_j x n_j
    nb_nb_dists: Vec<Vec<f64>>,
    /// per ordered position: distances from the site to each neighbor
    nb_dists: Vec<Vec<f64>>,
    /// per ordered position: (child position, slot in child's neighbor list)
    children: Vec<Vec<(usize, usize)>>,
}

pub fn build_nngp_graph(coords: ArrayView2<f64>, m: usize) -> Result<NngpGraph> {
    let j = coords.nrows();
    if j == 0 {
        return Err(Error::invalid("at least one site is required"));
    }
    if coords.ncols() != 2 {
        return Err(Error::invalid(format!(
            "coordinates must have 2 columns, got {}",
            coords.ncols()
        )));
    }
    if m == 0 {
        return Err(Error::invalid("neighbor count m must be at least 1"));
    }
    if coords.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("coordinates must be finite"));
    }
    let m = m.min(j.saturating_sub(1)).max(if j == 1 { 0 } else { 1 });
    let pt = |i: usize| [coords[(i, 0)], coords[(i, 1)]];

    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (pt(a), pt(b));
        pa[0].total_cmp(&pb[0]).then(pa[1].total_cmp(&pb[1])).then(a.cmp(&b))
    });
    for w in order.windows(2) {
        if pt(w[0]) == pt(w[1]) {
            let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
            return Err(Error::invalid(format!(
                "sites {a} and {b} share coordinates ({}, {})",
                pt(a)[0],
                pt(a)[1]
            )));
        }
    }
    let mut rank = vec![0; j];
    for (pos, &site) in order.iter().enumerate() {
        rank[site] = pos;
    }

    let ordered: Vec<[f64; 2]> = order.iter().map(|&s| pt(s)).collect();
    let mut neighbors = Vec::with_capacity(j);
    let mut nb_dists = Vec::with_capacity(j);
    let mut nb_nb_dists = Vec::with_capacity(j);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(j);
    for pos in 0..j {
        cand.clear();
        cand.extend((0..pos).map(|p| (dist(ordered[pos], ordered[p]), p)));
        let keep = m.min(pos);
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if keep < cand.len() {
            cand.select_nth_unstable_by(keep, by_dist);
            cand.truncate(keep);
        }
        cand.sort_by(by_dist);
        let nb: Vec<usize> = cand.iter().map(|c| c.1).collect();
        let dvec: Vec<f64> = cand.iter().map(|c| c.0).collect();
        let k = nb.len();
        let mut dd = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..a {
                let d = dist(ordered[nb[a]], ordered[nb[b]]);
                dd[a * k + b] = d;
                dd[b * k + a] = d;
            }
        }
        neighbors.push(nb);
        nb_dists.push(dvec);
        nb_nb_dists.push(dd);
    }
    let mut children = vec![Vec::new(); j];
    for (pos, nb) in neighbors.iter().enumerate() {
        for (slot, &p) in nb.iter().enumerate() {
            children[p].push((pos, slot));
        }
    }

    let neighbor_sites = neighbors.iter().map(|nb| nb.iter().map(|&p| order[p]).collect()).collect();
    Ok(NngpGraph {
        coords: coords.to_owned(),
        m,
        order,
        rank,
        neighbors,
        neighbor_sites,
        nb_nb_dists,
        nb_dists,
        children,
    })
}

impl NngpGraph {
    pub fn n_sites(&self) -> usize {
        self.order.len()
    }

    /// Effective neighbor count after clamping to `J - 1`.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    /// Site index at each ordered position.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Ordered position of each site.
    pub fn rank(&self) -> &[usize] {
        &self.rank
    }

    /// Neighbor positions (in ordered space) of the site at ordered position `pos`.
    pub fn neighbors(&self, pos: usize) -> &[usize] {
        &self.neighbors[pos]
    }

    pub fn neighbor_distances(&self, pos: usize) -> &[f64] {
        &self.nb_dists[pos]
    }

    pub(crate) fn children(&self, pos: usize) -> &[(usize, usize)] {
        &self.children[pos]
    }

    fn site_point(&self, site: usize) -> [f64; 2] {
        [self.coords[(site, 0)], self.coords[(site, 1)]]
    }

    /// Reorders a site-indexed vector into graph order.
    pub fn to_graph_order(&self, by_site: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&s| by_site[s]).collect()
    }

    /// Ordered positions of the `m` nearest sites to `p` (all sites are candidates).
    fn nearest_to_point(&self, p: [f64; 2], m: usize) -> Vec<(f64, usize)> {
        let mut cand: Vec<(f64, usize)> = (0..self.n_sites())
            .map(|pos| (dist(p, self.site_point(self.order[pos])), pos))
            .collect();
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let keep = m.min(cand.len());
        if keep < cand.len() {
            cand.select_nth_unstable_by(keep, by_dist);
            cand.truncate(keep);
        }
        cand.sort_by(by_dist);
        cand
    }
}

/// Per-site NNGP conditional weights `B_j` and variances `F_j`, indexed by
/// ordered position. Stored as unit-variance quantities plus `sigma_sq`.
#[derive(Clone, Debug)]
pub struct NngpFactors {
    stride: usize,
    b: Vec<f64>,
    f_unit: Vec<f64>,
    sigma_sq: f64,
    work: Vec<f64>,
}

pub fn nngp_factors(graph: &NngpGraph, spec: &CovarianceSpec) -> Result<NngpFactors> {
    spec.check()?;
    let mut f = NngpFactors::empty(graph);
    f.recompute(graph, spec)?;
    Ok(f)
}

impl NngpFactors {
    pub(crate) fn empty(graph: &NngpGraph) -> Self {
        let stride = graph.m.max(1);
        let j = graph.n_sites();
        Self {
            stride,
            b: vec![0.0; j * stride],
            f_unit: vec![1.0; j],
            sigma_sq: 1.0,
            work: vec![0.0; stride * stride],
        }
    }

    /// Refreshes all factors for a new parameter value, reusing buffers.
    pub(crate) fn recompute(&mut self, graph: &NngpGraph, spec: &CovarianceSpec) -> Result<()> {
        let nu = spec.nu.unwrap_or(0.5);
        self.sigma_sq = spec.sigma_sq;
        for pos in 0..graph.n_sites() {
            let k = graph.neighbors[pos].len();
            let b = &mut self.b[pos * self.stride..pos * self.stride + k];
            if k == 0 {
                self.f_unit[pos] = 1.0;
                continue;
            }
            let c = &mut self.work[..k * k];
            let dd = &graph.nb_nb_dists[pos];
            for a in 0..k {
                c[a * k + a] = 1.0;
                for bb in 0..a {
                    c[a * k + bb] = unit_correlation(spec.family, spec.phi, nu, dd[a * k + bb]);
                }
            }
            for (a, &d) in graph.nb_dists[pos].iter().enumerate() {
                b[a] = unit_correlation(spec.family, spec.phi, nu, d);
            }
            chol_in_place(c, k).map_err(|e| {
                Error::numeric(format!(
                    "neighbor covariance of site {} is singular ({e})",
                    graph.order[pos]
                ))
            })?;
            // b currently holds r = C(N, j); F = 1 - rᵀ C⁻¹ r, B = C⁻¹ r
            solve_lower_in_place(c, k, b);
            let quad: f64 = b.iter().map(|v| v * v).sum();
            solve_lower_transpose_in_place(c, k, b);
            let f = 1.0 - quad;
            if !(f > 0.0) {
                return Err(Error::numeric(format!(
                    "non-positive conditional variance at site {}",
                    graph.order[pos]
                )));
            }
            self.f_unit[pos] = f;
        }
        Ok(())
    }

    pub fn weights(&self, graph: &NngpGraph, pos: usize) -> &[f64] {
        let k = graph.neighbors[pos].len();
        &self.b[pos * self.stride..pos * self.stride + k]
    }

    #[inline]
    pub(crate) fn weight(&self, pos: usize, slot: usize) -> f64 {
        self.b[pos * self.stride + slot]
    }

    /// Conditional variance at ordered position `pos`.
    #[inline]
    pub fn variance(&self, pos: usize) -> f64 {
        self.sigma_sq * self.f_unit[pos]
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub(crate) fn set_sigma_sq(&mut self, s: f64) {
        self.sigma_sq = s;
    }

    /// Σ_j (w_j - B_jᵀ w_N(j))² / F̃_j with unit-variance F̃, for site-ordered `w`.
    pub(crate) fn unit_quadratic_form(&self, graph: &NngpGraph, w_site: &[f64]) -> f64 {
        let mut q = 0.0;
        for pos in 0..graph.n_sites() {
            let r = w_site[graph.order[pos]] - self.conditional_mean(graph, pos, w_site);
            q += r * r / self.f_unit[pos];
        }
        q
    }

    #[inline]
    pub(crate) fn conditional_mean(&self, graph: &NngpGraph, pos: usize, w_site: &[f64]) -> f64 {
        let nb = &graph.neighbor_sites[pos];
        let b = &self.b[pos * self.stride..pos * self.stride + nb.len()];
        b.iter().zip(nb).map(|(c, &s)| c * w_site[s]).sum()
    }

    /// Sum of log conditional variances (log-determinant of the NNGP covariance).
    pub(crate) fn log_det(&self) -> f64 {
        let j = self.f_unit.len() as f64;
        self.f_unit.iter().map(|f| f.ln()).sum::<f64>() + j * self.sigma_sq.ln()
    }

    /// NNGP log-density of a site-ordered vector.
    pub(crate) fn log_density_sites(&self, graph: &NngpGraph, w_site: &[f64]) -> f64 {
        let j = graph.n_sites() as f64;
        -0.5 * (j * LN_2PI + self.log_det() + self.unit_quadratic_form(graph, w_site) / self.sigma_sq)
    }
}

/// NNGP log-density of `w` given in graph order.
pub fn nngp_log_density(w: &[f64], graph: &NngpGraph, spec: &CovarianceSpec) -> Result<f64> {
    if w.len() != graph.n_sites() {
        return Err(Error::invalid(format!(
            "w has length {} but graph has {} sites",
            w.len(),
            graph.n_sites()
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("w must be finite"));
    }
    let factors = nngp_factors(graph, spec)?;
    let mut by_site = vec![0.0; w.len()];
    for (pos, &v) in w.iter().enumerate() {
        by_site[graph.order[pos]] = v;
    }
    Ok(factors.log_density_sites(graph, &by_site))
}

/// Conditional mean and variance of the process at `new_coord` given its
/// `m` nearest observed sites. `w` is indexed by site (not graph order).
pub fn conditional_at_new_site(
    graph: &NngpGraph,
    spec: &CovarianceSpec,
    new_coord: [f64; 2],
    w: &[f64],
) -> Result<(f64, f64)> {
    if w.len() != graph.n_sites() {
        return Err(Error::invalid(format!(
            "w has length {} but graph has {} sites",
            w.len(),
            graph.n_sites()
        )));
    }
    spec.check()?;
    let mut scratch = Vec::new();
    new_site_weights(graph, spec, new_coord, &mut scratch).map(|nw| nw.apply(w))
}

/// Kriging weights for a new location; reusable across draws sharing `spec`.
#[derive(Clone, Debug)]
pub(crate) struct NewSiteWeights {
    pub sites: Vec<usize>,
    pub weights: Vec<f64>,
    pub variance: f64,
}

impl NewSiteWeights {
    pub fn apply(&self, w: &[f64]) -> (f64, f64) {
        let mean = self.sites.iter().zip(&self.weights).map(|(&s, &b)| b * w[s]).sum();
        (mean, self.variance)
    }
}

pub(crate) fn new_site_weights(
    graph: &NngpGraph,
    spec: &CovarianceSpec,
    p: [f64; 2],
    scratch: &mut Vec<f64>,
) -> Result<NewSiteWeights> {
    if !(p[0].is_finite() && p[1].is_finite()) {
        return Err(Error::invalid("prediction coordinates must be finite"));
    }
    let m = graph.m.max(1).min(graph.n_sites());
    let near = graph.nearest_to_point(p, m);
    if let Some(&(d, pos)) = near.first() {
        if d == 0.0 {
            return Ok(NewSiteWeights {
                sites: vec![graph.order[pos]],
                weights: vec![1.0],
                variance: 0.0,
            });
        }
    }
    let k = near.len();
    scratch.clear();
    scratch.resize(k * k, 0.0);
    let mut b: Vec<f64> = near.iter().map(|&(d, _)| spec.corr(d)).collect();
    for a in 0..k {
        scratch[a * k + a] = 1.0;
        let pa = graph.site_point(graph.order[near[a].1]);
        for c in 0..a {
            let pc = graph.site_point(graph.order[near[c].1]);
            scratch[a * k + c] = spec.corr(dist(pa, pc));
        }
    }
    chol_in_place(scratch, k)
        .map_err(|e| Error::numeric(format!("neighbor covariance singular for new site: {e}")))?;
    solve_lower_in_place(scratch, k, &mut b);
    let quad: f64 = b.iter().map(|v| v * v).sum();
    solve_lower_transpose_in_place(scratch, k, &mut b);
    let variance = (spec.sigma_sq * (1.0 - quad)).max(0.0);
    Ok(NewSiteWeights {
        sites: near.iter().map(|&(_, pos)| graph.order[pos]).collect(),
        weights: b,
        variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_distance_is_one() {
        for fam in [CovFamily::Exponential, CovFamily::Spherical, CovFamily::Gaussian] {
            let s = CovarianceSpec::new(fam, 3.0, 2.0, None).unwrap();
            assert_eq!(correlation(&s, 0.0).unwrap(), 1.0);
        }
        for nu in [0.5, 1.5, 2.5] {
            let s = CovarianceSpec::new(CovFamily::Matern, 3.0, 2.0, Some(nu)).unwrap();
            assert_eq!(correlation(&s, 0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn closed_forms() {
        let e = CovarianceSpec::exponential(2.0, 1.0).unwrap();
        assert_abs_diff_eq!(correlation(&e, 0.5).unwrap(), (-1f64).exp(), epsilon = 1e-15);
        let s = CovarianceSpec::new(CovFamily::Spherical, 1.0, 1.0, None).unwrap();
        assert_eq!(correlation(&s, 2.0).unwrap(), 0.0);
        assert_abs_diff_eq!(correlation(&s, 0.5).unwrap(), 1.0 - 0.75 + 0.0625, epsilon = 1e-15);
        let g = CovarianceSpec::new(CovFamily::Gaussian, 2.0, 1.0, None).unwrap();
        assert_abs_diff_eq!(correlation(&g, 0.5).unwrap(), (-1f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn rejects_negative_distance_and_bad_params() {
        let e = CovarianceSpec::exponential(2.0, 1.0).unwrap();
        assert!(correlation(&e, -0.1).is_err());
        assert!(CovarianceSpec::exponential(0.0, 1.0).is_err());
        assert!(CovarianceSpec::exponential(1.0, -1.0).is_err());
        assert!(CovarianceSpec::new(CovFamily::Matern, 1.0, 1.0, Some(1.0)).is_err());
        assert!(CovarianceSpec::new(CovFamily::Matern, 1.0, 1.0, None).is_err());
    }

    #[test]
    fn single_site_graph() {
        let g = build_nngp_graph(array![[0.3, 0.4]].view(), 5).unwrap();
        assert_eq!(g.n_sites(), 1);
        assert!(g.neighbors(0).is_empty());
    }

    #[test]
    fn duplicate_coordinates_named() {
        let c = array![[0.0, 0.0], [1.0, 1.0], [0.5, 0.5], [1.0, 1.0]];
        let err = build_nngp_graph(c.view(), 2).unwrap_err().to_string();
        assert!(err.contains("sites 1 and 3"), "{err}");
    }

    #[test]
    fn m_clamped_to_all_predecessors() {
        let c = Array2::from_shape_fn((10, 2), |(i, k)| if k == 0 { i as f64 } else { (i * i) as f64 * 0.1 });
        let g = build_nngp_graph(c.view(), 15).unwrap();
        for pos in 0..10 {
            assert_eq!(g.neighbors(pos).len(), pos);
            assert!(g.neighbors(pos).iter().all(|&p| p < pos));
        }
    }

    #[test]
    fn ordering_by_first_then_second_coordinate() {
        let c = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let g = build_nngp_graph(c.view(), 1).unwrap();
        assert_eq!(g.order(), &[2, 1, 0]);
        assert_eq!(g.rank(), &[2, 1, 0]);
    }

    #[test]
    fn two_site_factors() {
        let c = array![[0.0, 0.0], [1.0, 0.0]];
        let g = build_nngp_graph(c.view(), 1).unwrap();
        let s = CovarianceSpec::exponential(1.0, 1.0).unwrap();
        let f = nngp_factors(&g, &s).unwrap();
        assert!(f.weights(&g, 0).is_empty());
        assert_eq!(f.variance(0), 1.0);
        assert_abs_diff_eq!(f.weights(&g, 1)[0], (-1f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(f.variance(1), 1.0 - (-2f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn first_site_variance_is_sigma_sq() {
        let c = array![[0.0, 0.0], [1.0, 0.0], [0.2, 0.9]];
        let g = build_nngp_graph(c.view(), 2).unwrap();
        let s = CovarianceSpec::exponential(1.5, 2.5).unwrap();
        assert_eq!(nngp_factors(&g, &s).unwrap().variance(0), 2.5);
    }

    #[test]
    fn single_site_log_density() {
        let g = build_nngp_graph(array![[0.0, 0.0]].view(), 1).unwrap();
        let s = CovarianceSpec::exponential(1.0, 1.0).unwrap();
        let ld = nngp_log_density(&[0.0], &g, &s).unwrap();
        assert_abs_diff_eq!(ld, -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-15);
    }

    #[test]
    fn coincident_new_site() {
        let c = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let g = build_nngp_graph(c.view(), 2).unwrap();
        let s = CovarianceSpec::exponential(1.0, 1.0).unwrap();
        let (m, v) = conditional_at_new_site(&g, &s, [1.0, 0.0], &[0.3, -1.2, 0.8]).unwrap();
        assert_eq!((m, v), (-1.2, 0.0));
    }

    #[test]
    fn far_new_site_reverts_to_prior() {
        let c = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let g = build_nngp_graph(c.view(), 2).unwrap();
        let s = CovarianceSpec::exponential(1.0, 1.7).unwrap();
        let (m, v) = conditional_at_new_site(&g, &s, [1e6, 1e6], &[0.3, -1.2, 0.8]).unwrap();
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 1.7, epsilon = 1e-12);
    }
}

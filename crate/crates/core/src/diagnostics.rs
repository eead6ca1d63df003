//! Convergence diagnostics, information criteria, holdout deviances,
//! parameter-recovery metrics and factor pruning.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{collapse_replicates, ChainSamples, PosteriorSamples, SurveyData};
use crate::rngmath::inv_logit;
use crate::simulate::ScenarioTruth;

/// R-hat and effective sample size for one scalar quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostic {
    /// `None` with fewer than two chains or fewer than four draws per chain.
    pub rhat: Option<f64>,
    /// `None` when every draw is identical.
    pub ess: Option<f64>,
    pub zero_variance: bool,
}

impl ChainDiagnostic {
    /// Flags non-convergence at the usual 1.1 threshold.
    pub fn flagged(&self) -> bool {
        self.rhat.is_some_and(|r| !(r < 1.1))
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Classic potential scale reduction of equal-length chains.
fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    let b = n * var(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let half = n / 2;
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        out.push(c[..half].to_vec());
        out.push(c[n - half..n].to_vec());
    }
    out
}

/// Normal scores of pooled ranks (ties get their average rank).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for (c, ch) in chains.iter().enumerate() {
        for (d, &v) in ch.iter().enumerate() {
            all.push((v, c, d));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = std.inverse_cdf((rank - 0.375) / (s + 0.25));
        for e in &all[i..=j] {
            out[e.1][e.2] = z;
        }
        i = j + 1;
    }
    out
}

/// Effective sample size with Geyer's initial monotone sequence.
fn geyer_ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let total = (m * n) as f64;
    if n < 4 {
        return total;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |t: usize| -> f64 {
        let mut acc = 0.0;
        for (c, ch) in chains.iter().enumerate() {
            let mu = means[c];
            let s: f64 = (0..n - t).map(|i| (ch[i] - mu) * (ch[i + t] - mu)).sum();
            acc += s / n as f64;
        }
        acc / m as f64
    };
    let mean_var = acov(0) * n as f64 / (n as f64 - 1.0);
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += var(&means);
    }
    if !(var_plus > 0.0) {
        return total;
    }
    let mut rho = vec![0.0; n + 2];
    rho[0] = 1.0;
    rho[1] = 1.0 - (mean_var - acov(1)) / var_plus;
    let (mut even, mut odd) = (rho[0], rho[1]);
    let mut s = 1;
    while s + 4 < n && even + odd > 0.0 {
        even = 1.0 - (mean_var - acov(s + 1)) / var_plus;
        odd = 1.0 - (mean_var - acov(s + 2)) / var_plus;
        if even + odd >= 0.0 {
            rho[s + 1] = even;
            rho[s + 2] = odd;
        }
        s += 2;
    }
    let max_s = s;
    let mut t = 1;
    while t + 3 <= max_s {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let tau = (-1.0 + 2.0 * rho[..max_s].iter().sum::<f64>() + rho[max_s]).max(1.0 / total.log10().max(1.0));
    total / tau
}

/// Rank-normalized split R-hat (maximum of bulk and folded versions) and
/// bulk effective sample size for one scalar across chains.
pub fn chain_diagnostic(chains: &[Vec<f64>]) -> Result<ChainDiagnostic> {
    if chains.is_empty() || chains.iter().any(|c| c.is_empty()) {
        return Err(Error::invalid("diagnostics need at least one non-empty chain"));
    }
    if chains.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite draw in chain"));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let chains: Vec<Vec<f64>> = chains.iter().map(|c| c[..n].to_vec()).collect();
    let first = chains[0][0];
    let zero_variance = chains.iter().all(|c| c.iter().all(|&v| v == first));
    if zero_variance {
        let rhat = (chains.len() >= 2 && n >= 4).then_some(1.0);
        return Ok(ChainDiagnostic {
            rhat,
            ess: None,
            zero_variance,
        });
    }
    let rhat = if chains.len() >= 2 && n >= 4 {
        let within_const = chains.iter().all(|c| c.iter().all(|&v| v == c[0]));
        if within_const {
            Some(f64::INFINITY)
        } else {
            let sp = split(&chains);
            let bulk = basic_rhat(&rank_normalize(&sp));
            let all: Vec<f64> = sp.iter().flatten().copied().collect();
            let med = quantile_sorted(&sorted(&all), 0.5);
            let folded: Vec<Vec<f64>> = sp.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
            let tail = basic_rhat(&rank_normalize(&folded));
            let r = if tail.is_finite() { bulk.max(tail) } else { bulk };
            Some(if r.is_finite() { r } else { f64::INFINITY })
        }
    } else {
        None
    };
    let ess_chains = if n >= 4 { split(&chains) } else { chains.clone() };
    let ess = geyer_ess(&rank_normalize(&ess_chains));
    Ok(ChainDiagnostic {
        rhat,
        ess: Some(ess),
        zero_variance,
    })
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile (type 7) of sorted values.
pub fn quantile_sorted(x: &[f64], p: f64) -> f64 {
    let h = (x.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    x[lo] + (h - lo as f64) * (x[hi] - x[lo])
}

/// Posterior summary of one scalar parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    pub flagged: bool,
}

fn summarize_scalar(name: String, chains: &[Vec<f64>]) -> Result<ParamSummary> {
    let d = chain_diagnostic(chains)?;
    let s = sorted(&chains.concat());
    let m = mean(&s);
    let sd = if s.len() > 1 { var(&s).sqrt() } else { 0.0 };
    Ok(ParamSummary {
        name,
        mean: m,
        sd,
        q025: quantile_sorted(&s, 0.025),
        q50: quantile_sorted(&s, 0.5),
        q975: quantile_sorted(&s, 0.975),
        rhat: d.rhat,
        ess: d.ess,
        flagged: d.flagged(),
    })
}

/// Every sampled scalar as (name, per-chain draws). Fixed loadings
/// (upper triangle and unit diagonal) are omitted.
pub fn scalar_traces(fit: &PosteriorSamples) -> Vec<(String, Vec<Vec<f64>>)> {
    let mut out = Vec::new();
    let sp = &fit.species_names;
    let first = &fit.chains[0];
    let per3 = |get: &dyn Fn(&ChainSamples) -> Option<&Array3<f64>>, a: usize, b: usize| -> Vec<Vec<f64>> {
        fit.chains.iter().map(|c| get(c).unwrap().slice(ndarray::s![.., a, b]).to_vec()).collect()
    };
    let per2 = |get: &dyn Fn(&ChainSamples) -> Option<&Array2<f64>>, a: usize| -> Vec<Vec<f64>> {
        fit.chains.iter().map(|c| get(c).unwrap().column(a).to_vec()).collect()
    };
    for (t, cov) in fit.occ_covariate_names.iter().enumerate() {
        out.push((format!("mu_beta[{cov}]"), per2(&|c| Some(&c.mu_beta), t)));
        out.push((format!("tau_sq_beta[{cov}]"), per2(&|c| Some(&c.tau_sq_beta), t)));
    }
    if first.alpha.is_some() {
        for (t, cov) in fit.det_covariate_names.iter().enumerate() {
            out.push((format!("mu_alpha[{cov}]"), per2(&|c| c.mu_alpha.as_ref(), t)));
            out.push((format!("tau_sq_alpha[{cov}]"), per2(&|c| c.tau_sq_alpha.as_ref(), t)));
        }
    }
    for (i, s) in sp.iter().enumerate() {
        for (t, cov) in fit.occ_covariate_names.iter().enumerate() {
            out.push((format!("beta[{s},{cov}]"), per3(&|c| Some(&c.beta), i, t)));
        }
    }
    if first.alpha.is_some() {
        for (i, s) in sp.iter().enumerate() {
            for (t, cov) in fit.det_covariate_names.iter().enumerate() {
                out.push((format!("alpha[{s},{cov}]"), per3(&|c| c.alpha.as_ref(), i, t)));
            }
        }
    }
    if let Some(l) = &first.lambda {
        for i in 0..l.dim().1 {
            for r in 0..l.dim().2.min(i) {
                out.push((format!("lambda[{},{}]", sp[i], r + 1), per3(&|c| c.lambda.as_ref(), i, r)));
            }
        }
    }
    if let Some(p) = &first.phi {
        for r in 0..p.ncols() {
            out.push((format!("phi[{}]", r + 1), per2(&|c| c.phi.as_ref(), r)));
        }
    }
    if let Some(p) = &first.sigma_sq {
        for r in 0..p.ncols() {
            out.push((format!("sigma_sq[{}]", r + 1), per2(&|c| c.sigma_sq.as_ref(), r)));
        }
    }
    out
}

/// Summaries of every sampled scalar except the latent process values.
pub fn summarize(fit: &PosteriorSamples) -> Result<Vec<ParamSummary>> {
    scalar_traces(fit)
        .into_iter()
        .map(|(name, chains)| summarize_scalar(name, &chains))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaicResult {
    pub waic: f64,
    /// Log pointwise predictive density, so `waic = -2·elpd + 2·p_waic`.
    pub elpd: f64,
    pub p_waic: f64,
    pub n_points: usize,
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn ln_bern(y: u8, p: f64) -> f64 {
    if y == 1 {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// WAIC from a draws × points matrix of pointwise log-likelihoods.
pub fn waic_from_loglik(ll: &Array2<f64>) -> Result<WaicResult> {
    let (s, n) = ll.dim();
    if s == 0 || n == 0 {
        return Err(Error::invalid("WAIC needs at least one draw and one point"));
    }
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    for (pt, col) in ll.axis_iter(Axis(1)).enumerate() {
        let v = col.to_vec();
        if v.iter().any(|x| x.is_nan()) {
            return Err(Error::numeric(format!("NaN log-likelihood at point {pt}")));
        }
        if v.iter().all(|x| *x == f64::NEG_INFINITY) {
            return Err(Error::numeric(format!("zero likelihood for every draw at point {pt}")));
        }
        lppd += log_sum_exp(&v) - (s as f64).ln();
        if s > 1 {
            if v.iter().any(|x| !x.is_finite()) {
                p_waic = f64::INFINITY;
            } else {
                p_waic += var(&v);
            }
        }
    }
    Ok(WaicResult {
        waic: -2.0 * lppd + 2.0 * p_waic,
        elpd: lppd,
        p_waic,
        n_points: n,
    })
}

/// Detection probability for species `i`, site `j`, replicate `k` at one alpha draw.
fn det_prob(alpha: ndarray::ArrayView1<f64>, data: &SurveyData, j: usize, k: usize) -> f64 {
    let v = data.v_det.slice(ndarray::s![j, k, ..]);
    inv_logit(alpha.dot(&v))
}

/// Pointwise log-likelihood per (species, site) with z integrated out for
/// occupancy variants; the collapsed detection indicator for JSDMs.
pub fn pointwise_loglik(fit: &PosteriorSamples, data: &SurveyData) -> Result<Array2<f64>> {
    let (n, j) = (data.n_species(), data.n_sites());
    if fit.n_species() != n || fit.n_sites() != j {
        return Err(Error::invalid(format!(
            "fit has {} species × {} sites but data has {n} × {j}",
            fit.n_species(),
            fit.n_sites()
        )));
    }
    let detection = fit.spec.variant.has_detection();
    let ystar = if detection { None } else { Some(collapse_replicates(data)?) };
    let mut ll = Array2::zeros((fit.total_draws(), n * j));
    for (row, (c, d)) in fit.draw_index().enumerate() {
        let ch = &fit.chains[c];
        for i in 0..n {
            for s in 0..j {
                let psi = ch.psi[(d, i, s)];
                let v = match &ystar {
                    Some(ys) => ln_bern(ys[(i, s)], psi),
                    None => {
                        let alpha = ch.alpha.as_ref().ok_or_else(|| Error::invalid("missing alpha draws"))?;
                        let a = alpha.slice(ndarray::s![d, i, ..]);
                        let mut l1 = psi.ln();
                        let mut any = false;
                        for k in 0..data.k[s] {
                            if let Some(y) = data.y[(i, s, k)] {
                                any |= y == 1;
                                l1 += ln_bern(y, det_prob(a, data, s, k));
                            }
                        }
                        if any {
                            l1
                        } else {
                            log_sum_exp(&[l1, (1.0 - psi).ln()])
                        }
                    }
                };
                ll[(row, i * j + s)] = v;
            }
        }
    }
    Ok(ll)
}

pub fn waic(fit: &PosteriorSamples, data: &SurveyData) -> Result<WaicResult> {
    waic_from_loglik(&pointwise_loglik(fit, data)?)
}

/// −2 Σ log mean_s Bernoulli(y | p_s) for draws × species × site
/// probabilities of a detection at each holdout cell.
pub fn deviance_from_probs(p: &Array3<f64>, y: &Array2<u8>) -> Result<f64> {
    let (s, n, j) = p.dim();
    if (n, j) != y.dim() || s == 0 {
        return Err(Error::invalid("probability draws and outcomes disagree in shape"));
    }
    let mut dev = 0.0;
    for i in 0..n {
        for jj in 0..j {
            let yy = y[(i, jj)];
            let m = p
                .slice(ndarray::s![.., i, jj])
                .iter()
                .map(|&q| if yy == 1 { q } else { 1.0 - q })
                .sum::<f64>()
                / s as f64;
            dev -= 2.0 * m.ln();
        }
    }
    Ok(dev)
}

/// Deviance of holdout detection data given per-draw predicted occurrence
/// probabilities (draws × species × holdout site) and detection draws.
/// Occupancy variants use ψ·(1 − Π(1 − π)); JSDMs use ψ directly.
pub fn holdout_deviance_data(
    fit: &PosteriorSamples,
    psi_pred: &Array3<f64>,
    holdout: &SurveyData,
) -> Result<f64> {
    let (s, n, h) = psi_pred.dim();
    if s != fit.total_draws() || n != holdout.n_species() || h != holdout.n_sites() {
        return Err(Error::invalid("predicted occurrence draws do not match fit and holdout data"));
    }
    let ystar = collapse_replicates(holdout)?;
    let mut p = psi_pred.clone();
    if fit.spec.variant.has_detection() {
        if holdout.p_det() != fit.det_covariate_names.len() {
            return Err(Error::invalid("holdout detection design has the wrong width"));
        }
        for (row, (c, d)) in fit.draw_index().enumerate() {
            let alpha = fit.chains[c].alpha.as_ref().ok_or_else(|| Error::invalid("missing alpha draws"))?;
            for i in 0..n {
                let a = alpha.slice(ndarray::s![d, i, ..]);
                for j in 0..h {
                    let mut miss = 1.0;
                    for k in 0..holdout.k[j] {
                        if holdout.y[(i, j, k)].is_some() {
                            miss *= 1.0 - det_prob(a, holdout, j, k);
                        }
                    }
                    p[(row, i, j)] *= 1.0 - miss;
                }
            }
        }
    }
    deviance_from_probs(&p, &ystar)
}

/// Plug-in Bernoulli deviance of predicted mean occurrence probabilities
/// against reference posterior-mean occupancy, averaged over references.
pub fn holdout_deviance_latent(psi_mean: &Array2<f64>, references: &[Array2<f64>]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::invalid("latent holdout deviance needs at least one reference fit"));
    }
    let mut total = 0.0;
    for r in references {
        if r.dim() != psi_mean.dim() {
            return Err(Error::invalid("reference occupancy has the wrong shape"));
        }
        let mut dev = 0.0;
        for (&z, &p) in r.iter().zip(psi_mean.iter()) {
            let p = p.clamp(1e-300, 1.0 - 1e-16);
            if z > 0.0 {
                dev -= 2.0 * z * p.ln();
            }
            if z < 1.0 {
                dev -= 2.0 * (1.0 - z) * (1.0 - p).ln();
            }
        }
        total += dev;
    }
    Ok(total / references.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesRecovery {
    pub coverage_psi: f64,
    pub coverage_beta: f64,
    pub rmse_psi: f64,
    pub rmse_beta: f64,
}

/// Coverage is the share of true values inside central 95% intervals;
/// RMSE compares posterior means with truth per species and is averaged
/// across species. Coefficient metrics exclude the intercept unless it is
/// the only occurrence coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub coverage_psi: f64,
    pub coverage_beta: f64,
    pub rmse_psi: f64,
    pub rmse_beta: f64,
    pub per_species: Vec<SpeciesRecovery>,
}

struct Interval {
    mean: f64,
    lo: f64,
    hi: f64,
}

fn interval(draws: &mut [f64]) -> Interval {
    draws.sort_by(f64::total_cmp);
    Interval {
        mean: mean(draws),
        lo: quantile_sorted(draws, 0.025),
        hi: quantile_sorted(draws, 0.975),
    }
}

pub fn recovery_metrics(fit: &PosteriorSamples, truth: &ScenarioTruth) -> Result<RecoveryReport> {
    let (n, j) = truth.psi_true.dim();
    let p = truth.beta_true.ncols();
    if fit.n_species() != n || fit.n_sites() != j || fit.occ_covariate_names.len() != p {
        return Err(Error::invalid("fit and truth disagree in dimensions"));
    }
    let psi = fit.pooled(|c| Some(&c.psi)).expect("psi draws");
    let beta = fit.pooled(|c| Some(&c.beta)).expect("beta draws");
    let coefs: Vec<usize> = if p > 1 { (1..p).collect() } else { vec![0] };
    let mut per_species = Vec::with_capacity(n);
    let (mut cov_psi, mut cov_beta) = (0usize, 0usize);
    for i in 0..n {
        let (mut hit_psi, mut se_psi) = (0usize, 0.0);
        for s in 0..j {
            let iv = interval(&mut psi.slice(ndarray::s![.., i, s]).to_vec());
            let t = truth.psi_true[(i, s)];
            hit_psi += usize::from(iv.lo <= t && t <= iv.hi);
            se_psi += (iv.mean - t).powi(2);
        }
        let (mut hit_beta, mut se_beta) = (0usize, 0.0);
        for &t in &coefs {
            let iv = interval(&mut beta.slice(ndarray::s![.., i, t]).to_vec());
            let tv = truth.beta_true[(i, t)];
            hit_beta += usize::from(iv.lo <= tv && tv <= iv.hi);
            se_beta += (iv.mean - tv).powi(2);
        }
        cov_psi += hit_psi;
        cov_beta += hit_beta;
        per_species.push(SpeciesRecovery {
            coverage_psi: hit_psi as f64 / j as f64,
            coverage_beta: hit_beta as f64 / coefs.len() as f64,
            rmse_psi: (se_psi / j as f64).sqrt(),
            rmse_beta: (se_beta / coefs.len() as f64).sqrt(),
        });
    }
    Ok(RecoveryReport {
        coverage_psi: cov_psi as f64 / (n * j) as f64,
        coverage_beta: cov_beta as f64 / (n * coefs.len()) as f64,
        rmse_psi: per_species.iter().map(|s| s.rmse_psi).sum::<f64>() / n as f64,
        rmse_beta: per_species.iter().map(|s| s.rmse_beta).sum::<f64>() / n as f64,
        per_species,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSummary {
    /// 1-based factor index.
    pub factor: usize,
    /// Posterior means of the free loadings (species below the diagonal).
    pub mean_loadings: Vec<f64>,
    pub median_loadings: Vec<f64>,
    /// Share of free loadings whose 95% interval contains zero.
    pub share_covering_zero: f64,
    pub prune: bool,
}

/// A factor is suggested for pruning when every free loading's 95% interval
/// contains zero and every posterior mean is below `threshold` in size.
pub fn factor_pruning_report(fit: &PosteriorSamples, threshold: f64) -> Result<Vec<FactorSummary>> {
    let lambda = fit
        .pooled(|c| c.lambda.as_ref())
        .ok_or_else(|| Error::invalid(format!("{} has no factor loadings", fit.spec.variant)))?;
    let (_, n, q) = lambda.dim();
    let mut out = Vec::with_capacity(q);
    for r in 0..q {
        let mut means = Vec::new();
        let mut medians = Vec::new();
        let mut cover = 0usize;
        for i in r + 1..n {
            let mut d = lambda.slice(ndarray::s![.., i, r]).to_vec();
            let iv = interval(&mut d);
            means.push(iv.mean);
            medians.push(quantile_sorted(&d, 0.5));
            cover += usize::from(iv.lo <= 0.0 && 0.0 <= iv.hi);
        }
        let free = means.len();
        let prune = free > 0 && cover == free && means.iter().all(|m| m.abs() < threshold);
        out.push(FactorSummary {
            factor: r + 1,
            mean_loadings: means,
            median_loadings: medians,
            share_covering_zero: if free > 0 { cover as f64 / free as f64 } else { 0.0 },
            prune,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngmath::RandomStream;

    fn normal_chains(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut st = RandomStream::new(seed, 0);
        (0..m).map(|_| (0..n).map(|_| st.normal()).collect()).collect()
    }

    #[test]
    fn iid_chains_converge() {
        let d = chain_diagnostic(&normal_chains(3, 1000, 4)).unwrap();
        assert!(d.rhat.unwrap() < 1.02, "{:?}", d);
        let ess = d.ess.unwrap();
        assert!(ess > 2000.0 && ess < 4500.0, "{ess}");
    }

    #[test]
    fn separated_chains_flagged() {
        let mut c = normal_chains(2, 500, 5);
        c[1].iter_mut().for_each(|v| *v += 10.0);
        let d = chain_diagnostic(&c).unwrap();
        assert!(d.rhat.unwrap() > 1.5);
        assert!(d.flagged());
    }

    #[test]
    fn constant_chains() {
        let d = chain_diagnostic(&[vec![2.0; 10], vec![2.0; 10]]).unwrap();
        assert_eq!(d.rhat, Some(1.0));
        assert!(d.zero_variance && d.ess.is_none());
        let d = chain_diagnostic(&[vec![0.0; 10], vec![10.0; 10]]).unwrap();
        assert_eq!(d.rhat, Some(f64::INFINITY));
    }

    #[test]
    fn single_chain_has_no_rhat() {
        let d = chain_diagnostic(&normal_chains(1, 200, 6)).unwrap();
        assert!(d.rhat.is_none());
        assert!(d.ess.unwrap() > 0.0);
    }

    #[test]
    fn autocorrelated_chain_has_smaller_ess() {
        let mut st = RandomStream::new(7, 0);
        let mut x = 0.0;
        let c: Vec<f64> = (0..4000)
            .map(|_| {
                x = 0.9 * x + st.normal();
                x
            })
            .collect();
        let ess = chain_diagnostic(&[c]).unwrap().ess.unwrap();
        // AR(1) with 0.9: ESS ≈ N (1 − ρ)/(1 + ρ) ≈ 210
        assert!(ess > 120.0 && ess < 350.0, "{ess}");
    }

    #[test]
    fn waic_identity_and_single_draw() {
        let ll = Array2::from_shape_vec((2, 2), vec![-1.0, -2.0, -1.5, -0.5]).unwrap();
        let w = waic_from_loglik(&ll).unwrap();
        assert!((w.waic - (-2.0 * w.elpd + 2.0 * w.p_waic)).abs() < 1e-12);
        let one = Array2::from_shape_vec((1, 2), vec![-1.0, -2.0]).unwrap();
        let w = waic_from_loglik(&one).unwrap();
        assert_eq!(w.p_waic, 0.0);
        assert!((w.waic - 6.0).abs() < 1e-12);
    }

    #[test]
    fn waic_zero_likelihood_errors() {
        let ll = Array2::from_shape_vec((2, 2), vec![-1.0, f64::NEG_INFINITY, -1.0, f64::NEG_INFINITY]).unwrap();
        let e = waic_from_loglik(&ll).unwrap_err().to_string();
        assert!(e.contains("point 1"), "{e}");
    }

    #[test]
    fn deviance_examples() {
        let p = Array3::from_elem((1, 1, 1), 0.5);
        let y = Array2::from_elem((1, 1), 1u8);
        assert!((deviance_from_probs(&p, &y).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        let psi = Array2::from_elem((1, 1), 0.5);
        let z = Array2::from_elem((1, 1), 1.0);
        assert!((holdout_deviance_latent(&psi, &[z]).unwrap() - 1.386294361).abs() < 1e-8);
        assert!(holdout_deviance_latent(&psi, &[]).is_err());
    }

    #[test]
    fn type7_quantiles() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&x, 0.5), 2.5);
        assert_eq!(quantile_sorted(&x, 0.0), 1.0);
        assert_eq!(quantile_sorted(&x, 1.0), 4.0);
    }
}

//! The batch commands. Each reads one JSON config, writes its outputs and a
//! run manifest into the output directory.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sfocc::diagnostics::{
    holdout_deviance_data, holdout_deviance_latent, quantile_sorted, recovery_metrics, summarize, waic,
    ParamSummary, RecoveryReport,
};
use sfocc::io::{fmt_f64, read_posterior, read_sites, read_survey, sha256_file, write_json, write_posterior, write_survey};
use sfocc::model::order_by_detection_frequency;
use sfocc::predict::{predict_occurrence, richness, PredictionGrid};
use sfocc::simulate::{simulate_custom, simulate_scenario};
use sfocc::{reorder_species, run_model, validate, PosteriorSamples, RandomStream, SurveyData, Variant};

use crate::config::{
    complete_spec, load, CompareConfig, FitConfig, PredictConfig, SimstudyConfig, SimulateConfig, DEFAULT_SEED,
};
use crate::manifest::{unix_now, FileDigest, RunManifest, RunStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Fit,
    Predict,
    Compare,
    Simstudy,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Predict => "predict",
            Command::Compare => "compare",
            Command::Simstudy => "simstudy",
        }
    }

    pub fn from_name(name: &str) -> Option<Command> {
        [
            Command::Simulate,
            Command::Fit,
            Command::Predict,
            Command::Compare,
            Command::Simstudy,
        ]
        .into_iter()
        .find(|c| c.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

#[derive(Default)]
struct Outcome {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    volatile: Vec<PathBuf>,
    seed: Option<u64>,
    variant: Option<String>,
}

fn config_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Runs one command and writes its manifest, also when the command fails
/// after the output directory exists.
pub fn run_command(cmd: Command, opts: &RunOptions) -> Result<RunManifest> {
    let config = std::fs::canonicalize(&opts.config)
        .with_context(|| format!("config {} not found", opts.config.display()))?;
    let config_sha256 = sha256_file(&config)?;
    std::fs::create_dir_all(&opts.out).with_context(|| format!("cannot create {}", opts.out.display()))?;
    let out = std::fs::canonicalize(&opts.out)?;
    let started = unix_now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        if w == 0 {
            bail!("--workers must be at least 1");
        }
        builder = builder.num_threads(w);
    }
    let pool = builder.build()?;
    let result = pool.install(|| match cmd {
        Command::Simulate => cmd_simulate(&config, &out, opts.seed),
        Command::Fit => cmd_fit(&config, &out, opts.seed),
        Command::Predict => cmd_predict(&config, &out, opts.seed),
        Command::Compare => cmd_compare(&config, &out, opts.seed),
        Command::Simstudy => cmd_simstudy(&config, &out, opts.seed),
    });
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: cmd.name().to_string(),
        config_path: config.clone(),
        config_sha256,
        seed_override: opts.seed,
        seed: None,
        workers: opts.workers,
        variant: None,
        inputs: Vec::new(),
        outputs: Vec::new(),
        volatile_outputs: Vec::new(),
        started_unix: started,
        finished_unix: 0,
        status: RunStatus::Complete,
        error: None,
    };
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            manifest.status = RunStatus::Invalid;
            manifest.error = Some(format!("{e:#}"));
            manifest.finished_unix = unix_now();
            manifest.write(&out)?;
            return Err(e);
        }
    };
    let rel = |p: &Path| p.strip_prefix(&out).unwrap_or(p).display().to_string();
    for p in &outcome.inputs {
        let abs = std::fs::canonicalize(p).unwrap_or_else(|_| p.clone());
        manifest.inputs.push(FileDigest::of(&abs, abs.display().to_string())?);
    }
    for p in &outcome.outputs {
        manifest.outputs.push(FileDigest::of(p, rel(p))?);
    }
    manifest.volatile_outputs = outcome.volatile.iter().map(|p| rel(p)).collect();
    manifest.seed = outcome.seed;
    manifest.variant = outcome.variant;
    manifest.finished_unix = unix_now();
    manifest.write(&out)?;
    Ok(manifest)
}

/// Re-executes the run recorded in `manifest_path` into `out` and checks
/// that inputs are unchanged and every stable output is byte-identical.
pub fn rerun(manifest_path: &Path, out: &Path) -> Result<RunManifest> {
    let old = RunManifest::read(manifest_path)?;
    let cmd = Command::from_name(&old.command).ok_or_else(|| anyhow!("unknown command `{}`", old.command))?;
    if sha256_file(&old.config_path)? != old.config_sha256 {
        bail!("config {} changed since the recorded run", old.config_path.display());
    }
    for input in &old.inputs {
        if sha256_file(Path::new(&input.path))? != input.sha256 {
            bail!("input {} changed since the recorded run", input.path);
        }
    }
    let new = run_command(
        cmd,
        &RunOptions {
            config: old.config_path.clone(),
            out: out.to_path_buf(),
            seed: old.seed_override,
            workers: old.workers,
        },
    )?;
    let produced: HashMap<&str, &str> = new.outputs.iter().map(|o| (o.path.as_str(), o.sha256.as_str())).collect();
    let mut mismatches = Vec::new();
    for o in old.stable_outputs() {
        if produced.get(o.path.as_str()) != Some(&o.sha256.as_str()) {
            mismatches.push(o.path.clone());
        }
    }
    if !mismatches.is_empty() {
        bail!("rerun outputs differ: {}", mismatches.join(", "));
    }
    Ok(new)
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    ))
}

fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<Outcome> {
    let cfg: SimulateConfig = load(config)?;
    let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let (data, truth) = match (cfg.scenario, &cfg.custom) {
        (Some(id), None) => simulate_scenario(id, seed)?,
        (None, Some(c)) => simulate_custom(c, seed)?,
        _ => bail!("simulate config needs exactly one of `scenario` or `custom`"),
    };
    let files = write_survey(&data, out)?;
    let truth_path = out.join("truth.json");
    write_json(&truth_path, &truth)?;
    let mut outputs: Vec<PathBuf> = files.paths().into_iter().map(Path::to_path_buf).collect();
    outputs.push(truth_path);
    Ok(Outcome {
        inputs: Vec::new(),
        outputs,
        seed: Some(seed),
        ..Default::default()
    })
}

/// Reorders species so that `names` come first in the given order.
fn species_order(data: &SurveyData, names: &[String]) -> Result<Vec<usize>> {
    let mut order = Vec::with_capacity(data.n_species());
    for name in names {
        let i = data
            .species_names
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| anyhow!("species `{name}` not in the data"))?;
        if order.contains(&i) {
            bail!("species `{name}` listed twice in species_order");
        }
        order.push(i);
    }
    let rest: Vec<usize> = (0..data.n_species()).filter(|i| !order.contains(i)).collect();
    order.extend(rest);
    Ok(order)
}

/// Reorders `data` to the species order of a fit.
fn align_species(data: &SurveyData, fit: &PosteriorSamples) -> Result<SurveyData> {
    if data.species_names.len() != fit.species_names.len() {
        bail!("data and fit have different species");
    }
    let order = species_order(data, &fit.species_names)?;
    Ok(reorder_species(data, &order)?)
}

#[derive(Serialize)]
struct FitSummary {
    variant: Variant,
    n_species: usize,
    n_sites: usize,
    n_chains: usize,
    draws_per_chain: usize,
    occ_covariates: Vec<String>,
    det_covariates: Vec<String>,
    species: Vec<String>,
    warnings: Vec<String>,
    phi_acceptance: Vec<Vec<f64>>,
    n_flagged: usize,
    parameters: Vec<ParamSummary>,
}

fn cmd_fit(config: &Path, out: &Path, seed: Option<u64>) -> Result<Outcome> {
    let cfg: FitConfig = load(config)?;
    let seed = seed.or(cfg.mcmc.seed).unwrap_or(DEFAULT_SEED);
    let mcmc = cfg.mcmc.to_config(seed)?;
    let spec = complete_spec(cfg.model.clone());
    let files = cfg.data.resolve(&config_dir(config));
    let mut data = read_survey(&files)?;
    if let Some(names) = &cfg.species_order {
        data = reorder_species(&data, &species_order(&data, names)?)?;
    } else if cfg.order_by_detections {
        data = reorder_species(&data, &order_by_detection_frequency(&data))?;
    }
    let report = validate(&data, &spec);
    if !report.is_ok() {
        write_json(&out.join("validation.json"), &report)?;
        bail!("validation failed:\n  {}", report.errors.join("\n  "));
    }
    let fit = run_model(&spec, &data, &mcmc)?;
    let mut outputs = write_posterior(&fit, out)?;
    let parameters = summarize(&fit)?;
    let summary = FitSummary {
        variant: spec.variant,
        n_species: data.n_species(),
        n_sites: data.n_sites(),
        n_chains: mcmc.n_chains,
        draws_per_chain: mcmc.n_retained(),
        occ_covariates: data.occ_covariate_names.clone(),
        det_covariates: if spec.variant.has_detection() {
            data.det_covariate_names.clone()
        } else {
            Vec::new()
        },
        species: data.species_names.clone(),
        warnings: report.warnings,
        phi_acceptance: fit.chains.iter().map(|c| c.phi_acceptance.clone()).collect(),
        n_flagged: parameters.iter().filter(|p| p.flagged).count(),
        parameters,
    };
    let path = out.join("summary.json");
    write_json(&path, &summary)?;
    outputs.push(path);
    Ok(Outcome {
        inputs: files.paths().into_iter().map(Path::to_path_buf).collect(),
        outputs,
        seed: Some(seed),
        variant: Some(spec.variant.to_string()),
        ..Default::default()
    })
}

fn read_grid(fit: &PosteriorSamples, coords: &Path, covs: Option<&Path>) -> Result<(Vec<String>, PredictionGrid)> {
    let (names, xy, x, cov_names) = read_sites(coords, covs)?;
    if names.is_empty() {
        bail!("prediction grid {} has no sites", coords.display());
    }
    if cov_names != fit.occ_covariate_names {
        bail!(
            "grid covariates [{}] do not match the fit's [{}]",
            cov_names[1..].join(", "),
            fit.occ_covariate_names[1..].join(", ")
        );
    }
    Ok((names, PredictionGrid::new(xy, x)?))
}

fn cmd_predict(config: &Path, out: &Path, seed: Option<u64>) -> Result<Outcome> {
    let cfg: PredictConfig = load(config)?;
    let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let base = config_dir(config);
    let fit_dir = base.join(&cfg.fit);
    let fit = read_posterior(&fit_dir)?;
    let coords = base.join(&cfg.coords);
    let covs = cfg.occ_covariates.as_ref().map(|p| base.join(p));
    let (names, grid) = read_grid(&fit, &coords, covs.as_deref())?;
    let subset: Vec<usize> = match &cfg.richness_species {
        None => (0..fit.n_species()).collect(),
        Some(list) => list
            .iter()
            .map(|s| {
                fit.species_names
                    .iter()
                    .position(|n| n == s)
                    .ok_or_else(|| anyhow!("species `{s}` not in the fit"))
            })
            .collect::<Result<_>>()?,
    };
    let pred = predict_occurrence(&fit, &grid, None, seed)?;
    let rich = richness(&pred.z, &subset)?;

    let psi_path = out.join("psi.csv");
    let mut w = csv_writer(&psi_path)?;
    writeln!(w, "species,site,x,y,mean,sd,q025,q975")?;
    let n_draws = pred.psi.dim().0 as f64;
    for (i, sp) in fit.species_names.iter().enumerate() {
        for (t, site) in names.iter().enumerate() {
            let mut d = pred.psi.slice(ndarray::s![.., i, t]).to_vec();
            d.sort_by(f64::total_cmp);
            let mean = d.iter().sum::<f64>() / n_draws;
            let sd = if d.len() > 1 {
                (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_draws - 1.0)).sqrt()
            } else {
                0.0
            };
            writeln!(
                w,
                "{sp},{site},{},{},{},{},{},{}",
                fmt_f64(grid.coords[(t, 0)]),
                fmt_f64(grid.coords[(t, 1)]),
                fmt_f64(mean),
                fmt_f64(sd),
                fmt_f64(quantile_sorted(&d, 0.025)),
                fmt_f64(quantile_sorted(&d, 0.975))
            )?;
        }
    }
    w.flush()?;
    let rich_path = out.join("richness.csv");
    let mut w = csv_writer(&rich_path)?;
    writeln!(w, "site,x,y,mean,sd")?;
    for (t, site) in names.iter().enumerate() {
        writeln!(
            w,
            "{site},{},{},{},{}",
            fmt_f64(grid.coords[(t, 0)]),
            fmt_f64(grid.coords[(t, 1)]),
            fmt_f64(rich.mean[t]),
            fmt_f64(rich.sd[t])
        )?;
    }
    w.flush()?;
    let mut inputs = vec![coords];
    inputs.extend(covs);
    inputs.extend(store_files(&fit_dir)?);
    Ok(Outcome {
        inputs,
        outputs: vec![psi_path, rich_path],
        seed: Some(seed),
        variant: Some(fit.spec.variant.to_string()),
        ..Default::default()
    })
}

/// Files of a posterior store, sorted by name.
fn store_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name == sfocc::io::FIT_META_FILE || (name.ends_with(".csv"))
        })
        .collect();
    v.sort();
    Ok(v)
}

/// One row of the model comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub fit: String,
    pub model: Variant,
    pub waic: f64,
    pub elpd: f64,
    pub p_waic: f64,
    pub data_deviance: Option<f64>,
    pub latent_deviance: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn cmd_compare(config: &Path, out: &Path, seed: Option<u64>) -> Result<Outcome> {
    let cfg: CompareConfig = load(config)?;
    let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let base = config_dir(config);
    if cfg.fits.is_empty() {
        bail!("compare needs at least one fit");
    }
    let files = cfg.data.resolve(&base);
    let data = read_survey(&files)?;
    let holdout_files = cfg.holdout.as_ref().map(|h| h.resolve(&base));
    let holdout = holdout_files.as_ref().map(read_survey).transpose()?;
    let references: Vec<PosteriorSamples> = cfg
        .references
        .iter()
        .map(|p| read_posterior(&base.join(p)))
        .collect::<Result<_, _>>()?;
    if !references.is_empty() && holdout.is_none() {
        bail!("latent deviance needs holdout data");
    }
    let mut inputs: Vec<PathBuf> = files.paths().into_iter().map(Path::to_path_buf).collect();
    if let Some(h) = &holdout_files {
        inputs.extend(h.paths().into_iter().map(Path::to_path_buf));
    }
    let mut rows = Vec::new();
    for (k, rel) in cfg.fits.iter().enumerate() {
        let dir = base.join(rel);
        let fit = read_posterior(&dir)?;
        inputs.extend(store_files(&dir)?);
        let train = align_species(&data, &fit)?;
        if train.digest() != fit.data_digest {
            bail!("fit {} was trained on different data", dir.display());
        }
        let w = waic(&fit, &train)?;
        let (mut data_dev, mut latent_dev) = (None, None);
        if let Some(h) = &holdout {
            let h = align_species(h, &fit)?;
            let grid = PredictionGrid::new(h.coords.clone(), h.x_occ.clone())?;
            let pred = predict_occurrence(&fit, &grid, None, seed.wrapping_add(k as u64))?;
            data_dev = Some(holdout_deviance_data(&fit, &pred.psi, &h)?);
            if !references.is_empty() {
                let psi_mean = pred.psi.mean_axis(Axis(0)).expect("at least one draw");
                let refs = references
                    .iter()
                    .map(|r| reference_occupancy(r, &fit.species_names, &h.site_names))
                    .collect::<Result<Vec<_>>>()?;
                latent_dev = Some(holdout_deviance_latent(&psi_mean, &refs)?);
            }
        }
        rows.push(ComparisonRow {
            fit: rel.display().to_string(),
            model: fit.spec.variant,
            waic: w.waic,
            elpd: w.elpd,
            p_waic: w.p_waic,
            data_deviance: data_dev,
            latent_deviance: latent_dev,
        });
    }
    let path = out.join("comparison.csv");
    let mut f = csv_writer(&path)?;
    writeln!(
        f,
        "fit,model,detection,waic_occupancy,waic_jsdm,elpd,p_waic,data_deviance,latent_deviance"
    )?;
    for r in &rows {
        let occ = r.model.has_detection();
        writeln!(
            f,
            "\"{}\",{},{},{},{},{},{},{},{}",
            r.fit,
            r.model,
            if occ { "imperfect" } else { "none" },
            if occ { fmt_f64(r.waic) } else { String::new() },
            if occ { String::new() } else { fmt_f64(r.waic) },
            fmt_f64(r.elpd),
            fmt_f64(r.p_waic),
            opt(r.data_deviance),
            opt(r.latent_deviance)
        )?;
    }
    f.flush()?;
    Ok(Outcome {
        inputs,
        outputs: vec![path],
        seed: Some(seed),
        ..Default::default()
    })
}

/// Posterior-mean occupancy of a reference fit at the given species and sites.
fn reference_occupancy(reference: &PosteriorSamples, species: &[String], sites: &[String]) -> Result<Array2<f64>> {
    let zm = reference
        .z_mean
        .as_ref()
        .ok_or_else(|| anyhow!("reference fits must model imperfect detection"))?;
    let mut out = Array2::zeros((species.len(), sites.len()));
    for (i, sp) in species.iter().enumerate() {
        let ri = reference
            .species_names
            .iter()
            .position(|s| s == sp)
            .ok_or_else(|| anyhow!("reference fit lacks species `{sp}`"))?;
        for (t, site) in sites.iter().enumerate() {
            let rs = reference
                .site_names
                .iter()
                .position(|s| s == site)
                .ok_or_else(|| anyhow!("reference fit lacks site `{site}`"))?;
            out[(i, t)] = zm[(ri, rs)];
        }
    }
    Ok(out)
}

/// Seed of the simulated dataset for one scenario replicate.
pub fn replicate_seed(seed: u64, scenario: u8, replicate: usize) -> u64 {
    RandomStream::new(seed, scenario as u64).substream(replicate as u64).seed()
}

/// Seed of the sampler for one scenario replicate (independent of the data).
pub fn replicate_mcmc_seed(seed: u64, scenario: u8, replicate: usize) -> u64 {
    RandomStream::new(replicate_seed(seed, scenario, replicate), 0)
        .substream(u64::MAX)
        .seed()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub scenario: u8,
    pub replicate: usize,
    pub model: Variant,
    pub metrics: Option<RecoveryReport>,
    pub error: Option<String>,
    pub seconds: f64,
}

/// Simulates one replicate of `scenario` and fits every model to it.
pub fn run_replicate(cfg: &SimstudyConfig, seed: u64, scenario: u8, replicate: usize) -> Vec<ReplicateResult> {
    let data_seed = replicate_seed(seed, scenario, replicate);
    let sim = simulate_scenario(scenario, data_seed);
    cfg.models
        .iter()
        .map(|&model| {
            let start = Instant::now();
            let res = (|| -> Result<RecoveryReport> {
                let (data, truth) = sim.as_ref().map_err(|e| anyhow!("{e}"))?;
                let mcmc = cfg.mcmc.to_config(replicate_mcmc_seed(seed, scenario, replicate))?;
                let fit = run_model(&cfg.spec(model), data, &mcmc)?;
                Ok(recovery_metrics(&fit, truth)?)
            })();
            let seconds = start.elapsed().as_secs_f64();
            let (metrics, error) = match res {
                Ok(m) => (Some(m), None),
                Err(e) => (None, Some(format!("{e:#}"))),
            };
            ReplicateResult {
                scenario,
                replicate,
                model,
                metrics,
                error,
                seconds,
            }
        })
        .collect()
}

fn write_table(
    path: &Path,
    cfg: &SimstudyConfig,
    results: &[ReplicateResult],
    value: impl Fn(&RecoveryReport) -> f64,
) -> Result<()> {
    let mut f = csv_writer(path)?;
    let header: Vec<&str> = cfg.models.iter().map(|m| m.name()).collect();
    writeln!(f, "scenario,{}", header.join(","))?;
    for &sc in &cfg.scenarios {
        let cells: Vec<String> = cfg
            .models
            .iter()
            .map(|&m| {
                let vals: Vec<f64> = results
                    .iter()
                    .filter(|r| r.scenario == sc && r.model == m)
                    .filter_map(|r| r.metrics.as_ref().map(&value))
                    .collect();
                if vals.is_empty() {
                    String::new()
                } else {
                    fmt_f64(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            })
            .collect();
        writeln!(f, "{sc},{}", cells.join(","))?;
    }
    f.flush()?;
    Ok(())
}

fn cmd_simstudy(config: &Path, out: &Path, seed: Option<u64>) -> Result<Outcome> {
    let cfg: SimstudyConfig = load(config)?;
    cfg.check()?;
    cfg.mcmc.to_config(0)?;
    let seed = seed.or(cfg.seed).or(cfg.mcmc.seed).unwrap_or(DEFAULT_SEED);
    let units: Vec<(u8, usize)> = cfg
        .scenarios
        .iter()
        .flat_map(|&s| (0..cfg.n_replicates).map(move |r| (s, r)))
        .collect();
    let results: Vec<ReplicateResult> = units
        .par_iter()
        .flat_map_iter(|&(s, r)| run_replicate(&cfg, seed, s, r))
        .collect();

    let rep_path = out.join("replicates.csv");
    let mut f = csv_writer(&rep_path)?;
    writeln!(f, "scenario,replicate,model,status,coverage_psi,coverage_beta,rmse_psi,rmse_beta")?;
    for r in &results {
        match &r.metrics {
            Some(m) => writeln!(
                f,
                "{},{},{},ok,{},{},{},{}",
                r.scenario,
                r.replicate + 1,
                r.model,
                fmt_f64(m.coverage_psi),
                fmt_f64(m.coverage_beta),
                fmt_f64(m.rmse_psi),
                fmt_f64(m.rmse_beta)
            )?,
            None => writeln!(f, "{},{},{},failed,,,,", r.scenario, r.replicate + 1, r.model)?,
        }
    }
    f.flush()?;
    let tables = [
        ("coverage_psi.csv", 0),
        ("coverage_beta.csv", 1),
        ("rmse_psi.csv", 2),
        ("rmse_beta.csv", 3),
    ];
    let mut outputs = vec![rep_path];
    for (name, which) in tables {
        let path = out.join(name);
        write_table(&path, &cfg, &results, |m| match which {
            0 => 100.0 * m.coverage_psi,
            1 => 100.0 * m.coverage_beta,
            2 => m.rmse_psi,
            _ => m.rmse_beta,
        })?;
        outputs.push(path);
    }
    let mut failures: BTreeMap<String, usize> = BTreeMap::new();
    let mut errors = Vec::new();
    for r in results.iter().filter(|r| r.error.is_some()) {
        *failures.entry(format!("scenario {} {}", r.scenario, r.model)).or_default() += 1;
        errors.push(format!(
            "scenario {} replicate {} {}: {}",
            r.scenario,
            r.replicate + 1,
            r.model,
            r.error.as_deref().unwrap_or("")
        ));
    }
    let fail_path = out.join("failures.json");
    write_json(
        &fail_path,
        &serde_json::json!({ "n_failed": errors.len(), "by_cell": failures, "errors": errors }),
    )?;
    outputs.push(fail_path);
    let rt_path = out.join("runtime.csv");
    let mut f = csv_writer(&rt_path)?;
    writeln!(f, "model,mean_seconds")?;
    for &m in &cfg.models {
        let t: Vec<f64> = results.iter().filter(|r| r.model == m).map(|r| r.seconds).collect();
        writeln!(f, "{m},{:.3}", t.iter().sum::<f64>() / t.len().max(1) as f64)?;
    }
    f.flush()?;
    outputs.push(rt_path.clone());
    Ok(Outcome {
        inputs: Vec::new(),
        outputs,
        volatile: vec![rt_path],
        seed: Some(seed),
        variant: None,
    })
}

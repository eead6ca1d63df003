//! CSV and JSON formats for survey data, simulation truth and posterior stores.
//!
//! Survey data:
//! - detections: `species,site,replicate,y` with replicate 1-based and `y`
//!   one of `0`, `1`, empty or `NA` (missing);
//! - coordinates: `site,x,y`, which also fixes the site order;
//! - occurrence covariates: `site,<name>...` (intercept implied);
//! - detection covariates: `site,replicate,<name>...` (intercept implied).
//!
//! Posterior store: `fit.json` metadata plus one long CSV per parameter block
//! with columns `chain,iteration,parameter,value`. Occurrence probabilities
//! are recomputed on load; latent occupancy is kept as its posterior mean.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{occurrence_probabilities, ChainSamples, McmcConfig, ModelSpec, PosteriorSamples, SurveyData};

pub const DETECTIONS_FILE: &str = "detections.csv";
pub const COORDS_FILE: &str = "coords.csv";
pub const OCC_COVARIATES_FILE: &str = "occ_covariates.csv";
pub const DET_COVARIATES_FILE: &str = "det_covariates.csv";
pub const FIT_META_FILE: &str = "fit.json";

const INTERCEPT: &str = "(Intercept)";

/// Shortest decimal text that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| format_err(path, e.to_string()))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| format_err(path, e.to_string()))
}

/// Locations of the survey CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataFiles {
    pub detections: PathBuf,
    pub coords: PathBuf,
    #[serde(default)]
    pub occ_covariates: Option<PathBuf>,
    #[serde(default)]
    pub det_covariates: Option<PathBuf>,
}

impl DataFiles {
    /// Standard file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            detections: dir.join(DETECTIONS_FILE),
            coords: dir.join(COORDS_FILE),
            occ_covariates: Some(dir.join(OCC_COVARIATES_FILE)),
            det_covariates: Some(dir.join(DET_COVARIATES_FILE)),
        }
    }

    pub fn paths(&self) -> Vec<&Path> {
        let mut v = vec![self.detections.as_path(), self.coords.as_path()];
        v.extend(self.occ_covariates.as_deref());
        v.extend(self.det_covariates.as_deref());
        v
    }
}

/// Writes the four survey CSVs into `dir`.
pub fn write_survey(data: &SurveyData, dir: &Path) -> Result<DataFiles> {
    std::fs::create_dir_all(dir)?;
    let files = DataFiles::in_dir(dir);
    let (n, j, _) = data.y.dim();

    let mut w = csv::Writer::from_path(&files.detections)?;
    w.write_record(["species", "site", "replicate", "y"])?;
    for i in 0..n {
        for s in 0..j {
            for k in 0..data.k[s] {
                let y = data.y[(i, s, k)].map_or(String::new(), |v| v.to_string());
                w.write_record([&data.species_names[i], &data.site_names[s], &(k + 1).to_string(), &y])?;
            }
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&files.coords)?;
    w.write_record(["site", "x", "y"])?;
    for s in 0..j {
        w.write_record([
            data.site_names[s].clone(),
            fmt_f64(data.coords[(s, 0)]),
            fmt_f64(data.coords[(s, 1)]),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(files.occ_covariates.as_ref().unwrap())?;
    let mut header = vec!["site".to_string()];
    header.extend(data.occ_covariate_names.iter().skip(1).cloned());
    w.write_record(&header)?;
    for s in 0..j {
        let mut row = vec![data.site_names[s].clone()];
        row.extend((1..data.p_occ()).map(|t| fmt_f64(data.x_occ[(s, t)])));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(files.det_covariates.as_ref().unwrap())?;
    let mut header = vec!["site".to_string(), "replicate".to_string()];
    header.extend(data.det_covariate_names.iter().skip(1).cloned());
    w.write_record(&header)?;
    for s in 0..j {
        for k in 0..data.k[s] {
            let mut row = vec![data.site_names[s].clone(), (k + 1).to_string()];
            row.extend((1..data.p_det()).map(|t| fmt_f64(data.v_det[(s, k, t)])));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(files)
}

fn open_csv(path: &Path) -> Result<(csv::Reader<File>, Vec<String>)> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let header = r
        .headers()
        .map_err(|e| format_err(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    Ok((r, header))
}

fn expect_columns(path: &Path, header: &[String], expected: &[&str]) -> Result<()> {
    if header.len() < expected.len() || header.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(format_err(path, format!("header must start with {}", expected.join(","))));
    }
    Ok(())
}

fn parse_f64(path: &Path, line: u64, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| format_err(path, format!("line {line}: `{v}` is not a number")))
}

fn parse_index(path: &Path, line: u64, v: &str) -> Result<usize> {
    match v.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(k - 1),
        _ => Err(format_err(path, format!("line {line}: replicate `{v}` must be a positive integer"))),
    }
}

/// Reads survey CSVs. Site order follows the coordinates file; species order
/// follows first appearance in the detections file.
pub fn read_survey(files: &DataFiles) -> Result<SurveyData> {
    // coordinates
    let path = &files.coords;
    let (mut r, header) = open_csv(path)?;
    expect_columns(path, &header, &["site", "x", "y"])?;
    let mut site_names = Vec::new();
    let mut site_index = HashMap::new();
    let mut xy = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let line = line as u64 + 2;
        let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
        let name = rec[0].to_string();
        if site_index.insert(name.clone(), site_names.len()).is_some() {
            return Err(format_err(path, format!("line {line}: site `{name}` listed twice")));
        }
        site_names.push(name);
        xy.push(parse_f64(path, line, &rec[1])?);
        xy.push(parse_f64(path, line, &rec[2])?);
    }
    let j = site_names.len();
    if j == 0 {
        return Err(format_err(path, "no sites"));
    }
    let coords = Array2::from_shape_vec((j, 2), xy).expect("two columns per site");

    // detections
    let path = &files.detections;
    let (mut r, header) = open_csv(path)?;
    expect_columns(path, &header, &["species", "site", "replicate", "y"])?;
    let mut species_names: Vec<String> = Vec::new();
    let mut species_index = HashMap::new();
    let mut cells: Vec<(usize, usize, usize, Option<u8>, u64)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let line = line as u64 + 2;
        let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
        let sp = rec[0].to_string();
        let i = *species_index.entry(sp.clone()).or_insert_with(|| {
            species_names.push(sp);
            species_names.len() - 1
        });
        let s = *site_index
            .get(&rec[1])
            .ok_or_else(|| format_err(path, format!("line {line}: unknown site `{}`", &rec[1])))?;
        let k = parse_index(path, line, &rec[2])?;
        let y = match &rec[3] {
            "" | "NA" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => return Err(format_err(path, format!("line {line}: y must be 0, 1 or missing, got `{other}`"))),
        };
        cells.push((i, s, k, y, line));
    }
    let n = species_names.len();
    if n == 0 {
        return Err(format_err(path, "no detection rows"));
    }
    let mut kvec = vec![0usize; j];
    for &(_, s, k, _, _) in &cells {
        kvec[s] = kvec[s].max(k + 1);
    }
    let k_max = kvec.iter().copied().max().unwrap_or(0);
    let mut y = Array3::from_elem((n, j, k_max), None);
    let mut seen = Array3::from_elem((n, j, k_max), false);
    for (i, s, k, v, line) in cells {
        if std::mem::replace(&mut seen[(i, s, k)], true) {
            return Err(format_err(path, format!("line {line}: duplicate (species, site, replicate)")));
        }
        y[(i, s, k)] = v;
    }

    // occurrence covariates
    let mut occ_names = vec![INTERCEPT.to_string()];
    let mut x_occ = Array2::ones((j, 1));
    if let Some(path) = &files.occ_covariates {
        let (mut r, header) = open_csv(path)?;
        expect_columns(path, &header, &["site"])?;
        let p = header.len();
        occ_names.extend(header[1..].iter().cloned());
        x_occ = Array2::from_elem((j, p), f64::NAN);
        x_occ.column_mut(0).fill(1.0);
        let mut filled = vec![false; j];
        for (line, rec) in r.records().enumerate() {
            let line = line as u64 + 2;
            let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
            let s = *site_index
                .get(&rec[0])
                .ok_or_else(|| format_err(path, format!("line {line}: unknown site `{}`", &rec[0])))?;
            if std::mem::replace(&mut filled[s], true) {
                return Err(format_err(path, format!("line {line}: site listed twice")));
            }
            for t in 1..p {
                x_occ[(s, t)] = parse_f64(path, line, &rec[t])?;
            }
        }
        if let Some(s) = filled.iter().position(|f| !f) {
            return Err(format_err(path, format!("no covariates for site `{}`", site_names[s])));
        }
    }

    // detection covariates
    let mut det_names = vec![INTERCEPT.to_string()];
    let mut v_det = Array3::from_elem((j, k_max, 1), f64::NAN);
    for s in 0..j {
        for k in 0..kvec[s] {
            v_det[(s, k, 0)] = 1.0;
        }
    }
    if let Some(path) = &files.det_covariates {
        let (mut r, header) = open_csv(path)?;
        expect_columns(path, &header, &["site", "replicate"])?;
        let p = header.len() - 1;
        det_names.extend(header[2..].iter().cloned());
        let mut full = Array3::from_elem((j, k_max, p), f64::NAN);
        let mut filled = Array2::from_elem((j, k_max), false);
        for (line, rec) in r.records().enumerate() {
            let line = line as u64 + 2;
            let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
            let s = *site_index
                .get(&rec[0])
                .ok_or_else(|| format_err(path, format!("line {line}: unknown site `{}`", &rec[0])))?;
            let k = parse_index(path, line, &rec[1])?;
            if k >= kvec[s] {
                continue;
            }
            filled[(s, k)] = true;
            full[(s, k, 0)] = 1.0;
            for t in 1..p {
                full[(s, k, t)] = parse_f64(path, line, &rec[t + 1])?;
            }
        }
        for s in 0..j {
            for k in 0..kvec[s] {
                if !filled[(s, k)] {
                    return Err(format_err(
                        path,
                        format!("no covariates for site `{}`, replicate {}", site_names[s], k + 1),
                    ));
                }
            }
        }
        v_det = full;
    }

    Ok(SurveyData {
        y,
        coords,
        x_occ,
        v_det,
        k: kvec,
        species_names,
        site_names,
        occ_covariate_names: occ_names,
        det_covariate_names: det_names,
    })
}

/// Reads prediction sites (`site,x,y`) and their occurrence covariates
/// (`site,<name>...`, intercept implied). Returns site names, coordinates,
/// the design matrix and the design column names.
pub fn read_sites(coords: &Path, occ_covariates: Option<&Path>) -> Result<(Vec<String>, Array2<f64>, Array2<f64>, Vec<String>)> {
    let (mut r, header) = open_csv(coords)?;
    expect_columns(coords, &header, &["site", "x", "y"])?;
    let mut names = Vec::new();
    let mut index = HashMap::new();
    let mut xy = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let line = line as u64 + 2;
        let rec = rec.map_err(|e| format_err(coords, e.to_string()))?;
        if index.insert(rec[0].to_string(), names.len()).is_some() {
            return Err(format_err(coords, format!("line {line}: site `{}` listed twice", &rec[0])));
        }
        names.push(rec[0].to_string());
        xy.push(parse_f64(coords, line, &rec[1])?);
        xy.push(parse_f64(coords, line, &rec[2])?);
    }
    let j = names.len();
    let xy = Array2::from_shape_vec((j, 2), xy).expect("two columns per site");
    let mut cov_names = vec![INTERCEPT.to_string()];
    let mut x = Array2::ones((j, 1));
    if let Some(path) = occ_covariates {
        let (mut r, header) = open_csv(path)?;
        expect_columns(path, &header, &["site"])?;
        let p = header.len();
        cov_names.extend(header[1..].iter().cloned());
        x = Array2::ones((j, p));
        let mut filled = vec![false; j];
        for (line, rec) in r.records().enumerate() {
            let line = line as u64 + 2;
            let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
            let s = *index
                .get(&rec[0])
                .ok_or_else(|| format_err(path, format!("line {line}: unknown site `{}`", &rec[0])))?;
            filled[s] = true;
            for t in 1..p {
                x[(s, t)] = parse_f64(path, line, &rec[t])?;
            }
        }
        if let Some(s) = filled.iter().position(|f| !f) {
            return Err(format_err(path, format!("no covariates for site `{}`", names[s])));
        }
    }
    Ok((names, xy, x, cov_names))
}

/// Metadata of a posterior store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub spec: ModelSpec,
    pub mcmc: McmcConfig,
    pub data_digest: String,
    pub species_names: Vec<String>,
    pub site_names: Vec<String>,
    pub occ_covariate_names: Vec<String>,
    pub det_covariate_names: Vec<String>,
    pub coords: Array2<f64>,
    pub x_occ: Array2<f64>,
    pub draws_per_chain: Vec<usize>,
    pub phi_acceptance: Vec<Vec<f64>>,
    pub phi_tuning: Vec<Vec<f64>>,
    pub blocks: Vec<String>,
}

struct Block {
    name: &'static str,
    /// parameter labels in storage order
    labels: Vec<String>,
}

fn process_labels(fit: &PosteriorSamples) -> Vec<String> {
    if fit.spec.variant.is_species_spatial() {
        fit.species_names.clone()
    } else {
        (1..=fit.spec.q.unwrap_or(0)).map(|r| r.to_string()).collect()
    }
}

fn blocks(fit: &PosteriorSamples) -> Vec<Block> {
    let sp = &fit.species_names;
    let grid = |name: &str, rows: &[String], cols: &[String]| -> Vec<String> {
        rows.iter()
            .flat_map(|r| cols.iter().map(move |c| format!("{name}[{r},{c}]")))
            .collect()
    };
    let vec_labels = |name: &str, items: &[String]| -> Vec<String> { items.iter().map(|c| format!("{name}[{c}]")).collect() };
    let occ = &fit.occ_covariate_names;
    let det = &fit.det_covariate_names;
    let variant = fit.spec.variant;
    let mut out = vec![
        Block {
            name: "beta",
            labels: grid("beta", sp, occ),
        },
        Block {
            name: "mu_beta",
            labels: vec_labels("mu_beta", occ),
        },
        Block {
            name: "tau_sq_beta",
            labels: vec_labels("tau_sq_beta", occ),
        },
    ];
    if variant.has_detection() {
        out.push(Block {
            name: "alpha",
            labels: grid("alpha", sp, det),
        });
        out.push(Block {
            name: "mu_alpha",
            labels: vec_labels("mu_alpha", det),
        });
        out.push(Block {
            name: "tau_sq_alpha",
            labels: vec_labels("tau_sq_alpha", det),
        });
    }
    let procs = process_labels(fit);
    if variant.is_factor() {
        out.push(Block {
            name: "lambda",
            labels: grid("lambda", sp, &procs),
        });
    }
    if variant.is_factor() || variant.is_species_spatial() {
        out.push(Block {
            name: "w",
            labels: grid("w", &procs, &fit.site_names),
        });
    }
    if variant.is_spatial() {
        out.push(Block {
            name: "phi",
            labels: vec_labels("phi", &procs),
        });
    }
    if variant.is_species_spatial() {
        out.push(Block {
            name: "sigma_sq",
            labels: vec_labels("sigma_sq", &procs),
        });
    }
    out
}

/// Flattened values of one draw of a block, in label order.
fn block_values(ch: &ChainSamples, name: &str, d: usize) -> Vec<f64> {
    let a3 = |a: &Array3<f64>| a.slice(s![d, .., ..]).iter().copied().collect::<Vec<_>>();
    let a2 = |a: &Array2<f64>| a.row(d).to_vec();
    match name {
        "beta" => a3(&ch.beta),
        "mu_beta" => a2(&ch.mu_beta),
        "tau_sq_beta" => a2(&ch.tau_sq_beta),
        "alpha" => a3(ch.alpha.as_ref().unwrap()),
        "mu_alpha" => a2(ch.mu_alpha.as_ref().unwrap()),
        "tau_sq_alpha" => a2(ch.tau_sq_alpha.as_ref().unwrap()),
        "lambda" => a3(ch.lambda.as_ref().unwrap()),
        "w" => a3(ch.w.as_ref().unwrap()),
        "phi" => a2(ch.phi.as_ref().unwrap()),
        "sigma_sq" => a2(ch.sigma_sq.as_ref().unwrap()),
        _ => unreachable!("unknown block {name}"),
    }
}

fn kept_iterations(mcmc: &McmcConfig) -> Vec<usize> {
    (1..=mcmc.n_iterations).filter(|&it| mcmc.keeps(it)).collect()
}

/// Writes a posterior store into `dir` and returns the files written.
pub fn write_posterior(fit: &PosteriorSamples, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let iters = kept_iterations(&fit.mcmc);
    let bl = blocks(fit);
    let mut written = Vec::new();
    for b in &bl {
        let path = dir.join(format!("{}.csv", b.name));
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "chain,iteration,parameter,value")?;
        for (c, ch) in fit.chains.iter().enumerate() {
            for d in 0..ch.n_draws() {
                let vals = block_values(ch, b.name, d);
                let it = iters.get(d).copied().unwrap_or(d + 1);
                for (label, v) in b.labels.iter().zip(vals) {
                    writeln!(w, "{},{},\"{}\",{}", c + 1, it, label, fmt_f64(v))?;
                }
            }
        }
        w.flush()?;
        written.push(path);
    }
    if let Some(zm) = &fit.z_mean {
        let path = dir.join("z_mean.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["species", "site", "value"])?;
        for (i, sp) in fit.species_names.iter().enumerate() {
            for (s, site) in fit.site_names.iter().enumerate() {
                w.write_record([sp.as_str(), site.as_str(), &fmt_f64(zm[(i, s)])])?;
            }
        }
        w.flush()?;
        written.push(path);
    }
    let meta = FitMeta {
        spec: fit.spec.clone(),
        mcmc: fit.mcmc.clone(),
        data_digest: fit.data_digest.clone(),
        species_names: fit.species_names.clone(),
        site_names: fit.site_names.clone(),
        occ_covariate_names: fit.occ_covariate_names.clone(),
        det_covariate_names: fit.det_covariate_names.clone(),
        coords: fit.coords.clone(),
        x_occ: fit.x_occ.clone(),
        draws_per_chain: fit.chains.iter().map(|c| c.n_draws()).collect(),
        phi_acceptance: fit.chains.iter().map(|c| c.phi_acceptance.clone()).collect(),
        phi_tuning: fit.chains.iter().map(|c| c.phi_tuning.clone()).collect(),
        blocks: bl.iter().map(|b| b.name.to_string()).collect(),
    };
    let path = dir.join(FIT_META_FILE);
    write_json(&path, &meta)?;
    written.push(path);
    Ok(written)
}

/// Reads one block CSV into per-chain draw × label matrices.
fn read_block(path: &Path, labels: &[String], draws: &[usize]) -> Result<Vec<Array2<f64>>> {
    let (mut r, header) = open_csv(path)?;
    expect_columns(path, &header, &["chain", "iteration", "parameter", "value"])?;
    let width = labels.len();
    let mut out: Vec<Array2<f64>> = draws.iter().map(|&d| Array2::zeros((d, width))).collect();
    let mut records = r.records();
    for (c, &nd) in draws.iter().enumerate() {
        for d in 0..nd {
            for (t, label) in labels.iter().enumerate() {
                let rec = records
                    .next()
                    .ok_or_else(|| format_err(path, "store ends early"))?
                    .map_err(|e| format_err(path, e.to_string()))?;
                let line = rec.position().map_or(0, |p| p.line());
                if rec[0] != *(c + 1).to_string() || rec[2] != *label.as_str() {
                    return Err(format_err(
                        path,
                        format!("line {line}: expected chain {} parameter {label}", c + 1),
                    ));
                }
                out[c][(d, t)] = parse_f64(path, line, &rec[3])?;
            }
        }
    }
    if records.next().is_some() {
        return Err(format_err(path, "unexpected trailing rows"));
    }
    Ok(out)
}

/// Loads a posterior store written by [`write_posterior`].
pub fn read_posterior(dir: &Path) -> Result<PosteriorSamples> {
    let meta: FitMeta = read_json(&dir.join(FIT_META_FILE))?;
    let n = meta.species_names.len();
    let j = meta.site_names.len();
    let draws = &meta.draws_per_chain;
    let mut fit = PosteriorSamples {
        spec: meta.spec.clone(),
        mcmc: meta.mcmc.clone(),
        data_digest: meta.data_digest.clone(),
        coords: meta.coords.clone(),
        x_occ: meta.x_occ.clone(),
        species_names: meta.species_names.clone(),
        site_names: meta.site_names.clone(),
        occ_covariate_names: meta.occ_covariate_names.clone(),
        det_covariate_names: meta.det_covariate_names.clone(),
        chains: Vec::new(),
        z_mean: None,
    };
    let bl = blocks(&fit);
    let mut per_block: HashMap<&str, Vec<Array2<f64>>> = HashMap::new();
    for b in &bl {
        per_block.insert(b.name, read_block(&dir.join(format!("{}.csv", b.name)), &b.labels, draws)?);
    }
    let to3 = |m: &Array2<f64>, a: usize, b: usize| -> Array3<f64> {
        Array3::from_shape_vec((m.nrows(), a, b), m.iter().copied().collect()).expect("block shape")
    };
    let p = meta.occ_covariate_names.len();
    let pd = meta.det_covariate_names.len();
    let n_proc = process_labels(&fit).len();
    for c in 0..draws.len() {
        let get = |name: &str| per_block.get(name).map(|v| v[c].clone());
        let beta = to3(&get("beta").unwrap(), n, p);
        let alpha = get("alpha").map(|m| to3(&m, n, pd));
        let lambda = get("lambda").map(|m| to3(&m, n, n_proc));
        let w = get("w").map(|m| to3(&m, n_proc, j));
        let nd = draws[c];
        let mut psi = Array3::zeros((nd, n, j));
        for d in 0..nd {
            let pd = occurrence_probabilities(
                meta.x_occ.view(),
                beta.slice(s![d, .., ..]),
                lambda.as_ref().map(|l| l.slice(s![d, .., ..])),
                w.as_ref().map(|w| w.slice(s![d, .., ..])),
            );
            psi.slice_mut(s![d, .., ..]).assign(&pd);
        }
        fit.chains.push(ChainSamples {
            beta,
            alpha,
            mu_beta: get("mu_beta").unwrap(),
            tau_sq_beta: get("tau_sq_beta").unwrap(),
            mu_alpha: get("mu_alpha"),
            tau_sq_alpha: get("tau_sq_alpha"),
            lambda,
            w,
            z: None,
            phi: get("phi"),
            sigma_sq: get("sigma_sq"),
            psi,
            phi_acceptance: meta.phi_acceptance.get(c).cloned().unwrap_or_default(),
            phi_tuning: meta.phi_tuning.get(c).cloned().unwrap_or_default(),
        });
    }
    let zpath = dir.join("z_mean.csv");
    if fit.spec.variant.has_detection() {
        let (mut r, header) = open_csv(&zpath)?;
        expect_columns(&zpath, &header, &["species", "site", "value"])?;
        let mut zm = Array2::zeros((n, j));
        let mut count = 0;
        for rec in r.records() {
            let rec = rec.map_err(|e| format_err(&zpath, e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            if count >= n * j {
                return Err(format_err(&zpath, "unexpected trailing rows"));
            }
            let (i, s) = (count / j, count % j);
            if rec[0] != *fit.species_names[i] || rec[1] != *fit.site_names[s] {
                return Err(format_err(&zpath, format!("line {line}: rows out of order")));
            }
            zm[(i, s)] = parse_f64(&zpath, line, &rec[2])?;
            count += 1;
        }
        if count != n * j {
            return Err(format_err(&zpath, "store ends early"));
        }
        fit.z_mean = Some(zm);
    }
    Ok(fit)
}

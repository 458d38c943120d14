//! Subcommand implementations. Each returns the JSON object printed on
//! stdout.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use msno_core::fem::{relative_errors, solve_fine_diffusion, solve_fine_richards, FineSolution, PicardOptions, RelativeErrors};
use msno_core::field::{kle_eigendecomposition, sample_forcing, sample_kle_field, CoefficientField, ForcingField, ForcingKind};
use msno_core::gmsfem::{breakeven, solve_gmsfem_diffusion, solve_gmsfem_richards, GmsfemSolution};
use msno_core::msbasis::{assemble_restriction, offline_basis, BasisSet};
use msno_core::rng::mix;
use msno_core::{DomainKind, GridPair};
use msno_neural::predictor::{predict_basis, train_checkpoint, PredictorCheckpoint};
use msno_neural::train::{extract_patches, LossKind};

use crate::config::ExperimentConfig;
use crate::io::{self, BasisRecord, DatasetHeader, DatasetManifest, Sample};
use crate::report::{Environment, MethodReport, RunReport, SampleErrors, Timings};

/// Options shared by every subcommand.
#[derive(Clone, Debug)]
pub struct Common {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    Diffusion,
    Richards,
}

impl Equation {
    pub fn name(&self) -> &'static str {
        match self {
            Equation::Diffusion => "diffusion",
            Equation::Richards => "richards",
        }
    }

    /// Dataset field holding the cached fine reference.
    pub fn reference_field(&self) -> String {
        format!("u_{}", self.name())
    }
}

impl FromStr for Equation {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "diffusion" => Ok(Equation::Diffusion),
            "richards" => Ok(Equation::Richards),
            other => bail!("unknown equation '{other}' (expected diffusion or richards)"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Fine,
    Gmsfem,
    GmsfemNo,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Fine => "fine",
            Method::Gmsfem => "gmsfem",
            Method::GmsfemNo => "gmsfem-no",
        }
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "fine" => Ok(Method::Fine),
            "gmsfem" => Ok(Method::Gmsfem),
            "gmsfem-no" => Ok(Method::GmsfemNo),
            other => bail!("unknown method '{other}' (expected fine, gmsfem or gmsfem-no)"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reference {
    None,
    Diffusion,
    Richards,
    Both,
}

impl FromStr for Reference {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "none" => Ok(Reference::None),
            "diffusion" => Ok(Reference::Diffusion),
            "richards" => Ok(Reference::Richards),
            "both" => Ok(Reference::Both),
            other => bail!("unknown reference '{other}' (expected none, diffusion, richards or both)"),
        }
    }
}

/// `a..b` or `a:b`, end exclusive.
pub fn parse_range(s: &str) -> anyhow::Result<Range<usize>> {
    let (a, b) = s.split_once("..").or_else(|| s.split_once(':')).ok_or_else(|| anyhow!("range '{s}' is not of the form a..b"))?;
    let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
    if a > b {
        bail!("range '{s}' is reversed");
    }
    Ok(a..b)
}

pub fn warn(message: &str) {
    eprintln!("{}", json!({ "warning": message }));
}

fn digest(entries: impl IntoIterator<Item = String>) -> String {
    io::sha256_hex(entries.into_iter().collect::<Vec<_>>().join("\n").as_bytes())
}

fn now_unix() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn solve_fine(eq: Equation, grid: &GridPair, kappa: &CoefficientField, f: &ForcingField, picard: &PicardOptions) -> msno_core::Result<FineSolution> {
    match eq {
        Equation::Diffusion => solve_fine_diffusion(grid, kappa, f),
        Equation::Richards => solve_fine_richards(grid, kappa, f, picard),
    }
}

fn solve_coarse(
    eq: Equation,
    grid: &GridPair,
    kappa: &CoefficientField,
    f: &ForcingField,
    bases: &[BasisSet],
    picard: &PicardOptions,
) -> msno_core::Result<GmsfemSolution> {
    let r = assemble_restriction(bases, grid)?;
    match eq {
        Equation::Diffusion => solve_gmsfem_diffusion(grid, kappa, f, &r),
        Equation::Richards => solve_gmsfem_richards(grid, kappa, f, &r, picard),
    }
}

struct Problem {
    kappa: CoefficientField,
    forcing: ForcingField,
}

fn problem_from_sample(s: &Sample, kind: ForcingKind) -> anyhow::Result<Problem> {
    let field = |name: &str| s.fields.get(name).cloned().ok_or_else(|| anyhow!("dataset sample {} has no '{name}' field", s.seed));
    Ok(Problem { kappa: CoefficientField::from_values(field("kappa")?)?, forcing: ForcingField { values: field("forcing")?, kind } })
}

fn load_dataset(data: &Path, range: Option<Range<usize>>) -> anyhow::Result<(DatasetManifest, Range<usize>, Vec<Sample>)> {
    let m = io::read_dataset_manifest(data)?;
    let range = range.unwrap_or(0..m.sample_count);
    let samples = io::read_samples(data, &m, range.clone())?;
    Ok((m, range, samples))
}

fn dataset_grid(c: &Common, m: &DatasetManifest) -> anyhow::Result<GridPair> {
    if (m.n_coarse, m.n_fine) != (c.config.n_coarse, c.config.n_fine) {
        warn(&format!(
            "dataset grid {}/{} differs from config {}/{}; using the dataset grid",
            m.n_coarse, m.n_fine, c.config.n_coarse, c.config.n_fine
        ));
    }
    Ok(GridPair::new(m.n_coarse, m.n_fine)?)
}

fn load_checkpoint(path: &Path, requested: Option<LossKind>) -> anyhow::Result<PredictorCheckpoint> {
    let ck = io::read_checkpoint(path)?;
    if let Some(req) = requested {
        if req != ck.manifest.loss.kind {
            warn(&format!(
                "requested loss '{}' but the checkpoint was trained with '{}'; using the checkpoint",
                req.name(),
                ck.manifest.loss.kind.name()
            ));
        }
    }
    Ok(ck)
}

// ---------------------------------------------------------------- gen-data

pub fn gen_data(c: &Common, samples: Option<usize>, forcing: ForcingKind, reference: Reference) -> anyhow::Result<Value> {
    let cfg = &c.config;
    let grid = cfg.grid()?;
    let n = samples.unwrap_or(cfg.samples);
    let decomp = kle_eigendecomposition(&cfg.kle)?;
    let seeds: Vec<u64> = (0..n as u64).map(|i| mix(c.seed, i)).collect();
    let built: Vec<anyhow::Result<Sample>> = seeds
        .par_iter()
        .map(|&seed| {
            let kappa = sample_kle_field(&decomp, seed, &grid)?;
            let f = sample_forcing(forcing, seed, &grid, &cfg.forcing)?;
            let mut fields = BTreeMap::new();
            if matches!(reference, Reference::Diffusion | Reference::Both) {
                fields.insert(Equation::Diffusion.reference_field(), solve_fine(Equation::Diffusion, &grid, &kappa, &f, &cfg.picard)?.values);
            }
            if matches!(reference, Reference::Richards | Reference::Both) {
                fields.insert(Equation::Richards.reference_field(), solve_fine(Equation::Richards, &grid, &kappa, &f, &cfg.picard)?.values);
            }
            fields.insert("kappa".into(), kappa.values);
            fields.insert("forcing".into(), f.values);
            Ok(Sample { seed, fields })
        })
        .collect();
    let samples = built.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let header = DatasetHeader {
        n_coarse: cfg.n_coarse,
        n_fine: cfg.n_fine,
        kle: cfg.kle,
        forcing_kind: forcing,
        forcing: cfg.forcing,
        created_unix: now_unix(),
    };
    let m = io::write_dataset(&c.out, &header, &samples)?;
    Ok(json!({
        "command": "gen-data",
        "out": c.out.display().to_string(),
        "samples": m.sample_count,
        "fields": m.fields,
        "forcing": forcing,
        "digest": digest(m.files.iter().map(|(k, e)| format!("{k} {}", e.sha256))),
    }))
}

// ------------------------------------------------------------- build-basis

pub fn build_basis(c: &Common, data: &Path, range: Option<Range<usize>>) -> anyhow::Result<Value> {
    let (m, _, samples) = load_dataset(data, range)?;
    let grid = dataset_grid(c, &m)?;
    let n_bf = c.config.n_bf;
    let records: Vec<anyhow::Result<BasisRecord>> = samples
        .par_iter()
        .map(|s| {
            let p = problem_from_sample(s, m.forcing_kind)?;
            let t = Instant::now();
            let (sets, eigen) = offline_basis(&grid, &p.kappa, n_bf)?;
            Ok(BasisRecord { seed: s.seed, sets, offline_seconds: t.elapsed().as_secs_f64(), eigen })
        })
        .collect();
    let records = records.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let bm = io::write_basis_store(&c.out, &grid, n_bf, &records)?;
    let diags = bm.eigen.iter().flatten();
    let worst = |f: fn(&msno_core::msbasis::EigenDiagnostics) -> f64| diags.clone().map(f).fold(0.0, f64::max);
    Ok(json!({
        "command": "build-basis",
        "out": c.out.display().to_string(),
        "samples": bm.sample_count,
        "n_bf": n_bf,
        "eigenproblems": bm.eigen.iter().map(Vec::len).sum::<usize>(),
        "max_eigen_residual": worst(|d| d.max_residual),
        "max_s_orthonormality": worst(|d| d.s_orthonormality),
        "max_null_ratio": worst(|d| d.null_ratio),
        "digest": digest(bm.files.iter().map(|(k, e)| format!("{k} {}", e.sha256))),
    }))
}

// ------------------------------------------------------------------- train

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTiming {
    /// Classical offline time spent producing the training targets.
    pub data_seconds: f64,
    pub train_seconds: f64,
}

pub const TRAIN_TIMING: &str = "timing.json";

pub fn train(c: &Common, data: &Path, basis: Option<&Path>, range: Option<Range<usize>>, loss: Option<LossKind>, epochs: Option<usize>) -> anyhow::Result<Value> {
    let (m, range, samples) = load_dataset(data, range)?;
    if samples.is_empty() {
        bail!("no training samples in range {range:?}");
    }
    let grid = dataset_grid(c, &m)?;
    let n_bf = c.config.n_bf;
    let store = match basis {
        Some(dir) => {
            let bm: io::BasisManifest = io::read_manifest(dir)?;
            if bm.n_bf != n_bf || (bm.n_coarse, bm.n_fine) != (m.n_coarse, m.n_fine) {
                bail!("basis store {} does not match the dataset grid or N_bf = {n_bf}", dir.display());
            }
            Some((dir, bm))
        }
        None => None,
    };
    let mut data_seconds = 0.0;
    let mut patches = Vec::new();
    for (s, i) in samples.iter().zip(range.clone()) {
        let p = problem_from_sample(s, m.forcing_kind)?;
        let sets = match &store {
            Some((dir, bm)) => {
                let j = bm.seeds.iter().position(|&x| x == s.seed).ok_or_else(|| anyhow!("basis store has no sample with seed {} (dataset index {i})", s.seed))?;
                data_seconds += bm.offline_seconds[j];
                io::read_basis_sets(dir, bm, j)?
            }
            None => {
                let t = Instant::now();
                let sets = offline_basis(&grid, &p.kappa, n_bf)?.0;
                data_seconds += t.elapsed().as_secs_f64();
                sets
            }
        };
        patches.extend(extract_patches(&grid, &p.kappa, Some(&sets))?);
    }
    let mut tc = c.config.train.clone();
    if let Some(l) = loss {
        tc.loss = l;
    }
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    let t = Instant::now();
    let ck = train_checkpoint(&patches, &tc.plans(&grid, n_bf), n_bf, &tc.loss_spec(), &tc.options(c.seed))?;
    let train_seconds = t.elapsed().as_secs_f64();
    let cm = io::write_checkpoint(&c.out, &ck)?;
    io::write_json(&c.out.join(TRAIN_TIMING), &TrainTiming { data_seconds, train_seconds })?;
    let final_loss: BTreeMap<DomainKind, f64> = ck.manifest.loss_curves.iter().filter_map(|(k, v)| v.last().map(|x| (*k, *x))).collect();
    let initial_loss: BTreeMap<DomainKind, f64> = ck.manifest.loss_curves.iter().filter_map(|(k, v)| v.first().map(|x| (*k, *x))).collect();
    let tensors = cm.models.values().flat_map(|e| match e {
        io::ModelEntry::Ffno { tensors, .. } => tensors.iter().map(|t| format!("{} {}", t.file, t.sha256)).collect(),
        io::ModelEntry::Oracle => Vec::new(),
    });
    Ok(json!({
        "command": "train",
        "out": c.out.display().to_string(),
        "loss": ck.manifest.loss.kind,
        "epochs": ck.manifest.epochs,
        "patches": ck.manifest.training_patches,
        "initial_loss": initial_loss,
        "final_loss": final_loss,
        "diverged": ck.manifest.diverged,
        "digest": digest(tensors),
    }))
}

// ------------------------------------------------------------------- solve

pub struct SolveArgs<'a> {
    pub method: Method,
    pub equation: Equation,
    pub forcing: ForcingKind,
    pub data: Option<&'a Path>,
    pub sample: usize,
    pub checkpoint: Option<&'a Path>,
    pub loss: Option<LossKind>,
}

pub fn solve(c: &Common, a: &SolveArgs) -> anyhow::Result<Value> {
    let cfg = &c.config;
    let (grid, problem, reference, seed, forcing) = match a.data {
        Some(dir) => {
            let (m, _, mut s) = load_dataset(dir, Some(a.sample..a.sample + 1)).with_context(|| format!("sample {}", a.sample))?;
            let grid = dataset_grid(c, &m)?;
            let s = s.pop().expect("one sample");
            let reference = s.fields.get(&a.equation.reference_field()).cloned();
            (grid, problem_from_sample(&s, m.forcing_kind)?, reference, s.seed, m.forcing_kind)
        }
        None => {
            let grid = cfg.grid()?;
            let decomp = kle_eigendecomposition(&cfg.kle)?;
            let kappa = sample_kle_field(&decomp, c.seed, &grid)?;
            let forcing = sample_forcing(a.forcing, c.seed, &grid, &cfg.forcing)?;
            (grid, Problem { kappa, forcing }, None, c.seed, a.forcing)
        }
    };
    let (solution, coarse) = match a.method {
        Method::Fine => (solve_fine(a.equation, &grid, &problem.kappa, &problem.forcing, &cfg.picard)?, None),
        Method::Gmsfem | Method::GmsfemNo => {
            let bases = if a.method == Method::Gmsfem {
                offline_basis(&grid, &problem.kappa, cfg.n_bf)?.0
            } else {
                let path = a.checkpoint.ok_or_else(|| anyhow!("--method gmsfem-no needs --checkpoint"))?;
                predict_basis(&load_checkpoint(path, a.loss)?, &problem.kappa, &grid)?
            };
            let s = solve_coarse(a.equation, &grid, &problem.kappa, &problem.forcing, &bases, &cfg.picard)?;
            (s.solution, Some(s.coarse))
        }
    };
    let header = DatasetHeader { n_coarse: grid.n_coarse(), n_fine: grid.n_fine(), kle: cfg.kle, forcing_kind: forcing, forcing: cfg.forcing, created_unix: now_unix() };
    let mut fields = BTreeMap::new();
    fields.insert("u".to_string(), solution.values.clone());
    let m = io::write_dataset(&c.out, &header, &[Sample { seed, fields }])?;
    let errors = match reference {
        Some(r) => Some(relative_errors(&FineSolution { values: r, picard: None }, &solution, &grid)?),
        None => None,
    };
    Ok(json!({
        "command": "solve",
        "out": c.out.display().to_string(),
        "method": a.method.name(),
        "equation": a.equation.name(),
        "seed": seed,
        "picard_iterations": solution.picard.as_ref().map(|p| p.iterations),
        "regularized_coarse_solves": coarse.map(|v| v.iter().filter(|d| d.regularized()).count()),
        "errors_vs_reference": errors,
        "solution_sha256": m.files.values().next().map(|e| e.sha256.clone()),
    }))
}

// ---------------------------------------------------------------- evaluate

struct SampleOutcome {
    errors: BTreeMap<&'static str, RelativeErrors>,
    offline_seconds: f64,
    inference_seconds: Option<f64>,
    fine_seconds: Option<f64>,
    max_eigen_residual: f64,
    regularized: usize,
}

pub fn evaluate(
    c: &Common,
    data: &Path,
    range: Option<Range<usize>>,
    checkpoint: Option<&Path>,
    equation: Equation,
    recompute: bool,
    loss: Option<LossKind>,
) -> anyhow::Result<Value> {
    let (m, range, samples) = load_dataset(data, range)?;
    if samples.is_empty() {
        return Err(msno_core::Error::Config(format!("evaluate needs at least one sample, range {range:?} is empty")).into());
    }
    let grid = dataset_grid(c, &m)?;
    let cfg = &c.config;
    let ck = checkpoint.map(|p| load_checkpoint(p, loss)).transpose()?;
    let outcomes: Vec<anyhow::Result<SampleOutcome>> = samples
        .par_iter()
        .map(|s| {
            let p = problem_from_sample(s, m.forcing_kind)?;
            let (reference, fine_seconds) = match s.fields.get(&equation.reference_field()) {
                Some(u) if !recompute => (FineSolution { values: u.clone(), picard: None }, None),
                _ => {
                    let t = Instant::now();
                    let u = solve_fine(equation, &grid, &p.kappa, &p.forcing, &cfg.picard)?;
                    (u, Some(t.elapsed().as_secs_f64()))
                }
            };
            let mut errors = BTreeMap::new();
            errors.insert("fine", relative_errors(&reference, &reference, &grid)?);
            let t = Instant::now();
            let (bases, diags) = offline_basis(&grid, &p.kappa, cfg.n_bf)?;
            let offline_seconds = t.elapsed().as_secs_f64();
            let classical = solve_coarse(equation, &grid, &p.kappa, &p.forcing, &bases, &cfg.picard)?;
            let mut regularized = classical.coarse.iter().filter(|d| d.regularized()).count();
            errors.insert("gmsfem", relative_errors(&reference, &classical.solution, &grid)?);
            let mut inference_seconds = None;
            if let Some(ck) = &ck {
                let t = Instant::now();
                let learned = predict_basis(ck, &p.kappa, &grid)?;
                inference_seconds = Some(t.elapsed().as_secs_f64());
                let s = solve_coarse(equation, &grid, &p.kappa, &p.forcing, &learned, &cfg.picard)?;
                regularized += s.coarse.iter().filter(|d| d.regularized()).count();
                errors.insert("gmsfem-no", relative_errors(&reference, &s.solution, &grid)?);
            }
            Ok(SampleOutcome {
                errors,
                offline_seconds,
                inference_seconds,
                fine_seconds,
                max_eigen_residual: diags.iter().map(|d| d.max_residual).fold(0.0, f64::max),
                regularized,
            })
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let mut methods = BTreeMap::new();
    for name in outcomes[0].errors.keys() {
        let per_sample = outcomes
            .iter()
            .zip(range.clone())
            .zip(&samples)
            .map(|((o, i), s)| SampleErrors { sample: i, seed: s.seed, l2: o.errors[name].l2, h1: o.errors[name].h1 })
            .collect();
        methods.insert(name.to_string(), MethodReport::from_samples(per_sample));
    }
    let mean = |xs: Vec<f64>| if xs.is_empty() { None } else { Some(xs.iter().sum::<f64>() / xs.len() as f64) };
    let report = RunReport {
        config: cfg.clone(),
        equation: equation.name().into(),
        forcing: format!("{:?}", m.forcing_kind).to_lowercase(),
        methods,
        timings: Timings {
            offline_basis_seconds_per_sample: mean(outcomes.iter().map(|o| o.offline_seconds).collect()),
            inference_seconds_per_sample: mean(outcomes.iter().filter_map(|o| o.inference_seconds).collect()),
            fine_solve_seconds_per_sample: mean(outcomes.iter().filter_map(|o| o.fine_seconds).collect()),
        },
        environment: Environment::current(),
        predictor_loss: ck.as_ref().map(|c| c.manifest.loss.kind.name().to_string()),
        max_eigen_residual: Some(outcomes.iter().map(|o| o.max_eigen_residual).fold(0.0, f64::max)),
        regularized_coarse_solves: outcomes.iter().map(|o| o.regularized).sum(),
    };
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    let path = c.out.join("report.json");
    io::write_json(&path, &report)?;
    let means: BTreeMap<&String, Value> = report.methods.iter().map(|(k, r)| (k, json!({ "l2": r.mean_l2, "h1": r.mean_h1 }))).collect();
    Ok(json!({
        "command": "evaluate",
        "report": path.display().to_string(),
        "equation": equation.name(),
        "samples": samples.len(),
        "means": means,
        "predictor_loss": report.predictor_loss,
        "max_eigen_residual": report.max_eigen_residual,
        "regularized_coarse_solves": report.regularized_coarse_solves,
    }))
}

// ------------------------------------------------------------------- bench

pub fn bench(c: &Common, samples: usize, checkpoint: Option<&Path>) -> anyhow::Result<Value> {
    if samples == 0 {
        return Err(msno_core::Error::Config("bench needs at least one sample".into()).into());
    }
    let cfg = &c.config;
    let grid = cfg.grid()?;
    let decomp = kle_eigendecomposition(&cfg.kle)?;
    let ck = checkpoint.map(|p| load_checkpoint(p, None)).transpose()?;
    let (mut t_offline, mut t_inf, mut t_fine, mut t_online) = (0.0, 0.0, 0.0, 0.0);
    let f = sample_forcing(ForcingKind::Unit, c.seed, &grid, &cfg.forcing)?;
    for i in 0..samples as u64 {
        let kappa = sample_kle_field(&decomp, mix(c.seed, i), &grid)?;
        let t = Instant::now();
        let (bases, _) = offline_basis(&grid, &kappa, cfg.n_bf)?;
        t_offline += t.elapsed().as_secs_f64();
        let t = Instant::now();
        solve_coarse(Equation::Diffusion, &grid, &kappa, &f, &bases, &cfg.picard)?;
        t_online += t.elapsed().as_secs_f64();
        let t = Instant::now();
        solve_fine(Equation::Diffusion, &grid, &kappa, &f, &cfg.picard)?;
        t_fine += t.elapsed().as_secs_f64();
        if let Some(ck) = &ck {
            let t = Instant::now();
            predict_basis(ck, &kappa, &grid)?;
            t_inf += t.elapsed().as_secs_f64();
        }
    }
    let n = samples as f64;
    let (t_offline, t_inf, t_fine, t_online) = (t_offline / n, t_inf / n, t_fine / n, t_online / n);
    let timing: Option<TrainTiming> = match checkpoint {
        Some(p) if p.join(TRAIN_TIMING).exists() => {
            let text = std::fs::read_to_string(p.join(TRAIN_TIMING))?;
            Some(serde_json::from_str(&text)?)
        }
        _ => None,
    };
    let be = match (&ck, &timing) {
        (Some(_), Some(t)) => Some(breakeven(t.data_seconds, t.train_seconds, t_inf, t_offline)?),
        _ => None,
    };
    let table = json!({
        "command": "bench",
        "grid": [grid.n_coarse(), grid.n_fine()],
        "n_bf": cfg.n_bf,
        "samples": samples,
        "offline_seconds_per_sample": t_offline,
        "online_seconds_per_sample": t_online,
        "fine_seconds_per_sample": t_fine,
        "inference_seconds_per_sample": ck.as_ref().map(|_| t_inf),
        "data_seconds": timing.as_ref().map(|t| t.data_seconds),
        "train_seconds": timing.as_ref().map(|t| t.train_seconds),
        "breakeven_samples": be.map(|b| if b.is_finite() { json!(b) } else { json!("infinite") }),
        "threads": rayon::current_num_threads(),
    });
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    io::write_json(&c.out.join("bench.json"), &table)?;
    let csv = format!(
        "stage,seconds_per_sample\noffline_basis,{t_offline}\nonline_coarse,{t_online}\nfine,{t_fine}\ninference,{}\n",
        ck.as_ref().map(|_| t_inf.to_string()).unwrap_or_default()
    );
    io::write_atomic(&c.out.join("bench.csv"), csv.as_bytes())?;
    Ok(table)
}

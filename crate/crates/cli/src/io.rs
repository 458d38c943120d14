//! On-disk datasets, basis stores and predictor checkpoints.
//!
//! Every store is a directory holding `manifest.json` and raw little-endian
//! `f64` arrays, each listed in the manifest with its shape and SHA-256.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use msno_core::field::{ForcingKind, ForcingParams, KleParams};
use msno_core::msbasis::{BasisSet, EigenDiagnostics};
use msno_core::{DomainKind, GridPair, NodalField};
use msno_neural::ffno::{tensor_table, Ffno, FfnoConfig};
use msno_neural::predictor::{PredictorCheckpoint, TrainingManifest, TypeModel};
use msno_neural::train::NormStats;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("checksum mismatch in {file}")]
    Checksum { file: String },

    #[error("unknown schema_version {found} in {path} (supported: {SCHEMA_VERSION})")]
    Schema { found: u32, path: String },

    #[error("missing file {file}")]
    Missing { file: String },

    #[error("malformed store {path}: {reason}")]
    Malformed { path: String, reason: String },

    #[error("{path}: {source}")]
    Fs { path: String, source: std::io::Error },

    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },

    #[error(transparent)]
    Core(#[from] msno_core::Error),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub shape: Vec<usize>,
    pub sha256: String,
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs { path: path.display().to_string(), source }
}

/// Write through a temporary file and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> IoResult<()> {
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    fs::write(&tmp, bytes).map_err(fs_err(&tmp))?;
    fs::rename(&tmp, path).map_err(fs_err(path))
}

pub fn encode_f64le(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write one array and return its manifest entry.
pub fn write_array(dir: &Path, file: &str, shape: Vec<usize>, data: &[f64]) -> IoResult<ArrayEntry> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(IoError::Malformed { path: file.into(), reason: format!("shape {shape:?} holds {} values, got {}", shape.iter().product::<usize>(), data.len()) });
    }
    let bytes = encode_f64le(data);
    write_atomic(&dir.join(file), &bytes)?;
    Ok(ArrayEntry { shape, sha256: sha256_hex(&bytes) })
}

pub fn read_array(dir: &Path, file: &str, entry: &ArrayEntry) -> IoResult<Vec<f64>> {
    let path = dir.join(file);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(IoError::Missing { file: path.display().to_string() }),
        Err(e) => return Err(IoError::Fs { path: path.display().to_string(), source: e }),
    };
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(IoError::Checksum { file: path.display().to_string() });
    }
    let n: usize = entry.shape.iter().product();
    if bytes.len() != 8 * n {
        return Err(IoError::Malformed { path: path.display().to_string(), reason: format!("{} bytes for shape {:?}", bytes.len(), entry.shape) });
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json { path: path.display().to_string(), source })?;
    write_atomic(path, text.as_bytes())
}

/// Read a manifest after checking its `schema_version`.
pub fn read_manifest<T: DeserializeOwned>(dir: &Path) -> IoResult<T> {
    let path = dir.join(MANIFEST);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(IoError::Missing { file: path.display().to_string() }),
        Err(e) => return Err(IoError::Fs { path: path.display().to_string(), source: e }),
    };
    let json_err = |source| IoError::Json { path: path.display().to_string(), source };
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
    let found = raw.get("schema_version").and_then(|v| v.as_u64()).ok_or_else(|| IoError::Malformed {
        path: path.display().to_string(),
        reason: "no schema_version".into(),
    })?;
    if found != SCHEMA_VERSION as u64 {
        return Err(IoError::Schema { found: found as u32, path: path.display().to_string() });
    }
    serde_json::from_value(raw).map_err(json_err)
}

fn ensure_dir(dir: &Path) -> IoResult<()> {
    fs::create_dir_all(dir).map_err(fs_err(dir))
}

pub fn sample_file(sample: usize, field: &str) -> String {
    format!("{sample:05}_{field}.f64le")
}

// ---------------------------------------------------------------- datasets

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub sample_count: usize,
    pub seeds: Vec<u64>,
    pub kle: KleParams,
    pub forcing_kind: ForcingKind,
    pub forcing: ForcingParams,
    pub created_unix: u64,
    /// Field names present for every sample.
    pub fields: Vec<String>,
    pub files: BTreeMap<String, ArrayEntry>,
}

/// Header fields a caller chooses; the rest is filled in on write.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub kle: KleParams,
    pub forcing_kind: ForcingKind,
    pub forcing: ForcingParams,
    pub created_unix: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub seed: u64,
    pub fields: BTreeMap<String, NodalField>,
}

pub fn write_dataset(dir: &Path, header: &DatasetHeader, samples: &[Sample]) -> IoResult<DatasetManifest> {
    ensure_dir(dir)?;
    let fields: Vec<String> = samples.first().map(|s| s.fields.keys().cloned().collect()).unwrap_or_default();
    let mut seen = std::collections::BTreeSet::new();
    let mut files = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        if !seen.insert(s.seed) {
            return Err(IoError::Malformed { path: dir.display().to_string(), reason: format!("seed {} used by two samples", s.seed) });
        }
        if s.fields.keys().ne(fields.iter()) {
            return Err(IoError::Malformed { path: dir.display().to_string(), reason: format!("sample {i} has a different field set") });
        }
        for (name, f) in &s.fields {
            let file = sample_file(i, name);
            let entry = write_array(dir, &file, vec![f.ny, f.nx], &f.values)?;
            files.insert(file, entry);
        }
    }
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        n_coarse: header.n_coarse,
        n_fine: header.n_fine,
        sample_count: samples.len(),
        seeds: samples.iter().map(|s| s.seed).collect(),
        kle: header.kle,
        forcing_kind: header.forcing_kind,
        forcing: header.forcing,
        created_unix: header.created_unix,
        fields,
        files,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset_manifest(dir: &Path) -> IoResult<DatasetManifest> {
    let m: DatasetManifest = read_manifest(dir)?;
    if m.seeds.len() != m.sample_count {
        return Err(IoError::Malformed { path: dir.display().to_string(), reason: "seed list does not match sample_count".into() });
    }
    Ok(m)
}

/// Read the samples with indices in `range`.
pub fn read_samples(dir: &Path, manifest: &DatasetManifest, range: std::ops::Range<usize>) -> IoResult<Vec<Sample>> {
    if range.end > manifest.sample_count {
        return Err(IoError::Malformed {
            path: dir.display().to_string(),
            reason: format!("sample range {range:?} exceeds {} samples", manifest.sample_count),
        });
    }
    range
        .map(|i| {
            let mut fields = BTreeMap::new();
            for name in &manifest.fields {
                let file = sample_file(i, name);
                let entry = manifest.files.get(&file).ok_or_else(|| IoError::Missing { file: file.clone() })?;
                let values = read_array(dir, &file, entry)?;
                let (ny, nx) = match entry.shape.as_slice() {
                    [ny, nx] => (*ny, *nx),
                    other => return Err(IoError::Malformed { path: file, reason: format!("field shape {other:?}") }),
                };
                fields.insert(name.clone(), NodalField::new(nx, ny, values)?);
            }
            Ok(Sample { seed: manifest.seeds[i], fields })
        })
        .collect()
}

pub fn read_dataset(dir: &Path) -> IoResult<(DatasetManifest, Vec<Sample>)> {
    let m = read_dataset_manifest(dir)?;
    let samples = read_samples(dir, &m, 0..m.sample_count)?;
    Ok((m, samples))
}

// ------------------------------------------------------------ basis stores

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisManifest {
    pub schema_version: u32,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub n_bf: usize,
    pub sample_count: usize,
    pub seeds: Vec<u64>,
    /// Wall-clock seconds of the offline stage per sample.
    pub offline_seconds: Vec<f64>,
    /// Per sample, per local domain.
    pub eigen: Vec<Vec<EigenDiagnostics>>,
    pub files: BTreeMap<String, ArrayEntry>,
}

pub struct BasisRecord {
    pub seed: u64,
    pub sets: Vec<BasisSet>,
    pub offline_seconds: f64,
    pub eigen: Vec<EigenDiagnostics>,
}

/// Each sample's bases go in one file: domains in order, then basis
/// vectors, then patch nodes.
pub fn write_basis_store(dir: &Path, grid: &GridPair, n_bf: usize, records: &[BasisRecord]) -> IoResult<BasisManifest> {
    ensure_dir(dir)?;
    let mut files = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let data: Vec<f64> = r.sets.iter().flat_map(|s| s.vectors.iter().flatten().copied()).collect();
        let file = sample_file(i, "basis");
        files.insert(file.clone(), write_array(dir, &file, vec![data.len()], &data)?);
    }
    let manifest = BasisManifest {
        schema_version: SCHEMA_VERSION,
        n_coarse: grid.n_coarse(),
        n_fine: grid.n_fine(),
        n_bf,
        sample_count: records.len(),
        seeds: records.iter().map(|r| r.seed).collect(),
        offline_seconds: records.iter().map(|r| r.offline_seconds).collect(),
        eigen: records.iter().map(|r| r.eigen.clone()).collect(),
        files,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_basis_sets(dir: &Path, manifest: &BasisManifest, sample: usize) -> IoResult<Vec<BasisSet>> {
    let grid = GridPair::new(manifest.n_coarse, manifest.n_fine)?;
    let file = sample_file(sample, "basis");
    let entry = manifest.files.get(&file).ok_or_else(|| IoError::Missing { file: file.clone() })?;
    let data = read_array(dir, &file, entry)?;
    let mut sets = Vec::with_capacity(grid.n_domains());
    let mut off = 0;
    for d in grid.local_domains() {
        let n = d.patch.len();
        let mut vectors = Vec::with_capacity(manifest.n_bf);
        for _ in 0..manifest.n_bf {
            let v = data.get(off..off + n).ok_or_else(|| IoError::Malformed { path: file.clone(), reason: "too few values".into() })?;
            vectors.push(v.to_vec());
            off += n;
        }
        sets.push(BasisSet { domain_index: d.index, patch: d.patch, vectors });
    }
    if off != data.len() {
        return Err(IoError::Malformed { path: file, reason: "trailing values".into() });
    }
    Ok(sets)
}

// ------------------------------------------------------------- checkpoints

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    /// Logical shape; spectral tensors carry a trailing `2` for the
    /// interleaved (real, imag) pair.
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelEntry {
    Ffno { config: FfnoConfig, stats: NormStats, tensors: Vec<TensorEntry> },
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub n_bf: usize,
    pub training: TrainingManifest,
    pub models: BTreeMap<DomainKind, ModelEntry>,
}

/// Spectral tensors are held as `[mode][re|im][out][in]` in memory and
/// written as `[mode][out][in][re, im]`.
fn interleave(block: &[f64], modes: usize, hh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(block.len());
    for k in 0..modes {
        let base = 2 * k * hh;
        for i in 0..hh {
            out.push(block[base + i]);
            out.push(block[base + hh + i]);
        }
    }
    out
}

fn deinterleave(data: &[f64], modes: usize, hh: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for k in 0..modes {
        let base = 2 * k * hh;
        for i in 0..hh {
            out[base + i] = data[base + 2 * i];
            out[base + hh + i] = data[base + 2 * i + 1];
        }
    }
    out
}

pub fn write_checkpoint(dir: &Path, ck: &PredictorCheckpoint) -> IoResult<CheckpointManifest> {
    ck.validate()?;
    ensure_dir(dir)?;
    let mut models = BTreeMap::new();
    for (kind, m) in &ck.models {
        let entry = match m {
            TypeModel::Oracle => ModelEntry::Oracle,
            TypeModel::Ffno { model, stats } => {
                let hh = model.config.hidden * model.config.hidden;
                let mut tensors = Vec::new();
                for (name, off, shape) in tensor_table(&model.config) {
                    let n: usize = shape.iter().product();
                    let block = &model.params[off..off + n];
                    let file = format!("{kind}_{name}.f64le");
                    let (data, shape) = if name.contains("spec") {
                        (interleave(block, shape[0], hh), vec![shape[0], shape[2], shape[3], 2])
                    } else {
                        (block.to_vec(), shape)
                    };
                    let e = write_array(dir, &file, shape.clone(), &data)?;
                    tensors.push(TensorEntry { name, file, shape, sha256: e.sha256 });
                }
                ModelEntry::Ffno { config: model.config.clone(), stats: *stats, tensors }
            }
        };
        models.insert(*kind, entry);
    }
    let manifest = CheckpointManifest { schema_version: SCHEMA_VERSION, n_bf: ck.n_bf, training: ck.manifest.clone(), models };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_checkpoint(dir: &Path) -> IoResult<PredictorCheckpoint> {
    let m: CheckpointManifest = read_manifest(dir)?;
    let mut models = BTreeMap::new();
    for kind in DomainKind::ALL {
        let entry = m.models.get(&kind).ok_or_else(|| IoError::Malformed {
            path: dir.display().to_string(),
            reason: format!("checkpoint has no model for domain type '{kind}'"),
        })?;
        let model = match entry {
            ModelEntry::Oracle => TypeModel::Oracle,
            ModelEntry::Ffno { config, stats, tensors } => {
                let hh = config.hidden * config.hidden;
                let mut params = vec![0.0; config.param_count()];
                let table = tensor_table(config);
                if table.len() != tensors.len() {
                    return Err(IoError::Malformed { path: dir.display().to_string(), reason: format!("'{kind}' model lists {} tensors, expected {}", tensors.len(), table.len()) });
                }
                for ((name, off, shape), t) in table.iter().zip(tensors) {
                    if *name != t.name {
                        return Err(IoError::Malformed { path: t.file.clone(), reason: format!("expected tensor {name}, found {}", t.name) });
                    }
                    let data = read_array(dir, &t.file, &ArrayEntry { shape: t.shape.clone(), sha256: t.sha256.clone() })?;
                    let n: usize = shape.iter().product();
                    if data.len() != n {
                        return Err(IoError::Malformed { path: t.file.clone(), reason: format!("{} values, expected {n}", data.len()) });
                    }
                    let data = if name.contains("spec") { deinterleave(&data, shape[0], hh) } else { data };
                    params[*off..off + n].copy_from_slice(&data);
                }
                TypeModel::Ffno { model: Ffno::new(config.clone(), params)?, stats: *stats }
            }
        };
        models.insert(kind, model);
    }
    let ck = PredictorCheckpoint { n_bf: m.n_bf, models, manifest: m.training };
    ck.validate()?;
    Ok(ck)
}

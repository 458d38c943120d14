//! Training data extraction and the per-type training loop.

use std::str::FromStr;

use nalgebra::DMatrix;
use ndarray::Array3;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use msno_core::field::CoefficientField;
use msno_core::msbasis::BasisSet;
use msno_core::rng::{self, mix, streams};
use msno_core::subspace::{orthonormalize, projection_seed, projection_vectors, rbfl2_grad, sal_grad, sal_pr_grad, OrthonormalBasis};
use msno_core::grid::canonicalize;
use msno_core::{DomainKind, Error, GridPair, NodalField, Result};

use crate::ffno::{FfnoConfig, Ffno, ForwardCache, INPUT_CHANNELS};
use crate::optim::{cosine_lr, AdamW, AdamWConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Rbfl2,
    Sal,
    SalPr,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Rbfl2 => "rbfl2",
            LossKind::Sal => "sal",
            LossKind::SalPr => "sal-pr",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbfl2" => Ok(LossKind::Rbfl2),
            "sal" => Ok(LossKind::Sal),
            "sal-pr" => Ok(LossKind::SalPr),
            other => Err(Error::Config(format!("unknown loss '{other}' (expected rbfl2, sal or sal-pr)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// SAL-PR weight.
    pub lambda: f64,
    /// SAL-PR test vectors per sample.
    pub n_vectors: usize,
    /// Draw fresh test vectors every step instead of once per sample.
    pub resample_vectors: bool,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self { kind, lambda: 1.0, n_vectors: 10, resample_vectors: true }
    }
}

/// Mean and standard deviation of log κ over a training set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn from_patches<'a>(patches: impl IntoIterator<Item = &'a NodalField>) -> Result<Self> {
        let (mut n, mut s, mut s2) = (0usize, 0.0, 0.0);
        for p in patches {
            for &v in &p.values {
                n += 1;
                s += v;
                s2 += v * v;
            }
        }
        if n == 0 {
            return Err(Error::Config("no patches to compute normalization statistics".into()));
        }
        let mean = s / n as f64;
        let var = (s2 / n as f64 - mean * mean).max(0.0);
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Ok(Self { mean, std })
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite() && self.std.is_finite() && self.std > 0.0
    }
}

/// One canonicalized local domain: log κ on the patch and, when available,
/// the target basis.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    pub kind: DomainKind,
    pub log_kappa: NodalField,
    pub target: Option<Vec<Vec<f64>>>,
}

/// Canonical log κ patches of every local domain, paired with the
/// canonicalized `bases` when given.
pub fn extract_patches(grid: &GridPair, kappa: &CoefficientField, bases: Option<&[BasisSet]>) -> Result<Vec<PatchSample>> {
    let domains = grid.local_domains();
    if let Some(b) = bases {
        if b.len() != domains.len() {
            return Err(Error::Shape { expected: format!("{} basis sets", domains.len()), got: b.len().to_string() });
        }
    }
    domains
        .iter()
        .map(|d| {
            let patch = grid.extract_patch(&kappa.values, &d.patch)?;
            let log = NodalField { nx: patch.nx, ny: patch.ny, values: patch.values.iter().map(|v| v.ln()).collect() };
            let (log_kappa, _) = canonicalize(&log, d)?;
            let target = match bases {
                Some(b) => Some(
                    (0..b[d.index].n_bf())
                        .map(|j| Ok(canonicalize(&b[d.index].field(j), d)?.0.values))
                        .collect::<Result<Vec<_>>>()?,
                ),
                None => None,
            };
            Ok(PatchSample { kind: d.kind, log_kappa, target })
        })
        .collect()
}

/// Network input: normalized log κ and the canonical coordinates in [0, 1].
pub fn network_input(log_kappa: &NodalField, stats: &NormStats) -> Array3<f64> {
    let (nx, ny) = (log_kappa.nx, log_kappa.ny);
    Array3::from_shape_fn((INPUT_CHANNELS, ny, nx), |(c, y, x)| match c {
        0 => (log_kappa.values[y * nx + x] - stats.mean) / stats.std,
        1 => x as f64 / (nx - 1) as f64,
        _ => y as f64 / (ny - 1) as f64,
    })
}

/// 1 inside the patch, 0 on its perimeter. Every target vanishes on the
/// perimeter: χ is zero on interior-facing edges and the rest lies on ∂Ω.
pub fn perimeter_mask(nx: usize, ny: usize) -> Vec<f64> {
    (0..ny)
        .flat_map(|y| (0..nx).map(move |x| if x == 0 || y == 0 || x == nx - 1 || y == ny - 1 { 0.0 } else { 1.0 }))
        .collect()
}

/// Network output as an `n_points x n_bf` basis matrix, masked.
pub fn output_matrix(out: &Array3<f64>, mask: &[f64]) -> DMatrix<f64> {
    let (k, ny, nx) = out.dim();
    let flat = out.as_standard_layout();
    let s = flat.as_slice().expect("standard layout");
    DMatrix::from_fn(ny * nx, k, |i, j| s[j * ny * nx + i] * mask[i])
}

fn output_gradient(grad: &DMatrix<f64>, mask: &[f64], shape: (usize, usize, usize)) -> Array3<f64> {
    let nx = shape.2;
    Array3::from_shape_fn(shape, |(j, y, x)| grad[(y * nx + x, j)] * mask[y * nx + x])
}

/// A training sample ready for the loop. Target columns have unit norm.
#[derive(Clone, Debug)]
pub struct TrainingPatch {
    pub input: Array3<f64>,
    pub target: DMatrix<f64>,
    pub target_q: OrthonormalBasis,
}

pub fn prepare(samples: &[&PatchSample], stats: &NormStats) -> Result<Vec<TrainingPatch>> {
    samples
        .iter()
        .map(|s| {
            let vectors = s.target.as_ref().ok_or_else(|| Error::Config("training patch without target basis".into()))?;
            let mut target = DMatrix::from_fn(s.log_kappa.values.len(), vectors.len(), |i, j| vectors[j][i]);
            for mut c in target.column_iter_mut() {
                let n = c.norm();
                if !(n > 0.0) {
                    return Err(Error::ZeroVector("target basis vector".into()));
                }
                c /= n;
            }
            let target_q = orthonormalize(&target)?;
            Ok(TrainingPatch { input: network_input(&s.log_kappa, stats), target, target_q })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { optimizer: AdamWConfig::default(), epochs: 100, batch: 8, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Ffno,
    /// Mean sample loss per epoch, evaluated before each batch update.
    pub loss_curve: Vec<f64>,
    pub diverged_at_epoch: Option<usize>,
    /// Samples whose prediction was rank deficient, summed over all steps.
    pub rank_deficient_events: usize,
}

struct SampleGrad {
    loss: f64,
    grad: Vec<f64>,
    rank_deficient: bool,
}

/// Loss and parameter gradient for one patch.
pub fn patch_loss(model: &Ffno, patch: &TrainingPatch, loss: &LossSpec, v_seed: u64) -> Result<(f64, Vec<f64>, bool)> {
    let (out, cache): (Array3<f64>, ForwardCache) = model.forward_cached(&patch.input)?;
    let (_, ny, nx) = out.dim();
    let mask = perimeter_mask(nx, ny);
    let psi = output_matrix(&out, &mask);
    let lg = match loss.kind {
        LossKind::Rbfl2 => rbfl2_grad(&patch.target, &psi)?,
        LossKind::Sal => sal_grad(&patch.target_q, &psi)?,
        LossKind::SalPr => {
            let v = projection_vectors(&patch.target, loss.n_vectors, v_seed);
            sal_pr_grad(&patch.target_q, &psi, &v, loss.lambda)?
        }
    };
    let d_out = output_gradient(&lg.grad, &mask, out.dim());
    let (grad, _) = model.backward(&cache, &d_out);
    Ok((lg.loss, grad, lg.rank_deficient))
}

/// Train one model. Per-sample gradients may run in parallel; they are
/// summed in batch order, so results do not depend on the thread count.
pub fn train(config: FfnoConfig, data: &[TrainingPatch], loss: &LossSpec, opts: &TrainOptions) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if opts.batch == 0 || opts.epochs == 0 {
        return Err(Error::Config("batch size and epoch count must be positive".into()));
    }
    if loss.kind == LossKind::SalPr && (loss.n_vectors == 0 || !(loss.lambda >= 0.0)) {
        return Err(Error::Config(format!("SAL-PR needs n_vectors >= 1 and lambda >= 0, got {} and {}", loss.n_vectors, loss.lambda)));
    }
    let shape = (INPUT_CHANNELS, config.patch.1, config.patch.0);
    if let Some(p) = data.iter().find(|p| p.input.dim() != shape || p.target.ncols() != config.n_out) {
        return Err(Error::Shape {
            expected: format!("input {shape:?} with {} targets", config.n_out),
            got: format!("input {:?} with {} targets", p.input.dim(), p.target.ncols()),
        });
    }
    let mut model = Ffno::init(config, opts.seed)?;
    let mut opt = AdamW::new(opts.optimizer, model.params.len());
    let steps_per_epoch = data.len().div_ceil(opts.batch);
    let total = steps_per_epoch * opts.epochs;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(opts.epochs);
    let mut deficient = 0;
    let mut step = 0usize;
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng::stream(mix(opts.seed, epoch as u64), streams::SHUFFLE));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(opts.batch) {
            let results: Vec<Result<SampleGrad>> = batch
                .par_iter()
                .map(|&i| {
                    let v_step = if loss.resample_vectors { step as u64 } else { 0 };
                    let (l, grad, rd) = patch_loss(&model, &data[i], loss, projection_seed(opts.seed, v_step, i as u64))?;
                    Ok(SampleGrad { loss: l, grad, rank_deficient: rd })
                })
                .collect();
            let mut sum = vec![0.0; model.params.len()];
            let mut batch_loss = 0.0;
            let mut failed = false;
            for r in results {
                match r {
                    Ok(s) if s.loss.is_finite() && s.grad.iter().all(|g| g.is_finite()) => {
                        batch_loss += s.loss;
                        deficient += s.rank_deficient as usize;
                        for (a, g) in sum.iter_mut().zip(&s.grad) {
                            *a += g;
                        }
                    }
                    Ok(_) | Err(Error::NonFinite(_)) => failed = true,
                    Err(e) => return Err(e),
                }
            }
            let before = model.params.clone();
            if !failed {
                let scale = 1.0 / batch.len() as f64;
                sum.iter_mut().for_each(|g| *g *= scale);
                opt.step(&mut model.params, &sum, cosine_lr(opts.optimizer.lr, step, total));
                failed = model.params.iter().any(|p| !p.is_finite());
            }
            if failed {
                model.params = before;
                return Ok(TrainOutcome { model, loss_curve: curve, diverged_at_epoch: Some(epoch), rank_deficient_events: deficient });
            }
            epoch_loss += batch_loss;
            step += 1;
        }
        curve.push(epoch_loss / data.len() as f64);
    }
    Ok(TrainOutcome { model, loss_curve: curve, diverged_at_epoch: None, rank_deficient_events: deficient })
}

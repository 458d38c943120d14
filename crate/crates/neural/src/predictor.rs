//! Per-domain-type predictors and the checkpoint that bundles them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use msno_core::field::CoefficientField;
use msno_core::grid::{canonicalize, decanonicalize};
use msno_core::msbasis::{exact_domain_basis, BasisPredictor, BasisSet};
use msno_core::{DomainKind, Error, GridPair, LocalDomain, NodalField, Result};

use crate::ffno::{Ffno, FfnoConfig};
use crate::train::{network_input, perimeter_mask, prepare, train, LossSpec, NormStats, PatchSample, TrainOptions};

impl FfnoConfig {
    /// Desk-scale configuration for a domain type, with modes clipped to
    /// the patch's half spectrum.
    pub fn desk(kind: DomainKind, grid: &GridPair, n_bf: usize, hidden: usize) -> Self {
        let patch = kind.canonical_shape(grid);
        let m = match kind {
            DomainKind::Full => 12,
            DomainKind::Half => 8,
            DomainKind::Corner => 6,
        };
        Self { layers: 4, hidden, modes: (m.min(patch.0 / 2 + 1), m.min(patch.1 / 2 + 1)), n_out: n_bf, patch }
    }
}

#[derive(Clone, Debug)]
pub enum TypeModel {
    Ffno { model: Ffno, stats: NormStats },
    /// Runs the exact local eigensolve instead of a network.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub seed: u64,
    pub epochs: usize,
    pub loss: LossSpec,
    pub batch: usize,
    pub lr: f64,
    /// Per-type mean training loss per epoch.
    pub loss_curves: BTreeMap<DomainKind, Vec<f64>>,
    pub training_patches: BTreeMap<DomainKind, usize>,
    pub diverged: BTreeMap<DomainKind, usize>,
}

impl TrainingManifest {
    pub fn untrained(loss: LossSpec) -> Self {
        Self { seed: 0, epochs: 0, loss, batch: 0, lr: 0.0, loss_curves: BTreeMap::new(), training_patches: BTreeMap::new(), diverged: BTreeMap::new() }
    }
}

#[derive(Clone, Debug)]
pub struct PredictorCheckpoint {
    pub n_bf: usize,
    pub models: BTreeMap<DomainKind, TypeModel>,
    pub manifest: TrainingManifest,
}

/// What to do for one domain type when building a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub enum TypePlan {
    Train(FfnoConfig),
    Oracle,
}

impl PredictorCheckpoint {
    pub fn oracle(n_bf: usize, loss: LossSpec) -> Self {
        let models = DomainKind::ALL.iter().map(|&k| (k, TypeModel::Oracle)).collect();
        Self { n_bf, models, manifest: TrainingManifest::untrained(loss) }
    }

    pub fn validate(&self) -> Result<()> {
        for kind in DomainKind::ALL {
            match self.models.get(&kind) {
                None => return Err(Error::Config(format!("checkpoint has no model for domain type '{kind}'"))),
                Some(TypeModel::Ffno { model, stats }) => {
                    if !stats.is_finite() {
                        return Err(Error::NonFinite(format!("normalization statistics of the '{kind}' model")));
                    }
                    if model.config.n_out != self.n_bf {
                        return Err(Error::Config(format!("'{kind}' model emits {} fields, checkpoint N_bf is {}", model.config.n_out, self.n_bf)));
                    }
                }
                Some(TypeModel::Oracle) => {}
            }
        }
        Ok(())
    }

    /// Every network's patch shape must match the grid's canonical shape.
    pub fn check_grid(&self, grid: &GridPair) -> Result<()> {
        self.validate()?;
        for (kind, m) in &self.models {
            if let TypeModel::Ffno { model, .. } = m {
                let want = kind.canonical_shape(grid);
                if model.config.patch != want {
                    return Err(Error::Shape {
                        expected: format!("{kind} patch {}x{} for grid {}/{}", want.0, want.1, grid.n_coarse(), grid.n_fine()),
                        got: format!("checkpoint patch {}x{}", model.config.patch.0, model.config.patch.1),
                    });
                }
            }
        }
        Ok(())
    }

    fn model(&self, kind: DomainKind) -> Result<&TypeModel> {
        self.models.get(&kind).ok_or_else(|| Error::Config(format!("checkpoint has no model for domain type '{kind}'")))
    }
}

impl BasisPredictor for PredictorCheckpoint {
    fn n_bf(&self) -> usize {
        self.n_bf
    }

    fn predict_domain(&self, grid: &GridPair, kappa: &CoefficientField, domain: &LocalDomain) -> Result<BasisSet> {
        let (model, stats) = match self.model(domain.kind)? {
            TypeModel::Oracle => return Ok(exact_domain_basis(grid, kappa, domain, self.n_bf)?.0),
            TypeModel::Ffno { model, stats } => (model, stats),
        };
        let patch = grid.extract_patch(&kappa.values, &domain.patch)?;
        let log = NodalField { nx: patch.nx, ny: patch.ny, values: patch.values.iter().map(|v| v.ln()).collect() };
        let (canon, orientation) = canonicalize(&log, domain)?;
        if (canon.nx, canon.ny) != model.config.patch {
            return Err(Error::Shape {
                expected: format!("{} patch {}x{}", domain.kind, canon.nx, canon.ny),
                got: format!("model patch {}x{}", model.config.patch.0, model.config.patch.1),
            });
        }
        let out = model.forward(&network_input(&canon, stats))?;
        let mask = perimeter_mask(canon.nx, canon.ny);
        let vectors = out
            .outer_iter()
            .map(|ch| {
                let values = ch.iter().zip(&mask).map(|(v, m)| v * m).collect();
                decanonicalize(&NodalField { nx: canon.nx, ny: canon.ny, values }, orientation).values
            })
            .collect();
        let mut set = BasisSet { domain_index: domain.index, patch: domain.patch, vectors };
        set.zero_outer_boundary(grid);
        Ok(set)
    }
}

/// One basis set per local domain of `grid`, in domain order.
pub fn predict_basis(checkpoint: &PredictorCheckpoint, kappa: &CoefficientField, grid: &GridPair) -> Result<Vec<BasisSet>> {
    checkpoint.check_grid(grid)?;
    checkpoint.predict(grid, kappa)
}

/// Train the planned types on `samples` and bundle the result.
pub fn train_checkpoint(
    samples: &[PatchSample],
    plans: &BTreeMap<DomainKind, TypePlan>,
    n_bf: usize,
    loss: &LossSpec,
    opts: &TrainOptions,
) -> Result<PredictorCheckpoint> {
    let mut manifest = TrainingManifest {
        seed: opts.seed,
        epochs: opts.epochs,
        loss: *loss,
        batch: opts.batch,
        lr: opts.optimizer.lr,
        ..TrainingManifest::untrained(*loss)
    };
    let mut models = BTreeMap::new();
    for kind in DomainKind::ALL {
        let plan = plans.get(&kind).ok_or_else(|| Error::Config(format!("no plan for domain type '{kind}'")))?;
        let model = match plan {
            TypePlan::Oracle => TypeModel::Oracle,
            TypePlan::Train(config) => {
                let subset: Vec<&PatchSample> = samples.iter().filter(|s| s.kind == kind).collect();
                if subset.is_empty() {
                    return Err(Error::Config(format!("no training patches of domain type '{kind}'")));
                }
                if config.n_out != n_bf {
                    return Err(Error::Config(format!("'{kind}' config emits {} fields, N_bf is {n_bf}", config.n_out)));
                }
                let stats = NormStats::from_patches(subset.iter().map(|s| &s.log_kappa))?;
                let data = prepare(&subset, &stats)?;
                let out = train(config.clone(), &data, loss, opts)?;
                manifest.loss_curves.insert(kind, out.loss_curve);
                manifest.training_patches.insert(kind, data.len());
                if let Some(e) = out.diverged_at_epoch {
                    manifest.diverged.insert(kind, e);
                }
                TypeModel::Ffno { model: out.model, stats }
            }
        };
        models.insert(kind, model);
    }
    Ok(PredictorCheckpoint { n_bf, models, manifest })
}

//! Experiment configuration read from `--config <json>`. Missing keys take
//! their defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use msno_core::fem::PicardOptions;
use msno_core::field::{ForcingParams, KleParams};
use msno_core::{DomainKind, GridPair};
use msno_neural::ffno::FfnoConfig;
use msno_neural::optim::AdamWConfig;
use msno_neural::predictor::TypePlan;
use msno_neural::train::{LossKind, LossSpec, TrainOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub n_bf: usize,
    /// Sample count for `gen-data`.
    pub samples: usize,
    pub kle: KleParams,
    pub forcing: ForcingParams,
    pub picard: PicardOptions,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_coarse: 5,
            n_fine: 101,
            n_bf: 8,
            samples: 10,
            kle: KleParams::default(),
            forcing: ForcingParams::default(),
            picard: PicardOptions::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Large,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeChoice {
    Train,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub scale: Scale,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub layers: usize,
    pub loss: LossKind,
    pub lambda: f64,
    pub n_vectors: usize,
    pub resample_vectors: bool,
    pub types: BTreeMap<DomainKind, TypeChoice>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scale: Scale::Desk,
            epochs: 150,
            batch: 8,
            lr: 1e-3,
            weight_decay: 1e-4,
            hidden: 32,
            layers: 4,
            loss: LossKind::Sal,
            lambda: 1.0,
            n_vectors: 10,
            resample_vectors: true,
            types: DomainKind::ALL.iter().map(|&k| (k, TypeChoice::Train)).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let cfg: Self = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| anyhow::anyhow!("reading config {}: {e}", p.display()))?;
                serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("parsing config {}: {e}", p.display()))?
            }
        };
        cfg.grid()?;
        cfg.kle.validate()?;
        if cfg.n_bf == 0 {
            anyhow::bail!("n_bf must be positive");
        }
        Ok(cfg)
    }

    pub fn grid(&self) -> msno_core::Result<GridPair> {
        GridPair::new(self.n_coarse, self.n_fine)
    }
}

impl TrainConfig {
    pub fn loss_spec(&self) -> LossSpec {
        LossSpec { kind: self.loss, lambda: self.lambda, n_vectors: self.n_vectors, resample_vectors: self.resample_vectors }
    }

    pub fn options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            optimizer: AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamWConfig::default() },
            epochs: if self.scale == Scale::Large { self.epochs.max(600) } else { self.epochs },
            batch: self.batch,
            seed,
        }
    }

    /// Network shape per domain type. Large scale widens to 64 channels and
    /// 18 modes, clipped to the patch.
    pub fn plans(&self, grid: &GridPair, n_bf: usize) -> BTreeMap<DomainKind, TypePlan> {
        DomainKind::ALL
            .iter()
            .map(|&kind| {
                let plan = match self.types.get(&kind).copied().unwrap_or(TypeChoice::Train) {
                    TypeChoice::Oracle => TypePlan::Oracle,
                    TypeChoice::Train => {
                        let mut c = FfnoConfig::desk(kind, grid, n_bf, self.hidden);
                        c.layers = self.layers;
                        if self.scale == Scale::Large {
                            c.hidden = self.hidden.max(64);
                            c.modes = (18.min(c.patch.0 / 2 + 1), 18.min(c.patch.1 / 2 + 1));
                        }
                        TypePlan::Train(c)
                    }
                };
                (kind, plan)
            })
            .collect()
    }
}

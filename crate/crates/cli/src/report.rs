//! Evaluation reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleErrors {
    pub sample: usize,
    pub seed: u64,
    pub l2: f64,
    pub h1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub per_sample: Vec<SampleErrors>,
    pub mean_l2: f64,
    pub mean_h1: f64,
}

impl MethodReport {
    pub fn from_samples(per_sample: Vec<SampleErrors>) -> Self {
        let n = per_sample.len() as f64;
        let mean_l2 = per_sample.iter().map(|s| s.l2).sum::<f64>() / n;
        let mean_h1 = per_sample.iter().map(|s| s.h1).sum::<f64>() / n;
        Self { per_sample, mean_l2, mean_h1 }
    }

    /// Whether the stored means equal the recomputed ones.
    pub fn means_consistent(&self) -> bool {
        let again = Self::from_samples(self.per_sample.clone());
        again.mean_l2 == self.mean_l2 && again.mean_h1 == self.mean_h1
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Classical basis generation only.
    pub offline_basis_seconds_per_sample: Option<f64>,
    /// Predictor inference only.
    pub inference_seconds_per_sample: Option<f64>,
    pub fine_solve_seconds_per_sample: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub strict_determinism: bool,
    pub version: String,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: rayon::current_num_threads(),
            strict_determinism: crate::strict_determinism(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub equation: String,
    pub forcing: String,
    /// Keyed by `fine`, `gmsfem` and `gmsfem-no`.
    pub methods: BTreeMap<String, MethodReport>,
    pub timings: Timings,
    pub environment: Environment,
    /// Loss the predictor was trained with, when one was used.
    pub predictor_loss: Option<String>,
    pub max_eigen_residual: Option<f64>,
    /// Coarse solves that needed the Tikhonov fallback.
    pub regularized_coarse_solves: usize,
}

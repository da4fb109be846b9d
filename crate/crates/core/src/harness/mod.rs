//! Training loop, evaluation, ablation runs and run configuration.

mod ablate;
mod eval;
pub mod metrics;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ablate::{ablate, AblationRow, AblationTable};
pub use eval::{
    evaluate, predict_all, read_predictions, score_predictions, write_predictions, EvalOutput,
    EvalReport, Predicted, PredictionRecord, TypeScores, METRIC_NOTES,
};
pub use train::{
    prepare_dataset, train, train_prepared, Checkpointing, EpochControl, PreparedDataset,
    RunCheckpoint, RunMetadata, TrainOutput,
};

use crate::error::{Error, Result};
use crate::heads::DEFAULT_MAX_TERMS;
use crate::model::{Ablation, ModelConfig};

/// Env var capping the number of worker threads.
pub const THREADS_ENV: &str = "NUMGRAPH_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub d_h: usize,
    /// Graph reasoning iterations.
    #[serde(rename = "T")]
    pub t: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_encoder: f64,
    pub lr_other: f64,
    pub weight_decay_encoder: f64,
    pub weight_decay_other: f64,
    pub seed: u64,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_mix")]
    pub n_mix_layers: usize,
    #[serde(default = "default_terms")]
    pub max_terms: usize,
}

fn default_vocab() -> usize {
    4096
}

fn default_mix() -> usize {
    1
}

fn default_terms() -> usize {
    DEFAULT_MAX_TERMS
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d_h: 64,
            t: 4,
            batch_size: 16,
            epochs: 5,
            lr_encoder: 5e-5,
            lr_other: 1e-4,
            weight_decay_encoder: 1e-6,
            weight_decay_other: 5e-5,
            seed: 0,
            ablation: Ablation::Full,
            vocab_size: default_vocab(),
            n_mix_layers: default_mix(),
            max_terms: default_terms(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if self.t < 1 {
            return bad("T must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if self.vocab_size < 1 {
            return bad("vocab_size must be at least 1");
        }
        if self.d_h < 8 || !self.d_h.is_multiple_of(2) {
            return bad("d_h must be even and at least 8");
        }
        for (name, v) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_other", self.lr_other),
            ("weight_decay_encoder", self.weight_decay_encoder),
            ("weight_decay_other", self.weight_decay_other),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!(
                    "{name} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab_size,
            d_h: self.d_h,
            n_mix_layers: self.n_mix_layers,
            iterations: self.t,
            ablation: self.ablation,
            seed: self.seed,
        }
    }

    pub fn with_ablation(&self, ablation: Ablation) -> Self {
        Self {
            ablation,
            ..self.clone()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Worker pool sized by `NUMGRAPH_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            Error::InvalidArgument(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))
        })?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

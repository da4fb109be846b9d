use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{thread_pool, RunConfig};
use crate::annotate::annotate;
use crate::data::DropExample;
use crate::diffcore::{Adam, Checkpoint, Gradients, GroupHyper, ParamGroup, ParamStore};
use crate::error::{Error, Result};
use crate::heads::find_supervision;
use crate::model::{loss_and_gradients, Model, PreparedExample};

/// Annotated, supervised examples ready for training.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub examples: Vec<PreparedExample>,
    pub n_input: usize,
    /// No derivation reproduces the gold answer.
    pub n_unanswerable: usize,
    /// Annotation could not be turned into model input.
    pub n_invalid: usize,
}

/// Annotates every example and keeps the ones with at least one derivation.
pub fn prepare_dataset(config: &RunConfig, data: &[DropExample]) -> Result<PreparedDataset> {
    let mc = config.model_config();
    let pool = thread_pool()?;
    let prepared: Vec<Option<PreparedExample>> = pool.install(|| {
        data.par_iter()
            .map(|ex| {
                let (ann, _) = annotate(&ex.question, &ex.passage);
                let sup = find_supervision(&ex.gold, &ann, config.max_terms);
                PreparedExample::new(&mc, ex.query_id.clone(), ann, Some(sup)).ok()
            })
            .collect()
    });
    let mut out = PreparedDataset {
        examples: Vec::new(),
        n_input: data.len(),
        n_unanswerable: 0,
        n_invalid: 0,
    };
    for p in prepared {
        match p {
            None => out.n_invalid += 1,
            Some(p) if p.supervision.as_ref().is_some_and(|s| s.is_answerable()) => {
                out.examples.push(p)
            }
            Some(_) => out.n_unanswerable += 1,
        }
    }
    Ok(out)
}

/// Facts about a run kept alongside its checkpoints.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub n_train: usize,
    pub n_filtered: usize,
    pub epochs_completed: usize,
    pub loss_curve: Vec<f64>,
    pub gradient_clipping: bool,
    pub warmup: bool,
    pub dropout: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub config: RunConfig,
    pub metadata: RunMetadata,
    pub params: Checkpoint,
}

impl RunCheckpoint {
    pub fn new(config: &RunConfig, metadata: &RunMetadata, model: &Model) -> Self {
        Self {
            config: config.clone(),
            metadata: metadata.clone(),
            params: model.params.to_checkpoint(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn model(&self) -> Result<Model> {
        self.config.validate()?;
        let params = ParamStore::from_checkpoint(self.params.clone())?;
        Model::from_params(self.config.model_config(), params)
    }
}

/// Where per-epoch checkpoints go.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Checkpointing {
    #[default]
    Off,
    /// `epoch_NNN.json` per epoch plus `last.json`.
    Dir(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpochControl {
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: Model,
    pub loss_curve: Vec<f64>,
    pub metadata: RunMetadata,
}

/// Mini-batch Adam over prepared examples. `on_epoch` sees the epoch
/// index, its mean loss and the current model.
pub fn train_prepared<F>(
    config: &RunConfig,
    data: &PreparedDataset,
    checkpointing: &Checkpointing,
    mut on_epoch: F,
) -> Result<TrainOutput>
where
    F: FnMut(usize, f64, &Model) -> Result<EpochControl>,
{
    config.validate()?;
    let examples = &data.examples;
    if examples.is_empty() {
        return Err(Error::Validation(format!(
            "no trainable examples: {} input, {} without a derivation, {} invalid",
            data.n_input, data.n_unanswerable, data.n_invalid
        )));
    }
    if let Checkpointing::Dir(dir) = checkpointing {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut model = Model::new(config.model_config())?;
    let mut adam = Adam::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let pool = thread_pool()?;
    let hyper = |g: ParamGroup| match g {
        ParamGroup::Encoder => GroupHyper {
            lr: config.lr_encoder,
            weight_decay: config.weight_decay_encoder,
        },
        ParamGroup::Other => GroupHyper {
            lr: config.lr_other,
            weight_decay: config.weight_decay_other,
        },
    };
    let mut metadata = RunMetadata {
        n_train: examples.len(),
        n_filtered: data.n_input - examples.len(),
        ..RunMetadata::default()
    };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<Result<(f64, Gradients)>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| loss_and_gradients(&model, &examples[i]))
                    .collect()
            });
            let mut grads = Gradients::zeros_like(&model.params);
            for r in results {
                let (loss, g) = r?;
                total += loss;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.params, &grads, hyper)?;
        }
        let mean = total / examples.len() as f64;
        log::info!("epoch {} mean loss {:.6}", epoch + 1, mean);
        metadata.loss_curve.push(mean);
        metadata.epochs_completed = epoch + 1;
        if let Checkpointing::Dir(dir) = checkpointing {
            let ck = RunCheckpoint::new(config, &metadata, &model);
            ck.save(&dir.join(format!("epoch_{:03}.json", epoch + 1)))?;
            ck.save(&dir.join("last.json"))?;
        }
        if on_epoch(epoch, mean, &model)? == EpochControl::Stop {
            break;
        }
    }
    Ok(TrainOutput {
        model,
        loss_curve: metadata.loss_curve.clone(),
        metadata,
    })
}

/// Prepares `data` and trains for the configured number of epochs.
pub fn train(
    config: &RunConfig,
    data: &[DropExample],
    checkpointing: &Checkpointing,
) -> Result<TrainOutput> {
    let prepared = prepare_dataset(config, data)?;
    log::info!(
        "training on {} of {} examples ({} without derivation, {} invalid)",
        prepared.examples.len(),
        prepared.n_input,
        prepared.n_unanswerable,
        prepared.n_invalid
    );
    train_prepared(config, &prepared, checkpointing, |_, _, _| {
        Ok(EpochControl::Continue)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::heads::GoldAnswer;

    fn small() -> RunConfig {
        RunConfig {
            d_h: 16,
            t: 2,
            batch_size: 4,
            epochs: 3,
            lr_encoder: 1e-2,
            lr_other: 1e-2,
            weight_decay_encoder: 0.0,
            weight_decay_other: 0.0,
            seed: 9,
            vocab_size: 256,
            ..RunConfig::default()
        }
    }

    fn one_example() -> Vec<DropExample> {
        vec![DropExample {
            passage_id: "p".into(),
            passage: "In the first quarter, Smith scored 12 points. Later, Jones scored 7 points."
                .into(),
            query_id: "q".into(),
            question: "How many points did Smith and Jones score in total?".into(),
            gold: GoldAnswer::number("19"),
            validated: Vec::new(),
        }]
    }

    #[test]
    fn single_example_overfits() {
        let cfg = RunConfig {
            epochs: 150,
            batch_size: 1,
            ..small()
        };
        let out = train(&cfg, &one_example(), &Checkpointing::Off).unwrap();
        let curve = &out.loss_curve;
        assert!(*curve.last().unwrap() < 0.01, "{curve:?}");
        // After a short warm start the curve only goes down.
        let late = &curve[20..];
        let ups = late.windows(2).filter(|w| w[1] > w[0] + 1e-9).count();
        assert!(ups * 10 <= late.len(), "{ups} increases in {late:?}");
    }

    #[test]
    fn seeded_runs_are_identical() {
        let data = generate_synthetic(&SyntheticSpec::new(12, 4)).unwrap();
        let a = train(&small(), &data, &Checkpointing::Off).unwrap();
        let b = train(&small(), &data, &Checkpointing::Off).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let cfg = RunConfig {
            lr_encoder: 0.0,
            lr_other: 0.0,
            weight_decay_encoder: 1e-2,
            weight_decay_other: 1e-2,
            ..small()
        };
        let out = train(&cfg, &one_example(), &Checkpointing::Off).unwrap();
        let fresh = Model::new(cfg.model_config()).unwrap();
        assert_eq!(out.model.params, fresh.params);
    }

    #[test]
    fn all_filtered_is_an_error() {
        let mut data = one_example();
        data[0].gold = GoldAnswer::number("123456");
        assert!(matches!(
            train(&small(), &data, &Checkpointing::Off),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn checkpoints_written_each_epoch_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            epochs: 2,
            ..small()
        };
        let out = train(&cfg, &one_example(), &Checkpointing::Dir(dir.path().into())).unwrap();
        assert!(dir.path().join("epoch_001.json").exists());
        let ck = RunCheckpoint::load(&dir.path().join("epoch_002.json")).unwrap();
        assert_eq!(ck.metadata.loss_curve, out.loss_curve);
        assert!(!ck.metadata.gradient_clipping && !ck.metadata.warmup && !ck.metadata.dropout);
        assert_eq!(ck.model().unwrap().params, out.model.params);
    }
}

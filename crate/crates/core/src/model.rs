//! Full stack: encoder, graph reasoning and answer heads under one
//! parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::AnnotatedPassage;
use crate::diffcore::{Gradients, ParamStore, Tape};
use crate::encoder::{self, EncoderConfig, EncoderOutput};
use crate::error::{Error, Result};
use crate::graph::{build_graph_with, GraphMode, ReasoningGraph};
use crate::heads::{self, GoldAnnotation, HeadOutputs, Prediction};
use crate::qdgat::{self, AttentionRecord, QdgatConfig};

/// Which model variant to build.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    #[default]
    #[serde(rename = "full")]
    Full,
    /// Numbers only, one shared attention vector.
    NH,
    /// No command-vector modulation.
    NQ,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NH, Ablation::NQ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NH => "NH",
            Ablation::NQ => "NQ",
        }
    }

    pub fn graph_mode(self) -> GraphMode {
        match self {
            Ablation::NH => GraphMode::Homogeneous,
            _ => GraphMode::Heterogeneous,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_h: usize,
    pub n_mix_layers: usize,
    pub iterations: usize,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            d_h: 64,
            n_mix_layers: 1,
            iterations: 4,
            ablation: Ablation::Full,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            vocab_size: self.vocab_size,
            d_h: self.d_h,
            n_mix_layers: self.n_mix_layers,
            seed: self.seed,
        }
    }

    pub fn qdgat(&self) -> QdgatConfig {
        QdgatConfig {
            d_h: self.d_h,
            iterations: self.iterations,
            question_directed: self.ablation != Ablation::NQ,
            relation_specific: self.ablation != Ablation::NH,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Registers every parameter with seeded Glorot initialization.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        encoder::register_params(&mut params, &config.encoder(), &mut rng)?;
        qdgat::register_params(&mut params, &config.qdgat(), &mut rng)?;
        heads::register_params(&mut params, config.d_h, &mut rng)?;
        Ok(Self { config, params })
    }

    /// Wraps loaded parameters after checking they match `config` exactly.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let reference = Model::new(config.clone())?;
        if reference.params.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {} parameters, configuration expects {}",
                params.len(),
                reference.params.len()
            )));
        }
        for (_, name, t) in reference.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "checkpoint",
                    lhs: got.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(Self { config, params })
    }
}

/// An annotated example with its graph, vocabulary ids and supervision.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    pub query_id: String,
    pub annotation: AnnotatedPassage,
    pub graph: ReasoningGraph,
    pub q_ids: Vec<usize>,
    pub p_ids: Vec<usize>,
    pub supervision: Option<GoldAnnotation>,
}

impl PreparedExample {
    pub fn new(
        config: &ModelConfig,
        query_id: impl Into<String>,
        annotation: AnnotatedPassage,
        supervision: Option<GoldAnnotation>,
    ) -> Result<Self> {
        annotation.validate()?;
        if annotation.question.tokens.is_empty() {
            return Err(Error::InvalidArgument("question has no tokens".into()));
        }
        let graph = build_graph_with(&annotation, config.ablation.graph_mode());
        Ok(Self {
            query_id: query_id.into(),
            q_ids: encoder::token_ids(&annotation.question.tokens, config.vocab_size),
            p_ids: encoder::token_ids(&annotation.passage.tokens, config.vocab_size),
            graph,
            annotation,
            supervision,
        })
    }
}

pub struct ForwardPass {
    pub enc: EncoderOutput,
    pub u: crate::diffcore::Var,
    pub heads: HeadOutputs,
    pub attention: AttentionRecord,
}

pub fn forward(tape: &mut Tape, config: &ModelConfig, ex: &PreparedExample) -> Result<ForwardPass> {
    let enc = encoder::encode(tape, &config.encoder(), &ex.q_ids, &ex.p_ids)?;
    let (vt, attention) = qdgat::qdgat_run(tape, &config.qdgat(), &ex.graph, &enc)?;
    let u = qdgat::merge_output(tape, &enc, &ex.graph, vt)?;
    let heads = heads::forward(tape, u, enc.c, &ex.annotation)?;
    Ok(ForwardPass {
        enc,
        u,
        heads,
        attention,
    })
}

/// Marginal negative log-likelihood and its parameter gradients.
pub fn loss_and_gradients(model: &Model, ex: &PreparedExample) -> Result<(f64, Gradients)> {
    let sup = ex
        .supervision
        .as_ref()
        .filter(|s| s.is_answerable())
        .ok_or_else(|| Error::InvalidArgument(format!("{}: no supervision", ex.query_id)))?;
    let mut tape = Tape::new(&model.params);
    let fp = forward(&mut tape, &model.config, ex)?;
    let loss = heads::loss(&mut tape, &fp.heads, &sup.derivations)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    Ok((value, grads))
}

pub fn predict(model: &Model, ex: &PreparedExample) -> Result<(Prediction, AttentionRecord)> {
    let mut tape = Tape::new(&model.params);
    let fp = forward(&mut tape, &model.config, ex)?;
    let pred = heads::decode(&tape, &fp.heads, &ex.annotation)?;
    Ok((pred, fp.attention))
}

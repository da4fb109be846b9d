//! Toy contextual encoder and the shared projections `W^M`, `W^c`.
//!
//! Tokens are hashed into a fixed vocabulary, embedded, offset by a
//! sinusoidal position signal and refined by residual mixing layers
//! `h <- h + elu(h W_self + mean(h) W_ctx + b)`. Question and passage are
//! encoded independently. Pre-computed vectors can be supplied instead
//! through the binary embedding format handled by [`read_embedding_file`].

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::Token;
use crate::diffcore::{ParamGroup, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const EMBED: &str = "enc.embed";
pub const W_M: &str = "proj.W_M";
pub const W_C: &str = "proj.W_c";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_h: usize,
    pub n_mix_layers: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            d_h: 64,
            n_mix_layers: 1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_h < 8 || !self.d_h.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "d_h must be even and at least 8, got {}",
                self.d_h
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::InvalidArgument("vocab_size must be positive".into()));
        }
        Ok(())
    }
}

/// Tape handles for the encoder outputs of one example.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `[|Q|, d_h]`
    pub q_hat: Var,
    /// `[|P|, d_h]`
    pub p_hat: Var,
    pub m_q: Var,
    pub m_p: Var,
    /// `[d_h]`
    pub c: Var,
    pub n_q: usize,
    pub n_p: usize,
}

fn mix_names(l: usize) -> [String; 3] {
    [
        format!("enc.mix{l}.w_self"),
        format!("enc.mix{l}.w_ctx"),
        format!("enc.mix{l}.bias"),
    ]
}

/// Registers embedding table, mixing layers and both projections.
pub fn register_params<R: Rng>(
    store: &mut ParamStore,
    cfg: &EncoderConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let d = cfg.d_h;
    let limit = (3.0 / d as f64).sqrt();
    let table = (0..cfg.vocab_size * d)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    store.register(
        EMBED,
        Tensor::matrix(cfg.vocab_size, d, table)?,
        ParamGroup::Encoder,
    )?;
    for l in 0..cfg.n_mix_layers {
        let [ws, wc, b] = mix_names(l);
        store.register_glorot(ws, d, d, ParamGroup::Encoder, rng)?;
        store.register_glorot(wc, d, d, ParamGroup::Encoder, rng)?;
        store.register(b, Tensor::vector(vec![0.0; d]), ParamGroup::Encoder)?;
    }
    store.register_glorot(W_M, d, d, ParamGroup::Other, rng)?;
    store.register_glorot(W_C, d, d, ParamGroup::Other, rng)?;
    Ok(())
}

/// 64-bit FNV-1a of the lowercased token text, reduced modulo `vocab_size`.
pub fn token_id(text: &str, vocab_size: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.to_lowercase().bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h % vocab_size as u64) as usize
}

pub fn token_ids(tokens: &[Token], vocab_size: usize) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| token_id(&t.text, vocab_size))
        .collect()
}

/// Sinusoidal signal shifted so that position 0 maps to the zero vector:
/// `[sin(p w_k), cos(p w_k) - 1]` with `w_k = 10000^(-2k/d)`.
pub fn position_signal(n: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; n * d];
    for p in 0..n {
        for k in 0..d / 2 {
            let w = 10000f64.powf(-2.0 * k as f64 / d as f64);
            let a = p as f64 * w;
            data[p * d + 2 * k] = a.sin();
            data[p * d + 2 * k + 1] = a.cos() - 1.0;
        }
    }
    Tensor::matrix(n, d, data).expect("consistent shape")
}

/// Contextual rows `[ids.len(), d_h]` for one text.
pub fn encode_text(tape: &mut Tape, cfg: &EncoderConfig, ids: &[usize]) -> Result<Var> {
    if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(Error::Index {
            what: "token id",
            index: bad,
            len: cfg.vocab_size,
        });
    }
    let table = tape.param(EMBED)?;
    let emb = tape.gather_rows(table, ids)?;
    let pos = tape.constant(position_signal(ids.len(), cfg.d_h))?;
    let mut h = tape.add(emb, pos)?;
    if ids.is_empty() {
        return Ok(h);
    }
    for l in 0..cfg.n_mix_layers {
        let [ws, wc, b] = mix_names(l);
        let (ws, wc, b) = (tape.param(&ws)?, tape.param(&wc)?, tape.param(&b)?);
        let own = tape.matmul(h, ws)?;
        let ctx = tape.mean(h, 0)?;
        let ctx = tape.matmul(ctx, wc)?;
        let pre = tape.add_row(own, ctx)?;
        let pre = tape.add_row(pre, b)?;
        let act = tape.elu(pre)?;
        h = tape.add(h, act)?;
    }
    Ok(h)
}

/// Applies the shared projection `W^M` to both texts and `W^c` to the mean
/// question row.
pub fn project(tape: &mut Tape, q_hat: Var, p_hat: Var) -> Result<EncoderOutput> {
    let n_q = tape.dims(q_hat).0;
    let n_p = tape.dims(p_hat).0;
    if n_q == 0 {
        return Err(Error::InvalidArgument(
            "empty question: command vector is undefined".into(),
        ));
    }
    let wm = tape.param(W_M)?;
    let wc = tape.param(W_C)?;
    let m_q = tape.matmul(q_hat, wm)?;
    let m_p = tape.matmul(p_hat, wm)?;
    let pooled = tape.mean(q_hat, 0)?;
    let c = tape.matmul(pooled, wc)?;
    Ok(EncoderOutput {
        q_hat,
        p_hat,
        m_q,
        m_p,
        c,
        n_q,
        n_p,
    })
}

/// Encodes a question/passage pair of vocabulary ids.
pub fn encode(
    tape: &mut Tape,
    cfg: &EncoderConfig,
    q_ids: &[usize],
    p_ids: &[usize],
) -> Result<EncoderOutput> {
    if q_ids.is_empty() {
        return Err(Error::InvalidArgument(
            "empty question: command vector is undefined".into(),
        ));
    }
    let q_hat = encode_text(tape, cfg, q_ids)?;
    let p_hat = encode_text(tape, cfg, p_ids)?;
    project(tape, q_hat, p_hat)
}

/// Uses externally computed token vectors in place of the toy encoder.
/// Gradients then reach only `W^M` and `W^c`.
pub fn encode_external(
    tape: &mut Tape,
    d_h: usize,
    q: &Tensor,
    p: &Tensor,
    n_q: usize,
    n_p: usize,
) -> Result<EncoderOutput> {
    for (which, t, n) in [("question", q, n_q), ("passage", p, n_p)] {
        if t.shape().len() != 2 || t.cols() != d_h {
            return Err(Error::InvalidArgument(format!(
                "{which} embeddings have dimension {:?}, expected {d_h}",
                t.shape().last()
            )));
        }
        if t.rows() != n {
            return Err(Error::InvalidArgument(format!(
                "{which} embeddings have {} rows for {n} tokens",
                t.rows()
            )));
        }
    }
    let q_hat = tape.constant(q.clone())?;
    let p_hat = tape.constant(p.clone())?;
    project(tape, q_hat, p_hat)
}

/// Reads `u64 n_rows, u64 d` (little endian) followed by row-major `f64`s.
pub fn read_embedding_file(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::InvalidArgument(format!(
            "{}: embedding header truncated",
            path.display()
        )));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
    let (n, d) = (word(0) as usize, word(1) as usize);
    let expected = n
        .checked_mul(d)
        .and_then(|k| k.checked_mul(8))
        .and_then(|k| k.checked_add(16));
    if expected != Some(bytes.len()) {
        return Err(Error::InvalidArgument(format!(
            "{}: header says {n}x{d} but file holds {} payload bytes",
            path.display(),
            bytes.len() - 16
        )));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::matrix(n, d, data)
}

pub fn write_embedding_file(path: &Path, t: &Tensor) -> Result<()> {
    let (n, d) = t.dims();
    let mut out = Vec::with_capacity(16 + 8 * t.numel());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

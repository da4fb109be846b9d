//! Question-directed graph attention over a [`ReasoningGraph`].
//!
//! Per iteration `t`:
//!
//! ```text
//! m^t   = elu(c W_fc) W_dc^t
//! x_q   = [v^t : v^0] W_qv  ⊙  m^t W_qc        (x_k, x_v alike)
//! a_ij  = leaky_relu( Σ_{r ∈ R_ij} [x_q,i : x_k,j] W_a^r )
//! α_i·  = softmax over N_i of a_i·
//! x̂_i   = Σ_j α_ij x_v,j
//! v^t+1 = [v^t : x̂] W_u
//! ```
//!
//! Vectors are rows, so every `W` maps by right multiplication.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamGroup, ParamStore, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::encoder::EncoderOutput;
use crate::error::{Error, Result};
use crate::graph::{NodeId, ReasoningGraph, Relation, Source};

pub const W_FC: &str = "qdgat.W_fc";
pub const W_U: &str = "qdgat.W_u";
pub const W_A_SHARED: &str = "qdgat.W_a.shared";
const VALUE_PROJ: [&str; 3] = ["qdgat.W_qv", "qdgat.W_kv", "qdgat.W_vv"];
const COMMAND_PROJ: [&str; 3] = ["qdgat.W_qc", "qdgat.W_kc", "qdgat.W_vc"];

pub fn w_dc(t: usize) -> String {
    format!("qdgat.W_dc.{t}")
}

pub fn w_a(r: Relation) -> String {
    format!("qdgat.W_a.{}", r.as_str())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QdgatConfig {
    pub d_h: usize,
    pub iterations: usize,
    /// Command-vector modulation of the projections (off for the NQ ablation).
    pub question_directed: bool,
    /// One attention vector per relation (off for the NH ablation).
    pub relation_specific: bool,
}

impl QdgatConfig {
    pub fn new(d_h: usize, iterations: usize) -> Self {
        Self {
            d_h,
            iterations,
            question_directed: true,
            relation_specific: true,
        }
    }
}

pub fn register_params<R: Rng>(
    store: &mut ParamStore,
    cfg: &QdgatConfig,
    rng: &mut R,
) -> Result<()> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidArgument(
            "iterations must be at least 1".into(),
        ));
    }
    let d = cfg.d_h;
    let g = ParamGroup::Other;
    if cfg.question_directed {
        store.register_glorot(W_FC, d, d, g, rng)?;
        for t in 0..cfg.iterations {
            store.register_glorot(w_dc(t), d, d, g, rng)?;
        }
        for name in COMMAND_PROJ {
            store.register_glorot(name, d, d, g, rng)?;
        }
    }
    for name in VALUE_PROJ {
        store.register_glorot(name, 2 * d, d, g, rng)?;
    }
    if cfg.relation_specific {
        for r in Relation::ALL {
            store.register_glorot(w_a(r), 2 * d, 1, g, rng)?;
        }
    } else {
        store.register_glorot(W_A_SHARED, 2 * d, 1, g, rng)?;
    }
    store.register_glorot(W_U, 2 * d, d, g, rng)?;
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct NodeStates {
    /// `[|V|, d_h]`
    pub v0: Var,
    pub vt: Var,
    pub iteration: usize,
    pub n_nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub node: usize,
    pub neighbors: Vec<usize>,
    pub alpha: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    /// One entry per iteration; rows only for nodes with neighbors.
    pub iterations: Vec<Vec<AttentionRow>>,
}

/// Stacks `top` above `bottom` (both `[·, d]`).
pub fn concat_rows(tape: &mut Tape, top: Var, bottom: Var) -> Result<Var> {
    let (a, _) = tape.dims(top);
    let (b, _) = tape.dims(bottom);
    let upper = tape.scatter_add_rows(top, &(0..a).collect::<Vec<_>>(), a + b)?;
    let lower = tape.scatter_add_rows(bottom, &(a..a + b).collect::<Vec<_>>(), a + b)?;
    tape.add(upper, lower)
}

/// Row of the merged `[question ; passage]` matrix holding token `k`.
fn token_row(source: Source, k: usize, n_q: usize) -> usize {
    match source {
        Source::Question => k,
        Source::Passage => n_q + k,
    }
}

/// `(merged row, node)` for every token covered by a node.
fn node_token_rows(g: &ReasoningGraph, enc: &EncoderOutput) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for n in g.nodes() {
        let len = match n.source {
            Source::Question => enc.n_q,
            Source::Passage => enc.n_p,
        };
        let (a, b) = n.token_span;
        if a > b || b >= len {
            return Err(Error::Index {
                what: "node span token",
                index: b,
                len,
            });
        }
        out.extend((a..=b).map(|k| (token_row(n.source, k, enc.n_q), n.id.0)));
    }
    Ok(out)
}

/// `v^0` row `i` is the mean of the projected token rows covered by node `i`.
pub fn init_node_inputs(
    tape: &mut Tape,
    g: &ReasoningGraph,
    enc: &EncoderOutput,
) -> Result<NodeStates> {
    let n = g.len();
    let d = tape.dims(enc.m_q).1;
    let pairs = node_token_rows(g, enc)?;
    let v0 = if n == 0 {
        tape.constant(Tensor::zeros(&[0, d]))?
    } else {
        let m = concat_rows(tape, enc.m_q, enc.m_p)?;
        let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let owners: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let picked = tape.gather_rows(m, &rows)?;
        let summed = tape.scatter_add_rows(picked, &owners, n)?;
        let inv: Vec<f64> = g
            .nodes()
            .iter()
            .map(|v| 1.0 / (v.token_span.1 - v.token_span.0 + 1) as f64)
            .collect();
        let inv = tape.constant(Tensor::vector(inv))?;
        tape.mul_col(summed, inv)?
    };
    Ok(NodeStates {
        v0,
        vt: v0,
        iteration: 0,
        n_nodes: n,
    })
}

/// `m^t` for iteration `t`.
pub fn command_vector(tape: &mut Tape, c: Var, t: usize) -> Result<Var> {
    let wfc = tape.param(W_FC)?;
    let wdc = tape.param(&w_dc(t))?;
    let h = tape.matmul(c, wfc)?;
    let h = tape.elu(h)?;
    tape.matmul(h, wdc)
}

fn tag_iteration(t: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("qdgat iteration {t}: {op}"),
        },
        other => other,
    }
}

/// One message-passing step `t -> t + 1`.
pub fn qdgat_single(
    tape: &mut Tape,
    cfg: &QdgatConfig,
    g: &ReasoningGraph,
    states: &NodeStates,
    c: Var,
) -> Result<(NodeStates, Vec<AttentionRow>)> {
    let t = states.iteration;
    if t >= cfg.iterations {
        return Err(Error::InvalidArgument(format!(
            "iteration {t} exceeds configured {}",
            cfg.iterations
        )));
    }
    if states.n_nodes != g.len() {
        return Err(Error::InvalidArgument(format!(
            "{} node states for a graph of {} nodes",
            states.n_nodes,
            g.len()
        )));
    }
    step(tape, cfg, g, states, c).map_err(tag_iteration(t))
}

fn step(
    tape: &mut Tape,
    cfg: &QdgatConfig,
    g: &ReasoningGraph,
    states: &NodeStates,
    c: Var,
) -> Result<(NodeStates, Vec<AttentionRow>)> {
    let n = g.len();
    let d = cfg.d_h;
    let h = tape.concat(&[states.vt, states.v0])?;
    let cmd = if cfg.question_directed {
        Some(command_vector(tape, c, states.iteration)?)
    } else {
        None
    };
    let mut proj = [h; 3];
    for (k, out) in proj.iter_mut().enumerate() {
        let wv = tape.param(VALUE_PROJ[k])?;
        let x = tape.matmul(h, wv)?;
        *out = match cmd {
            Some(m) => {
                let wc = tape.param(COMMAND_PROJ[k])?;
                let gate = tape.matmul(m, wc)?;
                tape.mul_row(x, gate)?
            }
            None => x,
        };
    }
    let [xq, xk, xv] = proj;

    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut rels = Vec::new();
    for i in 0..n {
        for (j, rs) in g.neighbors(NodeId(i))? {
            src.push(i);
            dst.push(*j);
            rels.push(rs.as_slice());
        }
    }

    let mut rows = Vec::new();
    let xhat = if src.is_empty() {
        tape.constant(Tensor::zeros(&[n, d]))?
    } else {
        let e = src.len();
        let qi = tape.gather_rows(xq, &src)?;
        let kj = tape.gather_rows(xk, &dst)?;
        let pair = tape.concat(&[qi, kj])?;
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (idx, rs) in rels.iter().enumerate() {
            for r in rs.iter() {
                let name = if cfg.relation_specific {
                    w_a(*r)
                } else {
                    W_A_SHARED.to_string()
                };
                match groups.iter_mut().find(|(nm, _)| *nm == name) {
                    Some((_, v)) => v.push(idx),
                    None => groups.push((name, vec![idx])),
                }
            }
        }
        let mut score: Option<Var> = None;
        for (name, idx) in &groups {
            let w = tape.param(name)?;
            let sub = tape.gather_rows(pair, idx)?;
            let s = tape.matmul(sub, w)?;
            let s = tape.scatter_add_rows(s, idx, e)?;
            score = Some(match score {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
        let score = score.expect("every edge carries a relation");
        let a = tape.leaky_relu(score, LEAKY_SLOPE)?;
        let alpha = tape.segment_softmax(a, &src)?;

        let av = tape.value(alpha);
        let mut k = 0;
        while k < e {
            let node = src[k];
            let mut row = AttentionRow {
                node,
                neighbors: Vec::new(),
                alpha: Vec::new(),
            };
            while k < e && src[k] == node {
                row.neighbors.push(dst[k]);
                row.alpha.push(av[k]);
                k += 1;
            }
            rows.push(row);
        }

        let vj = tape.gather_rows(xv, &dst)?;
        let msg = tape.mul_col(vj, alpha)?;
        tape.scatter_add_rows(msg, &src, n)?
    };

    let wu = tape.param(W_U)?;
    let upd = tape.concat(&[states.vt, xhat])?;
    let next = tape.matmul(upd, wu)?;
    Ok((
        NodeStates {
            v0: states.v0,
            vt: next,
            iteration: states.iteration + 1,
            n_nodes: n,
        },
        rows,
    ))
}

/// Runs all configured iterations from `states` (normally fresh from
/// [`init_node_inputs`]) and returns `v^T` with the attention trace.
pub fn qdgat_run_from(
    tape: &mut Tape,
    cfg: &QdgatConfig,
    g: &ReasoningGraph,
    states: NodeStates,
    c: Var,
) -> Result<(Var, AttentionRecord)> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidArgument(
            "iterations must be at least 1".into(),
        ));
    }
    let mut record = AttentionRecord::default();
    if g.is_empty() {
        return Ok((states.vt, record));
    }
    let mut s = states;
    while s.iteration < cfg.iterations {
        let (next, rows) = qdgat_single(tape, cfg, g, &s, c)?;
        record.iterations.push(rows);
        s = next;
    }
    Ok((s.vt, record))
}

pub fn qdgat_run(
    tape: &mut Tape,
    cfg: &QdgatConfig,
    g: &ReasoningGraph,
    enc: &EncoderOutput,
) -> Result<(Var, AttentionRecord)> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidArgument(
            "iterations must be at least 1".into(),
        ));
    }
    let states = init_node_inputs(tape, g, enc)?;
    qdgat_run_from(tape, cfg, g, states, enc.c)
}

/// `U = [M^Q ; M^P]` with each node's `v^T` row added onto every token it
/// covers.
pub fn merge_output(
    tape: &mut Tape,
    enc: &EncoderOutput,
    g: &ReasoningGraph,
    vt: Var,
) -> Result<Var> {
    let m = concat_rows(tape, enc.m_q, enc.m_p)?;
    let pairs = node_token_rows(g, enc)?;
    if pairs.is_empty() {
        return Ok(m);
    }
    let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let owners: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let spread = tape.gather_rows(vt, &owners)?;
    let spread = tape.scatter_add_rows(spread, &rows, enc.n_q + enc.n_p)?;
    tape.add(m, spread)
}

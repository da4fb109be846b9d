//! Answer-type classifier, the five answer heads, the marginal-likelihood
//! loss over valid derivations, and decoding.

mod decode;
mod supervision;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use decode::{canonical_number, decode, render_span, AnswerValue, Prediction};
pub use supervision::{
    check_derivation, find_supervision, GoldAnnotation, GoldAnswer, GoldDate, GoldKind,
    DEFAULT_MAX_TERMS, MATCH_TOLERANCE,
};

use crate::annotate::AnnotatedPassage;
use crate::diffcore::{ParamGroup, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnswerType {
    PassageSpan,
    QuestionSpan,
    MultiSpan,
    Count,
    Arithmetic,
}

impl AnswerType {
    pub const ALL: [AnswerType; 5] = [
        AnswerType::PassageSpan,
        AnswerType::QuestionSpan,
        AnswerType::MultiSpan,
        AnswerType::Count,
        AnswerType::Arithmetic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerType::PassageSpan => "PASSAGE_SPAN",
            AnswerType::QuestionSpan => "QUESTION_SPAN",
            AnswerType::MultiSpan => "MULTI_SPAN",
            AnswerType::Count => "COUNT",
            AnswerType::Arithmetic => "ARITHMETIC",
        }
    }
}

/// Coefficients in `{-1, 0, +1}` over the passage numbers, in mention order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignedExpression {
    pub coefficients: Vec<i8>,
}

impl SignedExpression {
    pub fn new(coefficients: Vec<i8>) -> Result<Self> {
        if let Some(c) = coefficients.iter().find(|c| !(-1..=1).contains(*c)) {
            return Err(Error::InvalidArgument(format!(
                "coefficient {c} not in {{-1, 0, 1}}"
            )));
        }
        Ok(Self { coefficients })
    }

    /// `Σ coeff_k · values_k`, accumulated left to right.
    pub fn evaluate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.coefficients.len() {
            return Err(Error::InvalidArgument(format!(
                "{} coefficients for {} numbers",
                self.coefficients.len(),
                values.len()
            )));
        }
        let mut acc = 0.0;
        for (&c, &v) in self.coefficients.iter().zip(values) {
            match c {
                1 => acc += v,
                -1 => acc -= v,
                _ => {}
            }
        }
        Ok(acc)
    }

    pub fn nonzero(&self) -> usize {
        self.coefficients.iter().filter(|&&c| c != 0).count()
    }
}

/// Head-specific content of a derivation. Span indices are inclusive token
/// positions in the question or passage.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Span(usize, usize),
    Spans(Vec<(usize, usize)>),
    Count(u8),
    Expression(SignedExpression),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerDerivation {
    pub atype: AnswerType,
    pub payload: Payload,
    pub log_prob: f64,
}

impl AnswerDerivation {
    pub fn new(atype: AnswerType, payload: Payload) -> Result<Self> {
        let ok = match (&atype, &payload) {
            (AnswerType::PassageSpan | AnswerType::QuestionSpan, Payload::Span(s, e)) => s <= e,
            (AnswerType::MultiSpan, Payload::Spans(v)) => v.iter().all(|(s, e)| s <= e),
            (AnswerType::Count, Payload::Count(n)) => *n < 10,
            (AnswerType::Arithmetic, Payload::Expression(_)) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "payload {payload:?} does not fit {}",
                atype.as_str()
            )));
        }
        Ok(Self {
            atype,
            payload,
            log_prob: 0.0,
        })
    }
}

/// Multi-span tags.
pub const TAG_O: usize = 0;
pub const TAG_B: usize = 1;
pub const TAG_I: usize = 2;

/// Tags for a set of passage spans over `n` tokens.
pub fn spans_to_tags(spans: &[(usize, usize)], n: usize) -> Result<Vec<usize>> {
    let mut tags = vec![TAG_O; n];
    for &(s, e) in spans {
        if s > e || e >= n {
            return Err(Error::Index {
                what: "span end",
                index: e,
                len: n,
            });
        }
        if tags[s..=e].iter().any(|&t| t != TAG_O) {
            return Err(Error::InvalidArgument(format!(
                "span ({s}, {e}) overlaps another"
            )));
        }
        tags[s] = TAG_B;
        for t in &mut tags[s + 1..=e] {
            *t = TAG_I;
        }
    }
    Ok(tags)
}

/// Maximal runs opened by `B` (or a stray `I`) and continued by `I`.
pub fn tags_to_spans(tags: &[usize]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &t) in tags.iter().enumerate() {
        match t {
            TAG_B => {
                if let Some(s) = open {
                    spans.push((s, i - 1));
                }
                open = Some(i);
            }
            TAG_I => {
                if open.is_none() {
                    open = Some(i);
                }
            }
            _ => {
                if let Some(s) = open.take() {
                    spans.push((s, i - 1));
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push((s, tags.len() - 1));
    }
    spans
}

const TYPE_FFN: &str = "head.type";
const PSPAN_FFN: &str = "head.pspan";
const QSPAN_FFN: &str = "head.qspan";
const TAGS_FFN: &str = "head.tags";
const COUNT_FFN: &str = "head.count";
const SIGN_FFN: &str = "head.sign";

/// Registers a two-layer `3d -> d -> out` mapping for every head.
pub fn register_params<R: Rng>(store: &mut ParamStore, d: usize, rng: &mut R) -> Result<()> {
    for (prefix, out) in [
        (TYPE_FFN, 5),
        (PSPAN_FFN, 2),
        (QSPAN_FFN, 2),
        (TAGS_FFN, 3),
        (COUNT_FFN, 10),
        (SIGN_FFN, 3),
    ] {
        let g = ParamGroup::Other;
        store.register_glorot(format!("{prefix}.w1"), 3 * d, d, g, rng)?;
        store.register(format!("{prefix}.b1"), Tensor::vector(vec![0.0; d]), g)?;
        store.register_glorot(format!("{prefix}.w2"), d, out, g, rng)?;
        store.register(format!("{prefix}.b2"), Tensor::vector(vec![0.0; out]), g)?;
    }
    Ok(())
}

fn ffn(tape: &mut Tape, x: Var, prefix: &str) -> Result<Var> {
    let w1 = tape.param(&format!("{prefix}.w1"))?;
    let b1 = tape.param(&format!("{prefix}.b1"))?;
    let w2 = tape.param(&format!("{prefix}.w2"))?;
    let b2 = tape.param(&format!("{prefix}.b2"))?;
    let h = tape.matmul(x, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.elu(h)?;
    let o = tape.matmul(h, w2)?;
    tape.add_row(o, b2)
}

/// `[x : c : x ⊙ c]` for a row vector or each row of a matrix.
fn with_command(tape: &mut Tape, x: Var, c: Var) -> Result<Var> {
    if tape.shape(x).len() == 1 {
        let prod = tape.mul(x, c)?;
        return tape.concat(&[x, c, prod]);
    }
    let n = tape.dims(x).0;
    let cr = tape.repeat_row(c, n)?;
    let prod = tape.mul_row(x, c)?;
    tape.concat(&[x, cr, prod])
}

/// Column `k` of a `[n, 2]` matrix as a length-`n` vector.
fn column(tape: &mut Tape, x: Var, k: usize) -> Result<Var> {
    let sel = tape.constant(Tensor::matrix(
        2,
        1,
        if k == 0 {
            vec![1.0, 0.0]
        } else {
            vec![0.0, 1.0]
        },
    )?)?;
    let n = tape.dims(x).0;
    let col = tape.matmul(x, sel)?;
    tape.reshape(col, &[n])
}

fn mean_rows_or_zero(tape: &mut Tape, x: Var) -> Result<Var> {
    let (n, d) = tape.dims(x);
    if n == 0 {
        tape.constant(Tensor::vector(vec![0.0; d]))
    } else {
        tape.mean(x, 0)
    }
}

/// Log-distributions produced by every head for one example.
#[derive(Clone, Debug)]
pub struct HeadOutputs {
    /// `[5]` log p(T)
    pub type_logp: Var,
    /// `[|P|]` each; `None` for an empty passage.
    pub passage_span: Option<(Var, Var)>,
    /// `[|Q|]` each.
    pub question_span: Option<(Var, Var)>,
    /// `[|P|, 3]`
    pub tags: Option<Var>,
    /// `[10]`
    pub count: Var,
    /// `[k, 3]` over passage numbers in mention order, column `c + 1` for
    /// coefficient `c`.
    pub signs: Option<Var>,
    pub n_q: usize,
    pub n_p: usize,
    pub number_values: Vec<f64>,
}

impl HeadOutputs {
    pub fn available(&self, t: AnswerType) -> bool {
        match t {
            AnswerType::PassageSpan => self.passage_span.is_some(),
            AnswerType::QuestionSpan => self.question_span.is_some(),
            AnswerType::MultiSpan => self.tags.is_some(),
            AnswerType::Count => true,
            AnswerType::Arithmetic => self.signs.is_some(),
        }
    }
}

/// Runs every head on the merged representation `u = [U^Q ; U^P]`.
pub fn forward(tape: &mut Tape, u: Var, c: Var, ann: &AnnotatedPassage) -> Result<HeadOutputs> {
    let n_q = ann.question.tokens.len();
    let n_p = ann.passage.tokens.len();
    let (rows, _) = tape.dims(u);
    if rows != n_q + n_p {
        return Err(Error::Shape {
            op: "heads",
            lhs: tape.shape(u).to_vec(),
            rhs: vec![n_q + n_p],
        });
    }
    let uq = tape.gather_rows(u, &(0..n_q).collect::<Vec<_>>())?;
    let up = tape.gather_rows(u, &(n_q..n_q + n_p).collect::<Vec<_>>())?;
    let mean_p = mean_rows_or_zero(tape, up)?;
    let mean_q = mean_rows_or_zero(tape, uq)?;

    let pooled = tape.concat(&[mean_p, mean_q, c])?;
    let type_logits = ffn(tape, pooled, TYPE_FFN)?;
    let type_logp = tape.log_softmax(type_logits)?;

    let span_head =
        |tape: &mut Tape, x: Var, n: usize, prefix: &str| -> Result<Option<(Var, Var)>> {
            if n == 0 {
                return Ok(None);
            }
            let feats = with_command(tape, x, c)?;
            let logits = ffn(tape, feats, prefix)?;
            let s = column(tape, logits, 0)?;
            let e = column(tape, logits, 1)?;
            Ok(Some((tape.log_softmax(s)?, tape.log_softmax(e)?)))
        };
    let passage_span = span_head(tape, up, n_p, PSPAN_FFN)?;
    let question_span = span_head(tape, uq, n_q, QSPAN_FFN)?;

    let tags = if n_p == 0 {
        None
    } else {
        let feats = with_command(tape, up, c)?;
        let logits = ffn(tape, feats, TAGS_FFN)?;
        Some(tape.log_softmax(logits)?)
    };

    let pc = with_command(tape, mean_p, c)?;
    let count_logits = ffn(tape, pc, COUNT_FFN)?;
    let count = tape.log_softmax(count_logits)?;

    let numbers = &ann.passage.numbers;
    let number_values: Vec<f64> = numbers.iter().map(|m| m.arithmetic_value()).collect();
    let signs = if numbers.is_empty() {
        None
    } else {
        let mut rows = Vec::new();
        let mut owners = Vec::new();
        let mut inv = Vec::new();
        for (k, m) in numbers.iter().enumerate() {
            let (a, b) = m.token_span;
            if b >= n_p {
                return Err(Error::Index {
                    what: "number span token",
                    index: b,
                    len: n_p,
                });
            }
            for t in a..=b {
                rows.push(t);
                owners.push(k);
            }
            inv.push(1.0 / (b - a + 1) as f64);
        }
        let picked = tape.gather_rows(up, &rows)?;
        let summed = tape.scatter_add_rows(picked, &owners, numbers.len())?;
        let inv = tape.constant(Tensor::vector(inv))?;
        let pooled = tape.mul_col(summed, inv)?;
        let feats = with_command(tape, pooled, c)?;
        let logits = ffn(tape, feats, SIGN_FFN)?;
        Some(tape.log_softmax(logits)?)
    };

    Ok(HeadOutputs {
        type_logp,
        passage_span,
        question_span,
        tags,
        count,
        signs,
        n_q,
        n_p,
        number_values,
    })
}

/// Flat offsets of every head inside one concatenated log-prob vector.
struct Layout {
    flat: Var,
    pspan: Option<(usize, usize)>,
    qspan: Option<(usize, usize)>,
    tags: Option<usize>,
    count: usize,
    signs: Option<usize>,
}

fn layout(tape: &mut Tape, h: &HeadOutputs) -> Result<Layout> {
    let mut parts = vec![h.type_logp];
    let mut off = 5;
    let mut push = |tape: &mut Tape, v: Var, parts: &mut Vec<Var>| -> Result<usize> {
        let n = tape.value(v).len();
        let flat = tape.reshape(v, &[n])?;
        parts.push(flat);
        let at = off;
        off += n;
        Ok(at)
    };
    let pspan = match h.passage_span {
        Some((s, e)) => Some((push(tape, s, &mut parts)?, push(tape, e, &mut parts)?)),
        None => None,
    };
    let qspan = match h.question_span {
        Some((s, e)) => Some((push(tape, s, &mut parts)?, push(tape, e, &mut parts)?)),
        None => None,
    };
    let tags = h.tags.map(|t| push(tape, t, &mut parts)).transpose()?;
    let count = push(tape, h.count, &mut parts)?;
    let signs = h.signs.map(|t| push(tape, t, &mut parts)).transpose()?;
    let flat = tape.concat(&parts)?;
    Ok(Layout {
        flat,
        pspan,
        qspan,
        tags,
        count,
        signs,
    })
}

fn unavailable(d: &AnswerDerivation) -> Error {
    Error::Unavailable(format!(
        "{} head unavailable for derivation {:?}",
        d.atype.as_str(),
        d.payload
    ))
}

fn derivation_indices(l: &Layout, h: &HeadOutputs, d: &AnswerDerivation) -> Result<Vec<usize>> {
    let mut idx = vec![d.atype.index()];
    let check = |i: usize, n: usize| -> Result<usize> {
        if i < n {
            Ok(i)
        } else {
            Err(Error::Index {
                what: "derivation position",
                index: i,
                len: n,
            })
        }
    };
    match (&d.atype, &d.payload) {
        (AnswerType::PassageSpan, Payload::Span(s, e)) => {
            let (a, b) = l.pspan.ok_or_else(|| unavailable(d))?;
            idx.push(a + check(*s, h.n_p)?);
            idx.push(b + check(*e, h.n_p)?);
        }
        (AnswerType::QuestionSpan, Payload::Span(s, e)) => {
            let (a, b) = l.qspan.ok_or_else(|| unavailable(d))?;
            idx.push(a + check(*s, h.n_q)?);
            idx.push(b + check(*e, h.n_q)?);
        }
        (AnswerType::MultiSpan, Payload::Spans(spans)) => {
            let base = l.tags.ok_or_else(|| unavailable(d))?;
            let tags = spans_to_tags(spans, h.n_p)?;
            idx.extend(tags.iter().enumerate().map(|(i, t)| base + 3 * i + t));
        }
        (AnswerType::Count, Payload::Count(n)) => idx.push(l.count + check(*n as usize, 10)?),
        (AnswerType::Arithmetic, Payload::Expression(expr)) => {
            let base = l.signs.ok_or_else(|| unavailable(d))?;
            if expr.coefficients.len() != h.number_values.len() {
                return Err(Error::InvalidArgument(format!(
                    "expression over {} numbers, passage has {}",
                    expr.coefficients.len(),
                    h.number_values.len()
                )));
            }
            idx.extend(
                expr.coefficients
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| base + 3 * k + (c + 1) as usize),
            );
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "payload {:?} does not fit {}",
                d.payload,
                d.atype.as_str()
            )))
        }
    }
    Ok(idx)
}

/// `log p(T) + log p(A | T)` for each derivation.
pub fn derivation_log_probs(
    tape: &mut Tape,
    h: &HeadOutputs,
    derivations: &[AnswerDerivation],
) -> Result<Vec<Var>> {
    let l = layout(tape, h)?;
    derivations
        .iter()
        .map(|d| {
            let idx = derivation_indices(&l, h, d)?;
            let picked = tape.pick(l.flat, &idx)?;
            tape.sum(picked)
        })
        .collect()
}

/// `-log Σ_d p(T_d) p(d | T_d)` over the valid derivations.
pub fn loss(tape: &mut Tape, h: &HeadOutputs, derivations: &[AnswerDerivation]) -> Result<Var> {
    if derivations.is_empty() {
        return Err(Error::InvalidArgument(
            "no valid derivation for this example".into(),
        ));
    }
    let terms = derivation_log_probs(tape, h, derivations)?;
    let stacked = tape.stack(&terms)?;
    let lse = tape.log_sum_exp(stacked)?;
    tape.scale(lse, -1.0)
}

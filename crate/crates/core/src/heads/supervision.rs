//! Offline search for derivations consistent with a gold answer.

use serde::{Deserialize, Serialize};

use super::{AnswerDerivation, AnswerType, Payload, SignedExpression};
use crate::annotate::{tokenize, AnnotatedPassage, NumberType, TextAnnotation};

/// Default bound on nonzero coefficients in the arithmetic search.
pub const DEFAULT_MAX_TERMS: usize = 3;
/// Absolute tolerance when matching an expression value to a gold number.
pub const MATCH_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldDate {
    pub day: Option<u32>,
    pub month: Option<u32>,
    pub year: Option<i32>,
}

impl GoldDate {
    pub fn is_empty(&self) -> bool {
        self.day.is_none() && self.month.is_none() && self.year.is_none()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GoldAnswer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub number: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spans: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<GoldDate>,
}

/// Coarse answer kind used for per-type metric buckets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoldKind {
    Number,
    Date,
    /// One or more spans.
    Span,
}

impl GoldAnswer {
    pub fn number(n: &str) -> Self {
        Self {
            number: Some(n.to_string()),
            ..Self::default()
        }
    }

    pub fn spans<S: AsRef<str>>(spans: &[S]) -> Self {
        Self {
            spans: spans.iter().map(|s| s.as_ref().to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.number.as_deref().is_none_or(|n| n.trim().is_empty())
            && self.spans.iter().all(|s| s.trim().is_empty())
            && self.date.is_none_or(|d| d.is_empty())
    }

    /// Number first, then spans, then date.
    pub fn kind(&self) -> Option<GoldKind> {
        if self.number.as_deref().is_some_and(|n| !n.trim().is_empty()) {
            Some(GoldKind::Number)
        } else if !self.spans.is_empty() {
            Some(GoldKind::Span)
        } else if self.date.is_some_and(|d| !d.is_empty()) {
            Some(GoldKind::Date)
        } else {
            None
        }
    }

    /// The gold number as `f64` (thousands separators removed).
    pub fn numeric_value(&self) -> Option<f64> {
        let n = self.number.as_deref()?.trim().replace(',', "");
        n.parse::<f64>().ok().filter(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub gold: GoldAnswer,
    pub derivations: Vec<AnswerDerivation>,
}

impl GoldAnnotation {
    pub fn is_answerable(&self) -> bool {
        !self.derivations.is_empty()
    }

    pub fn count_of(&self, t: AnswerType) -> usize {
        self.derivations.iter().filter(|d| d.atype == t).count()
    }
}

fn norm_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .map(|t| t.text.to_lowercase())
        .collect()
}

fn text_tokens(t: &TextAnnotation) -> Vec<String> {
    t.tokens.iter().map(|k| k.text.to_lowercase()).collect()
}

/// Every `(start, end)` where `needle` occurs as a token sequence.
fn occurrences(hay: &[String], needle: &[String]) -> Vec<(usize, usize)> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    (0..=hay.len() - needle.len())
        .filter(|&s| hay[s..s + needle.len()] == *needle)
        .map(|s| (s, s + needle.len() - 1))
        .collect()
}

fn date_matches(mention: &crate::annotate::DateParts, gold: &GoldDate) -> bool {
    let field = |g: Option<i64>, m: Option<i64>| g.is_none_or(|g| m == Some(g));
    !gold.is_empty()
        && field(gold.year.map(i64::from), mention.year.map(i64::from))
        && field(gold.month.map(i64::from), mention.month.map(i64::from))
        && field(gold.day.map(i64::from), mention.day.map(i64::from))
}

/// Date-typed mentions of `text` whose written fields agree with `gold`.
fn date_mention_spans(text: &TextAnnotation, gold: &GoldDate) -> Vec<(usize, usize)> {
    text.numbers
        .iter()
        .filter(|m| m.ntype == NumberType::Date)
        .filter(|m| m.date.as_ref().is_some_and(|d| date_matches(d, gold)))
        .map(|m| m.token_span)
        .collect()
}

fn push_unique(out: &mut Vec<AnswerDerivation>, atype: AnswerType, payload: Payload) {
    if !out.iter().any(|d| d.atype == atype && d.payload == payload) {
        out.push(AnswerDerivation {
            atype,
            payload,
            log_prob: 0.0,
        });
    }
}

/// All `{-1, 0, +1}` assignments with at most `max_terms` nonzero entries
/// whose signed sum is within [`MATCH_TOLERANCE`] of `target`.
pub(crate) fn search_expressions(values: &[f64], target: f64, max_terms: usize) -> Vec<Vec<i8>> {
    fn rec(
        values: &[f64],
        target: f64,
        budget: usize,
        start: usize,
        coeffs: &mut Vec<i8>,
        out: &mut Vec<Vec<i8>>,
    ) {
        let expr = SignedExpression {
            coefficients: coeffs.clone(),
        };
        let v = expr.evaluate(values).expect("same length");
        if (v - target).abs() <= MATCH_TOLERANCE {
            out.push(coeffs.clone());
        }
        if budget == 0 {
            return;
        }
        for k in start..values.len() {
            for sign in [1i8, -1] {
                coeffs[k] = sign;
                rec(values, target, budget - 1, k + 1, coeffs, out);
            }
            coeffs[k] = 0;
        }
    }
    let mut out = Vec::new();
    let mut coeffs = vec![0i8; values.len()];
    rec(values, target, max_terms, 0, &mut coeffs, &mut out);
    out
}

/// Enumerates derivations in every head that reproduce `gold`.
pub fn find_supervision(
    gold: &GoldAnswer,
    ann: &AnnotatedPassage,
    max_terms: usize,
) -> GoldAnnotation {
    let mut out = Vec::new();
    let p_toks = text_tokens(&ann.passage);
    let q_toks = text_tokens(&ann.question);

    let add_text_spans = |out: &mut Vec<AnswerDerivation>, text: &str| {
        let needle = norm_tokens(text);
        for (s, e) in occurrences(&p_toks, &needle) {
            push_unique(out, AnswerType::PassageSpan, Payload::Span(s, e));
        }
        for (s, e) in occurrences(&q_toks, &needle) {
            push_unique(out, AnswerType::QuestionSpan, Payload::Span(s, e));
        }
    };

    let mut targets = Vec::new();
    if let Some(n) = gold.number.as_deref().filter(|n| !n.trim().is_empty()) {
        add_text_spans(&mut out, n);
        if let Some(v) = gold.numeric_value() {
            targets.push(v);
        }
    }
    if let Some(date) = gold.date.filter(|d| !d.is_empty()) {
        for (s, e) in date_mention_spans(&ann.passage, &date) {
            push_unique(&mut out, AnswerType::PassageSpan, Payload::Span(s, e));
        }
        for (s, e) in date_mention_spans(&ann.question, &date) {
            push_unique(&mut out, AnswerType::QuestionSpan, Payload::Span(s, e));
        }
        if let (Some(y), None, None) = (date.year, date.month, date.day) {
            add_text_spans(&mut out, &y.to_string());
            targets.push(f64::from(y));
        }
    }
    let spans: Vec<&String> = gold.spans.iter().filter(|s| !s.trim().is_empty()).collect();
    if spans.len() == 1 {
        add_text_spans(&mut out, spans[0]);
    } else if spans.len() > 1 {
        let mut chosen: Vec<(usize, usize)> = Vec::new();
        let mut complete = true;
        for s in &spans {
            let occ = occurrences(&p_toks, &norm_tokens(s));
            if occ.is_empty() {
                complete = false;
                break;
            }
            for (a, b) in occ {
                if chosen.iter().all(|&(c, d)| b < c || a > d) {
                    chosen.push((a, b));
                }
            }
        }
        if complete {
            chosen.sort();
            push_unique(&mut out, AnswerType::MultiSpan, Payload::Spans(chosen));
        }
    }

    let values: Vec<f64> = ann
        .passage
        .numbers
        .iter()
        .map(|m| m.arithmetic_value())
        .collect();
    for &t in &targets {
        if (0.0..=9.0).contains(&t) && t.fract() == 0.0 {
            push_unique(&mut out, AnswerType::Count, Payload::Count(t as u8));
        }
        if !values.is_empty() {
            for coeffs in search_expressions(&values, t, max_terms) {
                push_unique(
                    &mut out,
                    AnswerType::Arithmetic,
                    Payload::Expression(SignedExpression {
                        coefficients: coeffs,
                    }),
                );
            }
        }
    }

    GoldAnnotation {
        gold: gold.clone(),
        derivations: out,
    }
}

/// Re-evaluates a derivation independently of the search and reports
/// whether it reproduces the gold answer.
pub fn check_derivation(d: &AnswerDerivation, gold: &GoldAnswer, ann: &AnnotatedPassage) -> bool {
    let span_ok = |text: &TextAnnotation, s: usize, e: usize| -> bool {
        if s > e || e >= text.tokens.len() {
            return false;
        }
        let got: Vec<String> = text.tokens[s..=e]
            .iter()
            .map(|t| t.text.to_lowercase())
            .collect();
        let mut wanted: Vec<String> = Vec::new();
        wanted.extend(gold.number.iter().cloned());
        if gold.spans.len() == 1 {
            wanted.push(gold.spans[0].clone());
        }
        if let Some(GoldDate {
            year: Some(y),
            month: None,
            day: None,
        }) = gold.date
        {
            wanted.push(y.to_string());
        }
        let by_text = wanted.iter().any(|w| norm_tokens(w) == got);
        let by_date = gold.date.is_some_and(|g| {
            text.numbers.iter().any(|m| {
                m.token_span == (s, e) && m.date.as_ref().is_some_and(|p| date_matches(p, &g))
            })
        });
        by_text || by_date
    };
    let target = gold.numeric_value().or_else(|| match gold.date {
        Some(GoldDate {
            year: Some(y),
            month: None,
            day: None,
        }) => Some(f64::from(y)),
        _ => None,
    });
    match (&d.atype, &d.payload) {
        (AnswerType::PassageSpan, Payload::Span(s, e)) => span_ok(&ann.passage, *s, *e),
        (AnswerType::QuestionSpan, Payload::Span(s, e)) => span_ok(&ann.question, *s, *e),
        (AnswerType::MultiSpan, Payload::Spans(v)) => {
            let mut got: Vec<Vec<String>> = Vec::new();
            for &(s, e) in v {
                if s > e || e >= ann.passage.tokens.len() {
                    return false;
                }
                let toks = ann.passage.tokens[s..=e]
                    .iter()
                    .map(|t| t.text.to_lowercase())
                    .collect();
                if !got.contains(&toks) {
                    got.push(toks);
                }
            }
            let mut want: Vec<Vec<String>> = Vec::new();
            for s in &gold.spans {
                let t = norm_tokens(s);
                if !want.contains(&t) {
                    want.push(t);
                }
            }
            got.sort();
            want.sort();
            gold.spans.len() > 1 && got == want
        }
        (AnswerType::Count, Payload::Count(n)) => target == Some(f64::from(*n)),
        (AnswerType::Arithmetic, Payload::Expression(expr)) => {
            let values: Vec<f64> = ann
                .passage
                .numbers
                .iter()
                .map(|m| m.arithmetic_value())
                .collect();
            match (expr.evaluate(&values), target) {
                (Ok(v), Some(t)) => (v - t).abs() <= MATCH_TOLERANCE,
                _ => false,
            }
        }
        _ => false,
    }
}

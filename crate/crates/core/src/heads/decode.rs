use serde::{Deserialize, Serialize};

use super::{tags_to_spans, AnswerDerivation, AnswerType, HeadOutputs, Payload, SignedExpression};
use crate::annotate::{AnnotatedPassage, TextAnnotation};
use crate::diffcore::Tape;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerValue {
    Text(String),
    Spans(Vec<String>),
}

impl AnswerValue {
    /// Answer strings as a bag (one element for a single answer).
    pub fn as_bag(&self) -> Vec<String> {
        match self {
            AnswerValue::Text(s) => vec![s.clone()],
            AnswerValue::Spans(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub derivation: AnswerDerivation,
    pub answer: AnswerValue,
}

/// Shortest decimal rendering with at most six fractional digits.
pub fn canonical_number(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" || s.is_empty() {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Token text for an inclusive span, re-inserting a space only where the
/// original text had a gap.
pub fn render_span(text: &TextAnnotation, (s, e): (usize, usize)) -> String {
    let mut out = String::new();
    for (k, t) in text.tokens[s..=e].iter().enumerate() {
        if k > 0 && t.char_start > text.tokens[s + k - 1].char_end {
            out.push(' ');
        }
        out.push_str(&t.text);
    }
    out
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Best `start <= end` pair; ties go to the earlier start, then the
/// shorter span.
fn best_span(start: &[f64], end: &[f64]) -> ((usize, usize), f64) {
    let mut best = ((0, 0), f64::NEG_INFINITY);
    for (s, &a) in start.iter().enumerate() {
        for (e, &b) in end.iter().enumerate().skip(s) {
            let score = a + b;
            if score > best.1 {
                best = ((s, e), score);
            }
        }
    }
    best
}

fn decode_head(
    tape: &Tape,
    h: &HeadOutputs,
    ann: &AnnotatedPassage,
    t: AnswerType,
) -> Option<(Payload, f64, AnswerValue)> {
    match t {
        AnswerType::PassageSpan | AnswerType::QuestionSpan => {
            let ((s, e), text) = if t == AnswerType::PassageSpan {
                (h.passage_span?, &ann.passage)
            } else {
                (h.question_span?, &ann.question)
            };
            let (span, lp) = best_span(tape.value(s), tape.value(e));
            let answer = AnswerValue::Text(render_span(text, span));
            Some((Payload::Span(span.0, span.1), lp, answer))
        }
        AnswerType::MultiSpan => {
            let v = tape.value(h.tags?);
            let mut lp = 0.0;
            let tags: Vec<usize> = v
                .chunks(3)
                .map(|row| {
                    let k = argmax(row);
                    lp += row[k];
                    k
                })
                .collect();
            let spans = tags_to_spans(&tags);
            let mut strings: Vec<String> = Vec::new();
            for &sp in &spans {
                let s = render_span(&ann.passage, sp);
                if !strings.contains(&s) {
                    strings.push(s);
                }
            }
            Some((Payload::Spans(spans), lp, AnswerValue::Spans(strings)))
        }
        AnswerType::Count => {
            let v = tape.value(h.count);
            let k = argmax(v);
            Some((
                Payload::Count(k as u8),
                v[k],
                AnswerValue::Text(k.to_string()),
            ))
        }
        AnswerType::Arithmetic => {
            let v = tape.value(h.signs?);
            let mut lp = 0.0;
            let coefficients: Vec<i8> = v
                .chunks(3)
                .map(|row| {
                    let k = argmax(row);
                    lp += row[k];
                    k as i8 - 1
                })
                .collect();
            let expr = SignedExpression { coefficients };
            let value = expr.evaluate(&h.number_values).ok()?;
            Some((
                Payload::Expression(expr),
                lp,
                AnswerValue::Text(canonical_number(value)),
            ))
        }
    }
}

/// Picks the most probable answer type whose head is available and returns
/// that head's argmax answer.
pub fn decode(tape: &Tape, h: &HeadOutputs, ann: &AnnotatedPassage) -> Result<Prediction> {
    let type_lp = tape.value(h.type_logp);
    let mut order: Vec<AnswerType> = AnswerType::ALL.to_vec();
    order.sort_by(|a, b| {
        type_lp[b.index()]
            .partial_cmp(&type_lp[a.index()])
            .expect("finite log-probs")
            .then(a.index().cmp(&b.index()))
    });
    for t in order {
        if !h.available(t) {
            continue;
        }
        if let Some((payload, lp, answer)) = decode_head(tape, h, ann, t) {
            return Ok(Prediction {
                derivation: AnswerDerivation {
                    atype: t,
                    payload,
                    log_prob: type_lp[t.index()] + lp,
                },
                answer,
            });
        }
    }
    Err(Error::Unavailable("no answer head is available".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::annotate;
    use crate::diffcore::{ParamStore, Tensor};

    #[test]
    fn canonical_numbers() {
        assert_eq!(canonical_number(94.0), "94");
        assert_eq!(canonical_number(1.3000000000000007), "1.3");
        assert_eq!(canonical_number(-2.5), "-2.5");
        assert_eq!(canonical_number(-0.0), "0");
        assert_eq!(canonical_number(1e-9), "0");
    }

    #[test]
    fn span_decode_never_inverts() {
        let ((s, e), _) = best_span(&[-5.0, 0.0, -1.0], &[0.0, -3.0, -9.0]);
        assert!(s <= e);
        assert_eq!((s, e), (1, 1));
    }

    #[test]
    fn tie_prefers_earlier_then_shorter() {
        let ((s, e), _) = best_span(&[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!((s, e), (0, 0));
    }

    #[test]
    fn render_keeps_hyphenated_tokens_together() {
        let (ann, _) = annotate("q", "a 49-yard field goal");
        assert_eq!(render_span(&ann.passage, (1, 4)), "49-yard field");
    }

    #[test]
    fn oracle_logits_decode_worked_addition() {
        let (ann, _) = annotate(
            "How many yards?",
            "Kasay kicked a 45-yard field goal, then a 49-yard field goal in 2 minutes.",
        );
        let values: Vec<f64> = ann.passage.numbers.iter().map(|m| m.value).collect();
        assert_eq!(values, vec![45.0, 49.0, 2.0]);
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let lp = |hot: usize, n: usize| {
            let mut v = vec![-20.0; n];
            v[hot] = 0.0;
            v
        };
        let signs: Vec<f64> = [2, 2, 1].iter().flat_map(|&k| lp(k, 3)).collect();
        let h = HeadOutputs {
            type_logp: tape.constant(Tensor::vector(lp(4, 5))).unwrap(),
            passage_span: None,
            question_span: None,
            tags: None,
            count: tape.constant(Tensor::vector(lp(0, 10))).unwrap(),
            signs: Some(tape.constant(Tensor::matrix(3, 3, signs).unwrap()).unwrap()),
            n_q: ann.question.tokens.len(),
            n_p: ann.passage.tokens.len(),
            number_values: ann
                .passage
                .numbers
                .iter()
                .map(|m| m.arithmetic_value())
                .collect(),
        };
        let p = decode(&tape, &h, &ann).unwrap();
        assert_eq!(p.answer, AnswerValue::Text("94".into()));
        assert_eq!(p.derivation.atype, AnswerType::Arithmetic);
    }

    #[test]
    fn unavailable_head_falls_back() {
        let (ann, _) = annotate("How many?", "No digits here.");
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let mut types = vec![-10.0; 5];
        types[AnswerType::Arithmetic.index()] = -0.1;
        types[AnswerType::Count.index()] = -3.0;
        let mut count = vec![-10.0; 10];
        count[4] = -0.01;
        let h = HeadOutputs {
            type_logp: tape.constant(Tensor::vector(types)).unwrap(),
            passage_span: None,
            question_span: None,
            tags: None,
            count: tape.constant(Tensor::vector(count)).unwrap(),
            signs: None,
            n_q: 2,
            n_p: 3,
            number_values: vec![],
        };
        let p = decode(&tape, &h, &ann).unwrap();
        assert_eq!(p.derivation.atype, AnswerType::Count);
        assert_eq!(p.answer, AnswerValue::Text("4".into()));
    }
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    AnnotatedPassage, DateParts, EntityMention, NumberMention, NumberType, TextAnnotation, Token,
};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireToken {
    text: String,
    start: usize,
    end: usize,
    sent: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireNumber {
    span: [usize; 2],
    value: f64,
    #[serde(rename = "type")]
    ntype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    date: Option<DateParts>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireEntity {
    span: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct WireText {
    tokens: Vec<WireToken>,
    #[serde(default)]
    numbers: Vec<WireNumber>,
    #[serde(default)]
    entities: Vec<WireEntity>,
}

#[derive(Serialize, Deserialize)]
struct WireFile {
    question: WireText,
    passage: WireText,
}

fn to_wire(t: &TextAnnotation) -> WireText {
    WireText {
        tokens: t
            .tokens
            .iter()
            .map(|k| WireToken {
                text: k.text.clone(),
                start: k.char_start,
                end: k.char_end,
                sent: k.sentence_id,
            })
            .collect(),
        numbers: t
            .numbers
            .iter()
            .map(|m| WireNumber {
                span: [m.token_span.0, m.token_span.1],
                value: m.value,
                ntype: m.ntype.as_str().to_string(),
                date: m.date,
            })
            .collect(),
        entities: t
            .entities
            .iter()
            .map(|e| WireEntity {
                span: [e.token_span.0, e.token_span.1],
            })
            .collect(),
    }
}

fn from_wire(which: &str, w: WireText) -> Result<TextAnnotation> {
    let numbers = w
        .numbers
        .into_iter()
        .enumerate()
        .map(|(k, n)| {
            let ntype = NumberType::parse(&n.ntype).ok_or_else(|| Error::AnnotationParse {
                field: format!("{which}.numbers[{k}].type"),
                message: format!("unknown number type `{}`", n.ntype),
            })?;
            Ok(NumberMention {
                token_span: (n.span[0], n.span[1]),
                value: n.value,
                ntype,
                date: n.date,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TextAnnotation {
        tokens: w
            .tokens
            .into_iter()
            .map(|t| Token {
                text: t.text,
                char_start: t.start,
                char_end: t.end,
                sentence_id: t.sent,
            })
            .collect(),
        numbers,
        entities: w
            .entities
            .into_iter()
            .map(|e| EntityMention {
                token_span: (e.span[0], e.span[1]),
            })
            .collect(),
    })
}

pub(super) fn validate_text(which: &str, t: &TextAnnotation) -> Result<()> {
    let n = t.tokens.len();
    for (k, tok) in t.tokens.iter().enumerate() {
        if tok.char_start >= tok.char_end {
            return Err(Error::Validation(format!(
                "{which}.tokens[{k}] has empty char range {}..{}",
                tok.char_start, tok.char_end
            )));
        }
        if k > 0 {
            let prev = &t.tokens[k - 1];
            if tok.char_start < prev.char_end {
                return Err(Error::Validation(format!(
                    "{which}.tokens[{k}] overlaps or precedes tokens[{}]",
                    k - 1
                )));
            }
            if tok.sentence_id < prev.sentence_id {
                return Err(Error::Validation(format!(
                    "{which}.tokens[{k}] sentence id decreases"
                )));
            }
        }
    }
    let check_span = |kind: &str, k: usize, (a, b): (usize, usize)| -> Result<()> {
        if a > b || b >= n {
            return Err(Error::Validation(format!(
                "{which}.{kind}[{k}] span [{a}, {b}] is invalid for {n} tokens"
            )));
        }
        Ok(())
    };
    let check_disjoint = |kind: &str, spans: &[(usize, usize)]| -> Result<()> {
        let mut sorted: Vec<_> = spans.iter().copied().enumerate().collect();
        sorted.sort_by_key(|(_, s)| *s);
        for w in sorted.windows(2) {
            let ((ka, a), (kb, b)) = (w[0], w[1]);
            if b.0 <= a.1 {
                return Err(Error::Validation(format!(
                    "{which}.{kind}[{kb}] span [{}, {}] overlaps {kind}[{ka}] span [{}, {}]",
                    b.0, b.1, a.0, a.1
                )));
            }
        }
        Ok(())
    };

    for (k, m) in t.numbers.iter().enumerate() {
        check_span("numbers", k, m.token_span)?;
        if !m.value.is_finite() {
            return Err(Error::Validation(format!(
                "{which}.numbers[{k}] has non-finite value"
            )));
        }
        let (a, b) = m.token_span;
        if t.tokens[a].sentence_id != t.tokens[b].sentence_id {
            return Err(Error::Validation(format!(
                "{which}.numbers[{k}] span [{a}, {b}] crosses a sentence boundary"
            )));
        }
    }
    for (k, e) in t.entities.iter().enumerate() {
        check_span("entities", k, e.token_span)?;
    }
    let nspans: Vec<_> = t.numbers.iter().map(|m| m.token_span).collect();
    check_disjoint("numbers", &nspans)?;
    let espans: Vec<_> = t.entities.iter().map(|e| e.token_span).collect();
    check_disjoint("entities", &espans)
}

pub fn to_json_string(ann: &AnnotatedPassage) -> Result<String> {
    let file = WireFile {
        question: to_wire(&ann.question),
        passage: to_wire(&ann.passage),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Parses and validates an annotation document.
pub fn parse_annotations(text: &str) -> Result<AnnotatedPassage> {
    let file: WireFile = serde_json::from_str(text).map_err(|e| Error::AnnotationParse {
        field: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let ann = AnnotatedPassage {
        question: from_wire("question", file.question)?,
        passage: from_wire("passage", file.passage)?,
    };
    ann.validate()?;
    Ok(ann)
}

pub fn load_annotations(path: &Path) -> Result<AnnotatedPassage> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

pub fn save_annotations(ann: &AnnotatedPassage, path: &Path) -> Result<()> {
    let text = to_json_string(ann)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "question": {"tokens": [{"text": "How", "start": 0, "end": 3, "sent": 0}]},
        "passage": {"tokens": [{"text": "Yes", "start": 0, "end": 3, "sent": 0}],
                    "numbers": [], "entities": []}
    }"#;

    #[test]
    fn minimal_file() {
        let ann = parse_annotations(MINIMAL).unwrap();
        assert_eq!(ann.passage.tokens.len(), 1);
        assert!(ann.passage.numbers.is_empty());
        assert!(ann.question.entities.is_empty());
    }

    #[test]
    fn overlapping_numbers_rejected() {
        let text = r#"{
            "question": {"tokens": []},
            "passage": {
                "tokens": [
                    {"text": "3", "start": 0, "end": 1, "sent": 0},
                    {"text": "4", "start": 2, "end": 3, "sent": 0}
                ],
                "numbers": [
                    {"span": [0, 1], "value": 34, "type": "NUMBER"},
                    {"span": [1, 1], "value": 4, "type": "NUMBER"}
                ]
            }
        }"#;
        let err = parse_annotations(text).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref m) if m.contains("[1, 1]")),
            "{err}"
        );
    }

    #[test]
    fn malformed_reports_location() {
        let err = parse_annotations("{\n \"question\": {\"tokens\": [}\n}").unwrap_err();
        match err {
            Error::AnnotationParse { field, .. } => assert!(field.starts_with("line 2")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_type_rejected() {
        let text = r#"{
            "question": {"tokens": []},
            "passage": {"tokens": [{"text": "3", "start": 0, "end": 1, "sent": 0}],
                        "numbers": [{"span": [0, 0], "value": 3, "type": "AGE"}]}
        }"#;
        let err = parse_annotations(text).unwrap_err();
        assert!(
            matches!(err, Error::AnnotationParse { ref field, .. } if field == "passage.numbers[0].type")
        );
    }

    #[test]
    fn span_out_of_range_rejected() {
        let text = r#"{
            "question": {"tokens": []},
            "passage": {"tokens": [{"text": "A", "start": 0, "end": 1, "sent": 0}],
                        "entities": [{"span": [0, 3]}]}
        }"#;
        assert!(matches!(parse_annotations(text), Err(Error::Validation(_))));
    }
}

//! DROP-layout ingestion and the synthetic task generator.

mod synthetic;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub use synthetic::{
    generate_synthetic, render_addition, render_count, SyntheticSpec, TaskKind, TaskWeights,
};

use crate::error::{Error, Result};
use crate::heads::{GoldAnswer, GoldDate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropExample {
    pub passage_id: String,
    pub passage: String,
    pub query_id: String,
    pub question: String,
    pub gold: GoldAnswer,
    /// Additional acceptable answers; scoring takes the best match.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validated: Vec<GoldAnswer>,
}

impl DropExample {
    pub fn golds(&self) -> impl Iterator<Item = &GoldAnswer> {
        std::iter::once(&self.gold).chain(&self.validated)
    }
}

/// Counters kept while reading a DROP file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub passages: usize,
    pub examples: usize,
    pub skipped_malformed_passages: usize,
    pub skipped_malformed_pairs: usize,
    pub skipped_no_answer: usize,
}

const MONTHS: [&str; 12] = [
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];

pub fn month_number(s: &str) -> Option<u32> {
    let s = s.trim().trim_end_matches('.').to_lowercase();
    if let Ok(n) = s.parse::<u32>() {
        return (1..=12).contains(&n).then_some(n);
    }
    if s.len() < 3 {
        return None;
    }
    MONTHS
        .iter()
        .position(|m| m.starts_with(&s))
        .map(|i| i as u32 + 1)
}

fn field_str(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// `None` if the object is structurally wrong; an empty answer is
/// returned as such and filtered by the caller.
fn parse_answer(v: &Value) -> Option<GoldAnswer> {
    let obj = v.as_object()?;
    let number = obj.get("number").and_then(field_str);
    let spans = match obj.get("spans") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(a)) => a
            .iter()
            .map(|s| s.as_str().map(|s| s.trim().to_string()))
            .collect::<Option<Vec<_>>>()?
            .into_iter()
            .filter(|s| !s.is_empty())
            .collect(),
        Some(_) => return None,
    };
    let date = match obj.get("date") {
        None | Some(Value::Null) => None,
        Some(Value::Object(d)) => {
            let get = |k: &str| d.get(k).and_then(field_str);
            let parsed = GoldDate {
                day: get("day").and_then(|s| s.parse().ok()),
                month: get("month").and_then(|s| month_number(&s)),
                year: get("year").and_then(|s| s.parse().ok()),
            };
            (!parsed.is_empty()).then_some(parsed)
        }
        Some(_) => return None,
    };
    Some(GoldAnswer {
        number,
        spans,
        date,
    })
}

/// Lazily converts the passages of a parsed DROP file into examples.
pub struct DropStream {
    passages: std::collections::btree_map::IntoIter<String, Value>,
    pending: std::vec::IntoIter<DropExample>,
    stats: LoadStats,
}

impl DropStream {
    pub fn stats(&self) -> &LoadStats {
        &self.stats
    }

    fn expand(&mut self, passage_id: String, v: Value) -> Vec<DropExample> {
        self.stats.passages += 1;
        let (Some(passage), Some(pairs)) = (
            v.get("passage").and_then(Value::as_str),
            v.get("qa_pairs").and_then(Value::as_array),
        ) else {
            self.stats.skipped_malformed_passages += 1;
            return Vec::new();
        };
        let mut out = Vec::new();
        for qa in pairs {
            let question = qa.get("question").and_then(Value::as_str);
            let query_id = qa.get("query_id").and_then(Value::as_str);
            let gold = qa.get("answer").and_then(parse_answer);
            let (Some(question), Some(query_id), Some(gold)) = (question, query_id, gold) else {
                self.stats.skipped_malformed_pairs += 1;
                continue;
            };
            if gold.is_empty() || question.trim().is_empty() {
                self.stats.skipped_no_answer += 1;
                continue;
            }
            let validated = qa
                .get("validated_answers")
                .and_then(Value::as_array)
                .map(|a| {
                    a.iter()
                        .filter_map(parse_answer)
                        .filter(|g| !g.is_empty())
                        .collect()
                })
                .unwrap_or_default();
            out.push(DropExample {
                passage_id: passage_id.clone(),
                passage: passage.to_string(),
                query_id: query_id.to_string(),
                question: question.to_string(),
                gold,
                validated,
            });
        }
        self.stats.examples += out.len();
        out
    }
}

impl Iterator for DropStream {
    type Item = DropExample;

    fn next(&mut self) -> Option<DropExample> {
        loop {
            if let Some(ex) = self.pending.next() {
                return Some(ex);
            }
            let (id, v) = self.passages.next()?;
            self.pending = self.expand(id, v).into_iter();
        }
    }
}

/// Parses DROP-layout JSON text; passages are visited in id order.
pub fn parse_drop(text: &str) -> Result<DropStream> {
    let map: BTreeMap<String, Value> = serde_json::from_str(text)?;
    Ok(DropStream {
        passages: map.into_iter(),
        pending: Vec::new().into_iter(),
        stats: LoadStats::default(),
    })
}

pub fn load_drop(path: &Path) -> Result<DropStream> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_drop(&text)
}

fn answer_json(g: &GoldAnswer) -> Value {
    let d = g.date.unwrap_or_default();
    let opt = |v: Option<String>| v.unwrap_or_default();
    json!({
        "number": g.number.clone().unwrap_or_default(),
        "date": {
            "day": opt(d.day.map(|x| x.to_string())),
            "month": opt(d.month.map(|x| x.to_string())),
            "year": opt(d.year.map(|x| x.to_string())),
        },
        "spans": g.spans,
    })
}

/// Groups examples by passage into the DROP layout.
pub fn to_drop_json(examples: &[DropExample]) -> Value {
    let mut root = Map::new();
    for ex in examples {
        let entry = root
            .entry(ex.passage_id.clone())
            .or_insert_with(|| json!({"passage": ex.passage, "qa_pairs": []}));
        let mut qa = json!({
            "question": ex.question,
            "query_id": ex.query_id,
            "answer": answer_json(&ex.gold),
        });
        if !ex.validated.is_empty() {
            qa["validated_answers"] = Value::Array(ex.validated.iter().map(answer_json).collect());
        }
        entry["qa_pairs"]
            .as_array_mut()
            .expect("qa_pairs is an array")
            .push(qa);
    }
    Value::Object(root)
}

pub fn save_drop(examples: &[DropExample], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&to_drop_json(examples))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
      "p1": {"passage": "Some text.", "qa_pairs": [
          {"question": "How many?", "query_id": "a", "answer": {"number": "34", "date": {"day": "", "month": "", "year": ""}, "spans": []}},
          {"question": "Who?", "query_id": "b", "answer": {"number": "", "date": {"day": "", "month": "", "year": ""}, "spans": []}},
          {"question": "When?", "query_id": "c", "answer": {"number": "", "date": {"day": "7", "month": "February", "year": "1756"}, "spans": []}},
          {"query_id": "d", "answer": {"number": "1"}}
      ]},
      "p2": {"passage": "Empty.", "qa_pairs": []},
      "p3": {"qa_pairs": []}
    }"#;

    #[test]
    fn loads_and_counts_skips() {
        let mut s = parse_drop(SAMPLE).unwrap();
        let all: Vec<_> = s.by_ref().collect();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].gold.number.as_deref(), Some("34"));
        assert_eq!(
            all[1].gold.date,
            Some(GoldDate {
                day: Some(7),
                month: Some(2),
                year: Some(1756)
            })
        );
        let st = s.stats();
        assert_eq!(st.passages, 3);
        assert_eq!(st.skipped_no_answer, 1);
        assert_eq!(st.skipped_malformed_pairs, 1);
        assert_eq!(st.skipped_malformed_passages, 1);
        for ex in &all {
            assert!(!ex.gold.is_empty());
        }
    }

    #[test]
    fn unreadable_file_is_an_error() {
        assert!(load_drop(Path::new("/nonexistent/drop.json")).is_err());
    }

    #[test]
    fn month_names() {
        assert_eq!(month_number("February"), Some(2));
        assert_eq!(month_number("sept."), Some(9));
        assert_eq!(month_number("12"), Some(12));
        assert_eq!(month_number("13"), None);
        assert_eq!(month_number("ma"), None);
    }

    #[test]
    fn round_trip_through_drop_layout() {
        let exs: Vec<DropExample> = parse_drop(SAMPLE).unwrap().collect();
        let text = serde_json::to_string(&to_drop_json(&exs)).unwrap();
        let back: Vec<DropExample> = parse_drop(&text).unwrap().collect();
        assert_eq!(back, exs);
    }
}

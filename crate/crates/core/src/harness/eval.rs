use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::metrics::{score_against, Score};
use super::thread_pool;
use crate::annotate::annotate;
use crate::data::DropExample;
use crate::error::{Error, Result};
use crate::heads::{AnswerType, AnswerValue, GoldKind};
use crate::model::{predict, Model, PreparedExample};
use crate::qdgat::AttentionRecord;

/// Header text stored in every predictions file.
pub const METRIC_NOTES: &str = "Numbers are compared after canonical decimal formatting. \
Multi-span F1 aligns predicted and gold spans one-to-one to maximize the summed per-pair F1 S, \
then reports the harmonic mean of S/|pred| and S/|gold|; the public DROP script instead averages \
the aligned scores over max(|pred|, |gold|). EM compares the sorted lists of normalized strings. \
Gold dates are rendered as 'day Month year' over the present fields.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub answer: AnswerValue,
    pub answer_type: AnswerType,
    pub log_prob: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeScores {
    pub em: f64,
    pub f1: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub em: f64,
    pub f1: f64,
    pub per_type: BTreeMap<GoldKind, TypeScores>,
    pub n_examples: usize,
    pub n_skipped: usize,
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub predictions: Vec<PredictionRecord>,
    pub attention: Vec<(String, AttentionRecord)>,
}

/// Prediction with its attention trace.
pub type Predicted = (PredictionRecord, AttentionRecord);

/// Predictions for every example the model can take as input; the rest
/// are returned by query id.
pub fn predict_all(model: &Model, data: &[DropExample]) -> Result<(Vec<Predicted>, Vec<String>)> {
    let pool = thread_pool()?;
    let results: Vec<Result<Option<Predicted>>> = pool.install(|| {
        data.par_iter()
            .map(|ex| {
                let (ann, _) = annotate(&ex.question, &ex.passage);
                let Ok(prepared) =
                    PreparedExample::new(&model.config, ex.query_id.clone(), ann, None)
                else {
                    return Ok(None);
                };
                let (pred, att) = predict(model, &prepared)?;
                Ok(Some((
                    PredictionRecord {
                        query_id: ex.query_id.clone(),
                        answer: pred.answer,
                        answer_type: pred.derivation.atype,
                        log_prob: pred.derivation.log_prob,
                    },
                    att,
                )))
            })
            .collect()
    });
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (ex, r) in data.iter().zip(results) {
        match r? {
            Some(p) => out.push(p),
            None => skipped.push(ex.query_id.clone()),
        }
    }
    Ok((out, skipped))
}

/// Scores predictions against every example in `data`. The result does
/// not depend on example order.
pub fn score_predictions(data: &[DropExample], preds: &[PredictionRecord]) -> Result<EvalReport> {
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::new();
    for p in preds {
        if by_id.insert(p.query_id.as_str(), p).is_some() {
            return Err(Error::Validation(format!(
                "duplicate prediction for {}",
                p.query_id
            )));
        }
    }
    let mut scored: Vec<(&str, Option<GoldKind>, Score)> = Vec::with_capacity(data.len());
    for ex in data {
        let p = by_id
            .get(ex.query_id.as_str())
            .ok_or_else(|| Error::Validation(format!("missing prediction for {}", ex.query_id)))?;
        let s = score_against(&p.answer.as_bag(), ex.golds());
        scored.push((ex.query_id.as_str(), ex.gold.kind(), s));
    }
    scored.sort_by(|a, b| {
        a.0.cmp(b.0)
            .then(a.2.em.total_cmp(&b.2.em))
            .then(a.2.f1.total_cmp(&b.2.f1))
    });
    let mut report = EvalReport {
        n_examples: scored.len(),
        ..EvalReport::default()
    };
    for (_, kind, s) in &scored {
        report.em += s.em;
        report.f1 += s.f1;
        if let Some(k) = kind {
            let t = report.per_type.entry(*k).or_default();
            t.em += s.em;
            t.f1 += s.f1;
            t.n += 1;
        }
    }
    if !scored.is_empty() {
        report.em /= scored.len() as f64;
        report.f1 /= scored.len() as f64;
    }
    for t in report.per_type.values_mut() {
        t.em /= t.n as f64;
        t.f1 /= t.n as f64;
    }
    Ok(report)
}

/// Predicts and scores `data`; examples the model cannot read are counted
/// in `n_skipped` and left out of the averages.
pub fn evaluate(model: &Model, data: &[DropExample]) -> Result<EvalOutput> {
    let (pairs, skipped) = predict_all(model, data)?;
    let kept: Vec<DropExample> = data
        .iter()
        .filter(|ex| !skipped.contains(&ex.query_id))
        .cloned()
        .collect();
    let (predictions, attention): (Vec<_>, Vec<_>) = pairs
        .into_iter()
        .map(|(p, a)| {
            let id = p.query_id.clone();
            (p, (id, a))
        })
        .unzip();
    let mut report = score_predictions(&kept, &predictions)?;
    report.n_skipped = skipped.len();
    Ok(EvalOutput {
        report,
        predictions,
        attention,
    })
}

/// JSON lines: a header object, then one record per prediction.
pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let header = json!({"header": {"format": "numgraph-predictions", "version": 1, "metric_notes": METRIC_NOTES}});
    let mut write_line = |v: String| writeln!(w, "{v}").map_err(|e| Error::io(path, e));
    write_line(header.to_string())?;
    for p in preds {
        write_line(serde_json::to_string(p)?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)?;
        if v.get("header").is_some() {
            continue;
        }
        out.push(serde_json::from_value(v)?);
    }
    Ok(out)
}

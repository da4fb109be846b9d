use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalReport};
use super::train::{prepare_dataset, train_prepared, Checkpointing, EpochControl};
use super::RunConfig;
use crate::data::DropExample;
use crate::error::Result;
use crate::heads::GoldKind;
use crate::model::Ablation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: Ablation,
    pub report: EvalReport,
    pub loss_curve: Vec<f64>,
    /// Entity nodes summed over the evaluation graphs.
    pub entity_nodes: usize,
    /// Largest number of distinct relations in any evaluation graph.
    pub max_relations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Markdown table with overall and per-kind EM/F1.
    pub fn render(&self) -> String {
        let kinds = [GoldKind::Number, GoldKind::Date, GoldKind::Span];
        let mut s = String::from("| Model | EM | F1 | Number EM | Date EM | Span EM |\n");
        s.push_str("|---|---|---|---|---|---|\n");
        for row in &self.rows {
            let name = match row.mode {
                Ablation::Full => "QDGAT".to_string(),
                m => format!("QDGAT_{}", m.as_str()),
            };
            let _ = write!(s, "| {name} | {:.2} | {:.2}", row.report.em, row.report.f1);
            for k in kinds {
                match row.report.per_type.get(&k) {
                    Some(t) => {
                        let _ = write!(s, " | {:.2}", t.em);
                    }
                    None => s.push_str(" | -"),
                }
            }
            s.push_str(" |\n");
        }
        s
    }
}

/// Trains and evaluates the full, NH and NQ variants with the same seed.
pub fn ablate(
    config: &RunConfig,
    train_data: &[DropExample],
    eval_data: &[DropExample],
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for mode in Ablation::ALL {
        let cfg = config.with_ablation(mode);
        let prepared = prepare_dataset(&cfg, train_data)?;
        let out = train_prepared(&cfg, &prepared, &Checkpointing::Off, |_, _, _| {
            Ok(EpochControl::Continue)
        })?;
        let report = evaluate(&out.model, eval_data)?.report;
        let eval_prepared = prepare_dataset(&cfg, eval_data)?;
        let stats: Vec<_> = eval_prepared
            .examples
            .iter()
            .map(|e| e.graph.stats())
            .collect();
        log::info!("{}: EM {:.2} F1 {:.2}", mode.as_str(), report.em, report.f1);
        rows.push(AblationRow {
            mode,
            report,
            loss_curve: out.loss_curve,
            entity_nodes: stats.iter().map(|s| s.n_entity_nodes).sum(),
            max_relations: stats.iter().map(|s| s.relations_used).max().unwrap_or(0),
        });
    }
    Ok(AblationTable { rows })
}

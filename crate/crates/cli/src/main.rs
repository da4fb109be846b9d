use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use numgraph::annotate::{annotate, load_annotations, to_json_string};
use numgraph::data::{generate_synthetic, load_drop, save_drop, DropExample, SyntheticSpec};
use numgraph::graph::{build_graph_with, GraphMode};
use numgraph::harness::{
    ablate, evaluate, train, write_predictions, Checkpointing, RunCheckpoint, RunConfig,
};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(
    name = "numgraph",
    version,
    about = "Question-directed graph attention for numerical reading comprehension"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Heterogeneous,
    Homogeneous,
}

#[derive(Subcommand)]
enum Command {
    /// Annotate plain text or every question of a DROP file.
    Annotate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Question paired with plain-text input.
        #[arg(long, default_value = "")]
        question: String,
        /// Print annotation warnings to stderr.
        #[arg(long)]
        warnings: bool,
    },
    /// Build the reasoning graph of an annotation file.
    BuildGraph {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "heterogeneous")]
        mode: ModeArg,
    },
    /// Write templated numerical-reasoning examples in DROP layout.
    GenSynthetic {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Directory for per-epoch checkpoints.
        #[arg(long, default_value = "checkpoints")]
        out_dir: PathBuf,
    },
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        preds: Option<PathBuf>,
        /// Per-iteration attention weights for every example.
        #[arg(long)]
        dump_attention: Option<PathBuf>,
    },
    /// Train and evaluate the full, NH and NQ variants.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Training data; synthetic examples are generated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Evaluation data; defaults to the training data.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn load_examples(path: &Path) -> Result<Vec<DropExample>> {
    let mut stream = load_drop(path).with_context(|| format!("loading {}", path.display()))?;
    let examples: Vec<DropExample> = stream.by_ref().collect();
    log::info!("{}: {:?}", path.display(), stream.stats());
    Ok(examples)
}

fn write_json(path: &Path, v: Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(&v)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_annotate(input: &Path, out: &Path, question: &str, warnings: bool) -> Result<()> {
    let text =
        std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let report = |id: &str, ws: &[numgraph::annotate::AnnotationWarning]| {
        if warnings {
            for w in ws {
                eprintln!("{id}: token {} `{}`: {}", w.token_index, w.text, w.reason);
            }
        }
    };
    let is_drop = serde_json::from_str::<Value>(&text).is_ok_and(|v| {
        v.as_object()
            .is_some_and(|o| o.values().any(|p| p.get("qa_pairs").is_some()))
    });
    if is_drop {
        let mut root = Map::new();
        for ex in load_examples(input)? {
            let (ann, ws) = annotate(&ex.question, &ex.passage);
            report(&ex.query_id, &ws);
            root.insert(ex.query_id, serde_json::from_str(&to_json_string(&ann)?)?);
        }
        write_json(out, Value::Object(root))
    } else {
        let (ann, ws) = annotate(question, &text);
        report("input", &ws);
        std::fs::write(out, to_json_string(&ann)?)
            .with_context(|| format!("writing {}", out.display()))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Annotate {
            input,
            out,
            question,
            warnings,
        } => cmd_annotate(&input, &out, &question, warnings),
        Command::BuildGraph { input, out, mode } => {
            let ann = load_annotations(&input)?;
            let mode = match mode {
                ModeArg::Heterogeneous => GraphMode::Heterogeneous,
                ModeArg::Homogeneous => GraphMode::Homogeneous,
            };
            let g = build_graph_with(&ann, mode);
            g.save_json(&out)?;
            println!("{}", serde_json::to_string(&g.stats())?);
            Ok(())
        }
        Command::GenSynthetic { n, seed, out } => {
            let examples = generate_synthetic(&SyntheticSpec::new(n, seed))?;
            save_drop(&examples, &out)?;
            println!("wrote {} examples to {}", examples.len(), out.display());
            Ok(())
        }
        Command::Train {
            config,
            data,
            out_dir,
        } => {
            let cfg = RunConfig::load(&config)?;
            let examples = load_examples(&data)?;
            let out = train(&cfg, &examples, &Checkpointing::Dir(out_dir.clone()))?;
            for (e, l) in out.loss_curve.iter().enumerate() {
                println!("epoch {} loss {l:.6}", e + 1);
            }
            println!(
                "trained on {} examples ({} filtered); checkpoints in {}",
                out.metadata.n_train,
                out.metadata.n_filtered,
                out_dir.display()
            );
            Ok(())
        }
        Command::Eval {
            ckpt,
            data,
            report,
            preds,
            dump_attention,
        } => {
            let model = RunCheckpoint::load(&ckpt)?.model()?;
            let examples = load_examples(&data)?;
            let out = evaluate(&model, &examples)?;
            if let Some(p) = preds {
                write_predictions(&p, &out.predictions)?;
            }
            if let Some(p) = report {
                write_json(&p, serde_json::to_value(&out.report)?)?;
            }
            if let Some(p) = dump_attention {
                let obj: Map<String, Value> = out
                    .attention
                    .iter()
                    .map(|(id, a)| Ok((id.clone(), serde_json::to_value(a)?)))
                    .collect::<Result<_>>()?;
                write_json(&p, Value::Object(obj))?;
            }
            println!("{}", serde_json::to_string_pretty(&out.report)?);
            Ok(())
        }
        Command::Ablate {
            config,
            data,
            eval_data,
            n,
            report,
        } => {
            let cfg = RunConfig::load(&config)?;
            let train_data = match &data {
                Some(p) => load_examples(p)?,
                None => generate_synthetic(&SyntheticSpec::new(n, cfg.seed))?,
            };
            let eval_set = match &eval_data {
                Some(p) => load_examples(p)?,
                None => train_data.clone(),
            };
            if train_data.is_empty() {
                bail!("no training examples");
            }
            let table = ablate(&cfg, &train_data, &eval_set)?;
            print!("{}", table.render());
            for row in &table.rows {
                println!(
                    "{}: entity nodes {}, max relations {}",
                    row.mode.as_str(),
                    row.entity_nodes,
                    row.max_relations
                );
            }
            if let Some(p) = report {
                write_json(&p, json!({"rows": table.rows}))?;
            }
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, with wall time
//! checked against each criterion's budget.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use numgraph::annotate::{annotate, AnnotatedPassage, NumberType};
use numgraph::data::{generate_synthetic, SyntheticSpec, TaskWeights};
use numgraph::diffcore::gradcheck::check_gradients;
use numgraph::diffcore::{ParamStore, Tape, Tensor};
use numgraph::encoder;
use numgraph::graph::{
    build_graph, GraphMode, GraphNode, NodeId, NodeKind, ReasoningGraph, Relation, Source,
};
use numgraph::harness::metrics::score_bags;
use numgraph::harness::{
    ablate, evaluate, prepare_dataset, train_prepared, Checkpointing, EpochControl, RunConfig,
};
use numgraph::heads::{
    self, decode, find_supervision, AnswerType, AnswerValue, GoldAnswer, HeadOutputs, Payload,
    SignedExpression,
};
use numgraph::model::{self, Ablation, Model, ModelConfig, PreparedExample};
use numgraph::qdgat::{self, NodeStates, QdgatConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PASSAGE: &str = include_str!("fixtures/battle_passage.txt");
const QUESTION: &str = include_str!("fixtures/battle_question.txt");

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn battle() -> AnnotatedPassage {
    annotate(QUESTION.trim(), PASSAGE.trim()).0
}

fn criterion_graph_fidelity() -> Outcome {
    let ann = battle();
    let g = build_graph(&ann);
    let value_of = |i: usize| g.nodes()[i].value;
    let numbers_of = |t: NumberType| -> BTreeSet<u64> {
        g.nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Number && n.ntype == Some(t))
            .map(|n| n.value.unwrap() as u64)
            .collect()
    };
    let expect_num: BTreeSet<u64> = [3000, 1511, 152, 4, 30].into();
    let expect_date: BTreeSet<u64> = [17540101, 17560101, 17560207].into();
    ensure(numbers_of(NumberType::Number) == expect_num, || {
        format!("NUMBER nodes {:?}", numbers_of(NumberType::Number))
    })?;
    ensure(numbers_of(NumberType::Date) == expect_date, || {
        format!("DATE nodes {:?}", numbers_of(NumberType::Date))
    })?;
    let pairs = |r: Relation| -> BTreeSet<(u64, u64)> {
        g.undirected_edges()
            .filter(|e| e.2 == r)
            .map(|(i, j, _)| {
                let (a, b) = (value_of(i).unwrap() as u64, value_of(j).unwrap() as u64);
                (a.min(b), a.max(b))
            })
            .collect()
    };
    let clique = |s: &BTreeSet<u64>| -> BTreeSet<(u64, u64)> {
        let v: Vec<u64> = s.iter().copied().collect();
        let mut out = BTreeSet::new();
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                out.insert((v[i], v[j]));
            }
        }
        out
    };
    ensure(pairs(Relation::Number) == clique(&expect_num), || {
        format!("NUMBER edges {:?}", pairs(Relation::Number))
    })?;
    ensure(pairs(Relation::Number).len() == 10, || {
        "NUMBER pair count".into()
    })?;
    ensure(pairs(Relation::Date) == clique(&expect_date), || {
        format!("DATE edges {:?}", pairs(Relation::Date))
    })?;
    ensure(pairs(Relation::Date).len() == 3, || {
        "DATE pair count".into()
    })?;
    for (i, j, r) in g.directed_edges() {
        let (a, b) = (&g.nodes()[i], &g.nodes()[j]);
        if a.kind == NodeKind::Number && b.kind == NodeKind::Number {
            ensure(a.ntype == b.ntype, || {
                format!("cross-type edge {i}-{j} {r:?}")
            })?;
        }
    }
    // ENT_DIGIT: exactly the same-sentence passage entity/number pairs.
    let sent = |span: (usize, usize)| ann.passage.tokens[span.0].sentence_id;
    let mut expected = BTreeSet::new();
    for e in g.nodes().iter().filter(|n| n.kind == NodeKind::Entity) {
        for n in g.nodes().iter().filter(|n| n.kind == NodeKind::Number) {
            if e.source == Source::Passage
                && n.source == Source::Passage
                && sent(e.token_span) == sent(n.token_span)
            {
                expected.insert((n.id.0.min(e.id.0), n.id.0.max(e.id.0)));
            }
        }
    }
    let got: BTreeSet<(usize, usize)> = g
        .undirected_edges()
        .filter(|e| e.2 == Relation::EntDigit)
        .map(|(i, j, _)| (i.min(j), i.max(j)))
        .collect();
    ensure(got == expected, || {
        format!("ENT_DIGIT {} edges, expected {}", got.len(), expected.len())
    })?;
    Ok(format!(
        "10 NUMBER pairs, 3 DATE pairs, 0 cross-type, {} in-sentence ENT_DIGIT pairs",
        got.len()
    ))
}

fn random_graph(rng: &mut ChaCha8Rng) -> ReasoningGraph {
    let n = rng.gen_range(1..=30);
    let nodes: Vec<GraphNode> = (0..n)
        .map(|i| {
            let is_num = rng.gen_bool(0.7);
            GraphNode {
                id: NodeId(i),
                kind: if is_num {
                    NodeKind::Number
                } else {
                    NodeKind::Entity
                },
                ntype: is_num.then(|| NumberType::ALL[rng.gen_range(0..8)]),
                source: Source::Passage,
                token_span: (i, i),
                value: is_num.then(|| rng.gen_range(0.0..100.0)),
                arithmetic_value: None,
                sentence_id: 0,
            }
        })
        .collect();
    let density = rng.gen_range(0.0..0.5);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                edges.push((i, j, Relation::ALL[rng.gen_range(0..9)]));
                if rng.gen_bool(0.2) {
                    edges.push((i, j, Relation::ALL[rng.gen_range(0..9)]));
                }
            }
        }
    }
    ReasoningGraph::from_edges(nodes, edges, GraphMode::Heterogeneous).unwrap()
}

fn criterion_attention_normalization() -> Outcome {
    let d = 16;
    let cfg = QdgatConfig::new(d, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    qdgat::register_params(&mut store, &cfg, &mut rng).map_err(|e| e.to_string())?;
    let mut worst = 0.0_f64;
    let mut rows = 0usize;
    for k in 0..100 {
        let g = random_graph(&mut rng);
        let n = g.len();
        let mut tape = Tape::new(&store);
        let v0: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let v0 = tape
            .constant(Tensor::matrix(n, d, v0).unwrap())
            .map_err(|e| e.to_string())?;
        let c = tape
            .constant(Tensor::vector(c))
            .map_err(|e| e.to_string())?;
        let states = NodeStates {
            v0,
            vt: v0,
            iteration: 0,
            n_nodes: n,
        };
        let (_, rec) =
            qdgat::qdgat_run_from(&mut tape, &cfg, &g, states, c).map_err(|e| e.to_string())?;
        ensure(rec.iterations.len() == cfg.iterations, || {
            format!("graph {k}: {} iterations recorded", rec.iterations.len())
        })?;
        let with_nbrs = (0..n)
            .filter(|&i| !g.neighbors(NodeId(i)).unwrap().is_empty())
            .count();
        for it in &rec.iterations {
            ensure(it.len() == with_nbrs, || {
                format!("graph {k}: {} rows for {with_nbrs} nodes", it.len())
            })?;
            for row in it {
                let s: f64 = row.alpha.iter().sum();
                worst = worst.max((s - 1.0).abs());
                ensure(row.alpha.iter().all(|a| (0.0..=1.0).contains(a)), || {
                    format!("graph {k}: alpha out of range")
                })?;
                rows += 1;
            }
        }
    }
    ensure(worst <= 1e-6, || format!("max |sum - 1| = {worst:e}"))?;
    Ok(format!("{rows} rows, max |sum - 1| = {worst:.1e}"))
}

fn tiny_example(cfg: &ModelConfig) -> PreparedExample {
    let (ann, _) = annotate(
        "How many points did Smith and Jones score in total?",
        "Then Smith scored 12 points. Later, Jones scored 7 points.",
    );
    let sup = find_supervision(&GoldAnswer::number("19"), &ann, 3);
    PreparedExample::new(cfg, "q", ann, Some(sup)).unwrap()
}

fn criterion_gradient_check() -> Outcome {
    let cfg = ModelConfig {
        vocab_size: 64,
        d_h: 8,
        n_mix_layers: 1,
        iterations: 2,
        ablation: Ablation::Full,
        seed: 11,
    };
    let model = Model::new(cfg.clone()).map_err(|e| e.to_string())?;
    let ex = tiny_example(&cfg);
    ensure(ex.graph.len() <= 6, || format!("|V| = {}", ex.graph.len()))?;
    let ders = ex.supervision.clone().unwrap().derivations;
    let report = check_gradients(&model.params, 1e-4, None, |t| {
        let fp = model::forward(t, &cfg, &ex)?;
        heads::loss(t, &fp.heads, &ders)
    })
    .map_err(|e| e.to_string())?;
    ensure(report.max_rel_error < 1e-3, || format!("{report:?}"))?;
    Ok(format!(
        "{} parameters, {} entries, |V| = {}, max rel err {:.2e} ({})",
        model.params.len(),
        report.checked,
        ex.graph.len(),
        report.max_rel_error,
        report.worst_param
    ))
}

fn one_hot_rows(choice: &[usize], width: usize) -> Vec<f64> {
    choice
        .iter()
        .flat_map(|&k| {
            let mut v = vec![-30.0; width];
            v[k] = 0.0;
            v
        })
        .collect()
}

/// Decodes the arithmetic head with logits pinned to `coeffs`.
fn decode_signs(ann: &AnnotatedPassage, coeffs: &[i8]) -> Result<(String, Vec<i8>), String> {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let k = coeffs.len();
    let choice: Vec<usize> = coeffs.iter().map(|&c| (c + 1) as usize).collect();
    let mut types = vec![-30.0; 5];
    types[AnswerType::Arithmetic.index()] = 0.0;
    let err = |e: numgraph::Error| e.to_string();
    let h = HeadOutputs {
        type_logp: tape.constant(Tensor::vector(types)).map_err(err)?,
        passage_span: None,
        question_span: None,
        tags: None,
        count: tape
            .constant(Tensor::vector(one_hot_rows(&[0], 10)))
            .map_err(err)?,
        signs: Some(
            tape.constant(Tensor::matrix(k, 3, one_hot_rows(&choice, 3)).unwrap())
                .map_err(err)?,
        ),
        n_q: ann.question.tokens.len(),
        n_p: ann.passage.tokens.len(),
        number_values: ann
            .passage
            .numbers
            .iter()
            .map(|m| m.arithmetic_value())
            .collect(),
    };
    let p = decode(&tape, &h, ann).map_err(err)?;
    let AnswerValue::Text(text) = p.answer else {
        return Err("arithmetic answer is not a single string".into());
    };
    let Payload::Expression(e) = p.derivation.payload else {
        return Err("payload is not an expression".into());
    };
    Ok((text, e.coefficients))
}

fn criterion_expression_oracle() -> Outcome {
    // Worked cases: the decoded answer string.
    let cases: [(&str, &[i8], &str); 3] = [
        (
            "Kasay kicked a 45-yard field goal and then a 49-yard field goal.",
            &[1, 1],
            "94",
        ),
        (
            "It rose from 13.0% to 14.3% over the year.",
            &[-1, 1],
            "1.3",
        ),
        ("They won 4 games and lost 2 games.", &[1, -1], "2"),
    ];
    for (passage, coeffs, want) in cases {
        let (ann, _) = annotate("How many?", passage);
        ensure(ann.passage.numbers.len() == coeffs.len(), || {
            format!("{passage}: {} numbers", ann.passage.numbers.len())
        })?;
        let (text, _) = decode_signs(&ann, coeffs)?;
        ensure(text == want, || {
            format!("{passage}: decoded {text}, expected {want}")
        })?;
    }
    // Random assignments over integer-valued passages: exact f64 equality.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..1000 {
        let k = rng.gen_range(1..=8);
        let vals: Vec<i64> = (0..k).map(|_| rng.gen_range(1..=999)).collect();
        let passage = vals
            .iter()
            .map(|v| format!("They recorded {v} items."))
            .collect::<Vec<_>>()
            .join(" ");
        let (ann, _) = annotate("How many?", &passage);
        ensure(ann.passage.numbers.len() == k, || {
            format!("trial {trial}: numbers")
        })?;
        let coeffs: Vec<i8> = (0..k).map(|_| rng.gen_range(-1..=1)).collect();
        let oracle: i64 = vals.iter().zip(&coeffs).map(|(v, &c)| v * c as i64).sum();
        let got = SignedExpression::new(coeffs.clone())
            .and_then(|e| {
                let values: Vec<f64> = ann
                    .passage
                    .numbers
                    .iter()
                    .map(|m| m.arithmetic_value())
                    .collect();
                e.evaluate(&values)
            })
            .map_err(|e| e.to_string())?;
        ensure(got == oracle as f64, || {
            format!("trial {trial}: {got} vs {oracle}")
        })?;
        let (text, decoded) = decode_signs(&ann, &coeffs)?;
        ensure(decoded == coeffs, || {
            format!("trial {trial}: coefficients changed")
        })?;
        ensure(text == oracle.to_string(), || {
            format!("trial {trial}: decoded {text}, oracle {oracle}")
        })?;
    }
    Ok("3 worked cases and 1000 random assignments agree exactly".into())
}

fn criterion_supervision() -> Outcome {
    let ann = battle();
    let gold = GoldAnswer::number("34");
    let ga = find_supervision(&gold, &ann, 3);
    let values: Vec<f64> = ann
        .passage
        .numbers
        .iter()
        .map(|m| m.arithmetic_value())
        .collect();
    let idx = |v: f64| values.iter().position(|&x| x == v).unwrap();
    let mut want = vec![0i8; values.len()];
    want[idx(4.0)] = 1;
    want[idx(30.0)] = 1;
    let mut found: BTreeSet<Vec<i8>> = BTreeSet::new();
    for d in &ga.derivations {
        match &d.payload {
            Payload::Expression(e) => {
                let v: f64 = e
                    .coefficients
                    .iter()
                    .zip(&values)
                    .map(|(&c, &x)| c as f64 * x)
                    .sum();
                ensure((v - 34.0).abs() <= 1e-6, || {
                    format!("{:?} gives {v}", e.coefficients)
                })?;
                ensure(e.nonzero() <= 3, || "more than 3 terms".into())?;
                found.insert(e.coefficients.clone());
            }
            Payload::Span(s, e) => {
                let text = if d.atype == AnswerType::QuestionSpan {
                    &ann.question
                } else {
                    &ann.passage
                };
                let got = text.span_text((*s, *e)).replace(',', "");
                ensure(got == "34", || format!("span {got:?}"))?;
            }
            Payload::Count(c) => return Err(format!("count {c} cannot give 34")),
            Payload::Spans(_) => return Err("multi-span cannot give a number".into()),
        }
    }
    ensure(found.contains(&want), || "{+4, +30} not found".into())?;
    // Completeness against brute force over all 3^k assignments.
    let k = values.len();
    let mut brute = BTreeSet::new();
    for code in 0..3usize.pow(k as u32) {
        let mut c = vec![0i8; k];
        let mut x = code;
        for slot in c.iter_mut() {
            *slot = (x % 3) as i8 - 1;
            x /= 3;
        }
        let nz = c.iter().filter(|&&v| v != 0).count();
        let v: f64 = c.iter().zip(&values).map(|(&a, &b)| a as f64 * b).sum();
        if (1..=3).contains(&nz) && (v - 34.0).abs() <= 1e-6 {
            brute.insert(c);
        }
    }
    ensure(found == brute, || {
        format!(
            "search found {} expressions, brute force {}",
            found.len(),
            brute.len()
        )
    })?;
    Ok(format!(
        "{} derivations all sound, {} expressions match brute force",
        ga.derivations.len(),
        found.len()
    ))
}

fn criterion_trainability() -> Outcome {
    let spec = SyntheticSpec {
        weights: TaskWeights {
            addition: 1.0,
            subtraction: 1.0,
            count: 1.0,
            span: 1.0,
            ordinal_span: 0.0,
        },
        ..SyntheticSpec::new(200, 7)
    };
    let data = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        d_h: 64,
        t: 4,
        batch_size: 16,
        epochs: 50,
        lr_encoder: 1e-3,
        lr_other: 1e-3,
        weight_decay_encoder: 0.0,
        weight_decay_other: 0.0,
        seed: 0,
        ..RunConfig::default()
    };
    let prepared = prepare_dataset(&cfg, &data).map_err(|e| e.to_string())?;
    ensure(prepared.examples.len() == 200, || {
        format!("{} of 200 examples trainable", prepared.examples.len())
    })?;
    let mut epochs = 0;
    let out = train_prepared(&cfg, &prepared, &Checkpointing::Off, |e, _, m| {
        epochs = e + 1;
        let em = evaluate(m, &data)?.report.em;
        Ok(if em >= 95.0 {
            EpochControl::Stop
        } else {
            EpochControl::Continue
        })
    })
    .map_err(|e| e.to_string())?;
    let report = evaluate(&out.model, &data)
        .map_err(|e| e.to_string())?
        .report;
    ensure(report.em >= 95.0, || {
        format!("train EM {:.1} after {epochs} epochs", report.em)
    })?;
    Ok(format!(
        "train EM {:.1} (F1 {:.1}) after {epochs} epochs",
        report.em, report.f1
    ))
}

fn criterion_ablation() -> Outcome {
    let data = generate_synthetic(&SyntheticSpec::new(60, 3)).map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        d_h: 32,
        t: 2,
        batch_size: 8,
        epochs: 15,
        lr_encoder: 1e-3,
        lr_other: 1e-3,
        seed: 5,
        ..RunConfig::default()
    };
    let table = ablate(&cfg, &data, &data).map_err(|e| e.to_string())?;
    let modes: Vec<Ablation> = table.rows.iter().map(|r| r.mode).collect();
    ensure(modes == Ablation::ALL, || format!("rows {modes:?}"))?;
    let nh = &table.rows[1];
    ensure(nh.entity_nodes == 0, || {
        format!("NH has {} entity nodes", nh.entity_nodes)
    })?;
    ensure(nh.max_relations == 1, || {
        format!("NH uses {} relations", nh.max_relations)
    })?;
    ensure(table.render().lines().count() == 5, || "table shape".into())?;

    // NQ: v^T does not move when c is perturbed.
    let mc = ModelConfig {
        vocab_size: 128,
        d_h: 16,
        n_mix_layers: 1,
        iterations: 3,
        ablation: Ablation::NQ,
        seed: 8,
    };
    let model = Model::new(mc.clone()).map_err(|e| e.to_string())?;
    let ex = tiny_example(&mc);
    let err = |e: numgraph::Error| e.to_string();
    let run = |shift: f64| -> Result<Vec<f64>, String> {
        let mut tape = Tape::new(&model.params);
        let enc = encoder::encode(&mut tape, &mc.encoder(), &ex.q_ids, &ex.p_ids).map_err(err)?;
        let noise: Vec<f64> = (0..mc.d_h).map(|i| shift * ((i as f64) - 7.5)).collect();
        let noise = tape.constant(Tensor::vector(noise)).map_err(err)?;
        let c = tape.add(enc.c, noise).map_err(err)?;
        let states = qdgat::init_node_inputs(&mut tape, &ex.graph, &enc).map_err(err)?;
        let (vt, _) =
            qdgat::qdgat_run_from(&mut tape, &mc.qdgat(), &ex.graph, states, c).map_err(err)?;
        Ok(tape.value(vt).to_vec())
    };
    let base = run(0.0)?;
    let mut delta = 0.0_f64;
    for shift in [1e-3, 0.5, 10.0] {
        let moved = run(shift)?;
        for (a, b) in base.iter().zip(&moved) {
            delta = delta.max((a - b).abs());
        }
    }
    ensure(delta < 1e-9, || format!("NQ max |dv^T| = {delta:e}"))?;
    let em: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("{} {:.1}", r.mode.as_str(), r.report.em))
        .collect();
    Ok(format!(
        "3 rows (EM {}), NH 0 entity nodes / 1 relation, NQ max |dv^T| = {delta:.1e}",
        em.join(", ")
    ))
}

fn criterion_metrics() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    let check = |pred: &[&str], gold: &[&str], em: f64, f1: f64| -> Result<(), String> {
        let s = score_bags(pred, gold);
        ensure(s.em == em && close(s.f1, f1), || {
            format!(
                "{pred:?} vs {gold:?}: got EM {} F1 {}, want {em} {f1}",
                s.em, s.f1
            )
        })
    };
    // The three reference examples.
    check(&["94"], &["94"], 100.0, 100.0)?;
    check(&["the third"], &["third"], 100.0, 100.0)?;
    check(&["Spanish"], &["Spanish", "Portuguese"], 0.0, 200.0 / 3.0)?;
    // Hand-built normalization and alignment cases.
    let hand: [(&[&str], &[&str], f64, f64); 20] = [
        (&["Third"], &["third"], 100.0, 100.0),
        (&["A third."], &["third"], 100.0, 100.0),
        (&["94.0"], &["94"], 100.0, 100.0),
        (&["1,000"], &["1000"], 100.0, 100.0),
        (&["95"], &["94"], 0.0, 0.0),
        (&["94 yards"], &["94"], 0.0, 200.0 / 3.0),
        (&["yards 93"], &["94 yards"], 0.0, 0.0),
        (&["New England"], &["new-england"], 100.0, 100.0),
        (&["New England Patriots"], &["New England"], 0.0, 80.0),
        (
            &["Portuguese", "Spanish"],
            &["Spanish", "Portuguese"],
            100.0,
            100.0,
        ),
        (
            &["Spanish", "French"],
            &["Spanish", "Portuguese"],
            0.0,
            50.0,
        ),
        (
            &["Spanish", "Portuguese", "French"],
            &["Spanish", "Portuguese"],
            0.0,
            80.0,
        ),
        (
            &["Spanish Portuguese"],
            &["Spanish", "Portuguese"],
            0.0,
            400.0 / 9.0,
        ),
        (&[""], &["third"], 0.0, 0.0),
        (&["the"], &["an"], 100.0, 100.0),
        (&["Smith's"], &["smiths"], 100.0, 100.0),
        (&["3 p.m."], &["3 pm"], 100.0, 100.0),
        (&["John Smith"], &["Smith"], 0.0, 200.0 / 3.0),
        (&["february 7 1756"], &["7 February 1756"], 0.0, 100.0),
        (&["1.30"], &["1.3"], 100.0, 100.0),
    ];
    for (p, g, em, f1) in hand {
        check(p, g, em, f1)?;
    }
    // Fuzz: EM = 100 implies F1 = 100, ranges hold.
    let words = [
        "the",
        "a",
        "an",
        "Spanish",
        "spanish",
        "Portuguese",
        "3",
        "3.0",
        "1,000",
        "-",
        "third",
        "yard",
        "New",
        "england",
        ".",
        "!",
        "4",
        "four",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut em_hits = 0;
    let bag = |rng: &mut ChaCha8Rng| -> Vec<String> {
        (0..rng.gen_range(1..=3))
            .map(|_| {
                (0..rng.gen_range(1..=3))
                    .map(|_| words[rng.gen_range(0..words.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    };
    for i in 0..20000 {
        let pred = bag(&mut rng);
        let gold = if rng.gen_bool(0.3) {
            pred.clone()
        } else {
            bag(&mut rng)
        };
        let s = score_bags(&pred, &gold);
        ensure(s.em == 0.0 || s.em == 100.0, || {
            format!("case {i}: EM {}", s.em)
        })?;
        ensure((0.0..=100.0).contains(&s.f1), || {
            format!("case {i}: F1 {}", s.f1)
        })?;
        ensure(s.em < 100.0 || s.f1 == 100.0, || {
            format!("case {i}: {pred:?} vs {gold:?} EM 100 with F1 {}", s.f1)
        })?;
        if s.em == 100.0 {
            em_hits += 1;
        }
    }
    Ok(format!(
        "3 reference + 20 hand-built cases exact; 20000 fuzzed ({em_hits} EM hits)"
    ))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        (
            "1 graph fidelity",
            Duration::from_secs(1),
            criterion_graph_fidelity,
        ),
        (
            "2 attention normalization",
            Duration::from_secs(30),
            criterion_attention_normalization,
        ),
        (
            "3 full-stack gradient check",
            Duration::from_secs(120),
            criterion_gradient_check,
        ),
        (
            "4 expression oracle",
            Duration::from_secs(10),
            criterion_expression_oracle,
        ),
        (
            "5 supervision search",
            Duration::from_secs(10),
            criterion_supervision,
        ),
        (
            "6 trainability",
            Duration::from_secs(900),
            criterion_trainability,
        ),
        (
            "7 ablation harness",
            Duration::from_secs(600),
            criterion_ablation,
        ),
        ("8 metric suite", Duration::from_secs(60), criterion_metrics),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, budget, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if took <= budget {
                Ok(msg)
            } else {
                Err(format!("{msg}; took {took:.2?}, budget {budget:?}"))
            }
        });
        match outcome {
            Ok(msg) => println!("PASS  {name} [{took:.2?}]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name} [{took:.2?}]: {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

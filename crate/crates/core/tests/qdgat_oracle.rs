//! A 3-node, d = 2 message-passing run checked against a plain-array
//! re-derivation of every step.

use numgraph::annotate::NumberType;
use numgraph::diffcore::{ParamStore, Tape, Tensor};
use numgraph::graph::{GraphMode, GraphNode, NodeId, NodeKind, ReasoningGraph, Relation, Source};
use numgraph::qdgat::{self, NodeStates, QdgatConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const D: usize = 2;

fn node(i: usize, number: bool) -> GraphNode {
    GraphNode {
        id: NodeId(i),
        kind: if number {
            NodeKind::Number
        } else {
            NodeKind::Entity
        },
        ntype: number.then_some(NumberType::Number),
        source: Source::Passage,
        token_span: (i, i),
        value: number.then_some(i as f64 + 1.0),
        arithmetic_value: None,
        sentence_id: 0,
    }
}

/// 0 -NUMBER- 1 -ENT_DIGIT- 2, plus a DATE label stacked on 0-1.
fn graph() -> ReasoningGraph {
    ReasoningGraph::from_edges(
        vec![node(0, true), node(1, true), node(2, false)],
        [
            (0, 1, Relation::Number),
            (0, 1, Relation::Date),
            (1, 2, Relation::EntDigit),
        ],
        GraphMode::Heterogeneous,
    )
    .unwrap()
}

/// Registers parameters, then overwrites them with fixed small values.
fn store(cfg: &QdgatConfig) -> ParamStore {
    let mut s = ParamStore::new();
    qdgat::register_params(&mut s, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let names: Vec<(String, Vec<usize>)> = s
        .iter()
        .map(|(_, n, t)| (n.to_string(), t.shape().to_vec()))
        .collect();
    for (k, (name, shape)) in names.into_iter().enumerate() {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|i| 0.1 * (((k * 7 + i * 3) % 11) as f64 - 5.0))
            .collect();
        s.set(&name, Tensor::new(shape, data).unwrap()).unwrap();
    }
    s
}

type Mat = Vec<Vec<f64>>;

fn mat(s: &ParamStore, name: &str) -> Mat {
    let t = s.get(name).unwrap();
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r)
        .map(|i| t.data()[i * c..(i + 1) * c].to_vec())
        .collect()
}

fn vecmat(x: &[f64], w: &Mat) -> Vec<f64> {
    (0..w[0].len())
        .map(|j| x.iter().zip(w).map(|(a, row)| a * row[j]).sum())
        .collect()
}

fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn oracle(s: &ParamStore, cfg: &QdgatConfig, v0: &Mat, c: &[f64]) -> (Mat, Vec<Vec<f64>>) {
    let nbrs: [Vec<(usize, Vec<&str>)>; 3] = [
        vec![(1, vec!["NUMBER", "DATE"])],
        vec![(0, vec!["NUMBER", "DATE"]), (2, vec!["ENT_DIGIT"])],
        vec![(1, vec!["ENT_DIGIT"])],
    ];
    let mut vt = v0.clone();
    let mut alphas = Vec::new();
    for t in 0..cfg.iterations {
        let gate = |which: &str| -> Option<Vec<f64>> {
            cfg.question_directed.then(|| {
                let h: Vec<f64> = vecmat(c, &mat(s, "qdgat.W_fc"))
                    .into_iter()
                    .map(elu)
                    .collect();
                let m = vecmat(&h, &mat(s, &format!("qdgat.W_dc.{t}")));
                vecmat(&m, &mat(s, &format!("qdgat.W_{which}c")))
            })
        };
        let project = |which: &str| -> Mat {
            let w = mat(s, &format!("qdgat.W_{which}v"));
            let g = gate(which);
            (0..3)
                .map(|i| {
                    let x = vecmat(&cat(&vt[i], &v0[i]), &w);
                    match &g {
                        Some(g) => x.iter().zip(g).map(|(a, b)| a * b).collect(),
                        None => x,
                    }
                })
                .collect()
        };
        let (xq, xk, xv) = (project("q"), project("k"), project("v"));
        let mut next = Vec::new();
        for i in 0..3 {
            let scores: Vec<f64> = nbrs[i]
                .iter()
                .map(|(j, rels)| {
                    let s_ij: f64 = rels
                        .iter()
                        .map(|r| {
                            vecmat(&cat(&xq[i], &xk[*j]), &mat(s, &format!("qdgat.W_a.{r}")))[0]
                        })
                        .sum();
                    if s_ij > 0.0 {
                        s_ij
                    } else {
                        0.2 * s_ij
                    }
                })
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|a| (a - mx).exp()).sum();
            let alpha: Vec<f64> = scores.iter().map(|a| (a - mx).exp() / z).collect();
            let mut xhat = vec![0.0; D];
            for ((j, _), a) in nbrs[i].iter().zip(&alpha) {
                for k in 0..D {
                    xhat[k] += a * xv[*j][k];
                }
            }
            alphas.push(alpha);
            next.push(vecmat(&cat(&vt[i], &xhat), &mat(s, "qdgat.W_u")));
        }
        vt = next;
    }
    (vt, alphas)
}

fn run(question_directed: bool, iterations: usize) {
    let cfg = QdgatConfig {
        question_directed,
        ..QdgatConfig::new(D, iterations)
    };
    let s = store(&cfg);
    let g = graph();
    let v0: Mat = vec![vec![0.3, -0.7], vec![1.1, 0.4], vec![-0.5, 0.9]];
    let c = [0.6, -0.2];
    let mut tape = Tape::new(&s);
    let v0v = tape
        .constant(Tensor::matrix(3, D, v0.concat()).unwrap())
        .unwrap();
    let cv = tape.constant(Tensor::vector(c.to_vec())).unwrap();
    let states = NodeStates {
        v0: v0v,
        vt: v0v,
        iteration: 0,
        n_nodes: 3,
    };
    let (vt, rec) = qdgat::qdgat_run_from(&mut tape, &cfg, &g, states, cv).unwrap();
    let (want, want_alpha) = oracle(&s, &cfg, &v0, &c);
    let got = tape.value(vt);
    for i in 0..3 {
        for k in 0..D {
            let (a, b) = (got[i * D + k], want[i][k]);
            assert!((a - b).abs() < 1e-12, "v^T[{i}][{k}]: {a} vs {b}");
        }
    }
    let got_alpha: Vec<Vec<f64>> = rec
        .iterations
        .iter()
        .flat_map(|rows| rows.iter().map(|r| r.alpha.clone()))
        .collect();
    assert_eq!(got_alpha.len(), want_alpha.len());
    for (a, b) in got_alpha.iter().zip(&want_alpha) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn one_iteration_matches_hand_derivation() {
    run(true, 1);
}

#[test]
fn two_iterations_match_hand_derivation() {
    run(true, 2);
}

#[test]
fn without_command_matches_hand_derivation() {
    run(false, 2);
}

//! Heterogeneous number/entity graph with nine relation labels.
//!
//! Numbers of the same type form a clique under that type's relation;
//! an entity and a number are linked by `ENT_DIGIT` when they occur in the
//! same sentence of the same text. Edges are undirected and stored once
//! per unordered pair.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotate::{AnnotatedPassage, NumberType, TextAnnotation};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Number,
    Entity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Question,
    Passage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "NUMBER")]
    Number,
    #[serde(rename = "PERCENT")]
    Percent,
    #[serde(rename = "MONEY")]
    Money,
    #[serde(rename = "TIME")]
    Time,
    #[serde(rename = "DATE")]
    Date,
    #[serde(rename = "DURATION")]
    Duration,
    #[serde(rename = "ORDINAL")]
    Ordinal,
    #[serde(rename = "YARD")]
    Yard,
    #[serde(rename = "ENT_DIGIT")]
    EntDigit,
}

impl Relation {
    pub const ALL: [Relation; 9] = [
        Relation::Number,
        Relation::Percent,
        Relation::Money,
        Relation::Time,
        Relation::Date,
        Relation::Duration,
        Relation::Ordinal,
        Relation::Yard,
        Relation::EntDigit,
    ];

    pub fn of_type(t: NumberType) -> Self {
        Self::ALL[t.index()]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::EntDigit => "ENT_DIGIT",
            other => NumberType::ALL[other.index()].as_str(),
        }
    }
}

/// How much structure the builder keeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    /// Typed number cliques plus entity nodes.
    #[default]
    Heterogeneous,
    /// Number nodes only, all pairwise connected under one relation.
    Homogeneous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub ntype: Option<NumberType>,
    pub source: Source,
    pub token_span: (usize, usize),
    pub value: Option<f64>,
    /// Operand for signed-sum arithmetic (numbers only).
    #[serde(skip)]
    pub arithmetic_value: Option<f64>,
    #[serde(skip)]
    pub sentence_id: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReasoningGraph {
    nodes: Vec<GraphNode>,
    edges: BTreeSet<(usize, usize, Relation)>,
    adjacency: Vec<Vec<(usize, Vec<Relation>)>>,
    mode: GraphMode,
}

fn push_text_nodes(
    nodes: &mut Vec<GraphNode>,
    text: &TextAnnotation,
    source: Source,
    with_entities: bool,
) {
    for m in &text.numbers {
        nodes.push(GraphNode {
            id: NodeId(nodes.len()),
            kind: NodeKind::Number,
            ntype: Some(m.ntype),
            source,
            token_span: m.token_span,
            value: Some(m.value),
            arithmetic_value: Some(m.arithmetic_value()),
            sentence_id: text.tokens[m.token_span.0].sentence_id,
        });
    }
    if with_entities {
        for e in &text.entities {
            nodes.push(GraphNode {
                id: NodeId(nodes.len()),
                kind: NodeKind::Entity,
                ntype: None,
                source,
                token_span: e.token_span,
                value: None,
                arithmetic_value: None,
                sentence_id: text.tokens[e.token_span.0].sentence_id,
            });
        }
    }
}

/// Builds the heterogeneous graph.
pub fn build_graph(ann: &AnnotatedPassage) -> ReasoningGraph {
    build_graph_with(ann, GraphMode::Heterogeneous)
}

/// Node order: passage numbers, passage entities, question numbers,
/// question entities, each in mention order.
pub fn build_graph_with(ann: &AnnotatedPassage, mode: GraphMode) -> ReasoningGraph {
    let with_entities = mode == GraphMode::Heterogeneous;
    let mut nodes = Vec::new();
    push_text_nodes(&mut nodes, &ann.passage, Source::Passage, with_entities);
    push_text_nodes(&mut nodes, &ann.question, Source::Question, with_entities);

    let mut edges = BTreeSet::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            let (a, b) = (&nodes[i], &nodes[j]);
            let rel = match (a.kind, b.kind, mode) {
                (NodeKind::Number, NodeKind::Number, GraphMode::Homogeneous) => {
                    Some(Relation::Number)
                }
                (NodeKind::Number, NodeKind::Number, GraphMode::Heterogeneous) => {
                    (a.ntype == b.ntype).then(|| Relation::of_type(a.ntype.expect("number node")))
                }
                (NodeKind::Entity, NodeKind::Entity, _) => None,
                _ => (a.source == b.source && a.sentence_id == b.sentence_id)
                    .then_some(Relation::EntDigit),
            };
            if let Some(r) = rel {
                edges.insert((i, j, r));
            }
        }
    }
    ReasoningGraph::from_parts(nodes, edges, mode)
}

impl ReasoningGraph {
    /// Assembles a graph from explicit nodes and undirected edges. Node ids
    /// are reassigned to positions; self loops and out-of-range endpoints
    /// are rejected.
    pub fn from_edges(
        mut nodes: Vec<GraphNode>,
        edges: impl IntoIterator<Item = (usize, usize, Relation)>,
        mode: GraphMode,
    ) -> Result<Self> {
        for (k, n) in nodes.iter_mut().enumerate() {
            n.id = NodeId(k);
        }
        let mut set = BTreeSet::new();
        for (i, j, r) in edges {
            let bad = if i >= nodes.len() {
                Some(i)
            } else if j >= nodes.len() {
                Some(j)
            } else {
                None
            };
            if let Some(index) = bad {
                return Err(Error::Index {
                    what: "edge endpoint",
                    index,
                    len: nodes.len(),
                });
            }
            if i == j {
                return Err(Error::InvalidArgument(format!("self loop on node {i}")));
            }
            set.insert((i.min(j), i.max(j), r));
        }
        Ok(Self::from_parts(nodes, set, mode))
    }

    fn from_parts(
        nodes: Vec<GraphNode>,
        edges: BTreeSet<(usize, usize, Relation)>,
        mode: GraphMode,
    ) -> Self {
        let mut adjacency: Vec<Vec<(usize, Vec<Relation>)>> = vec![Vec::new(); nodes.len()];
        for &(i, j, r) in &edges {
            for (a, b) in [(i, j), (j, i)] {
                match adjacency[a].iter_mut().find(|(n, _)| *n == b) {
                    Some((_, rels)) => rels.push(r),
                    None => adjacency[a].push((b, vec![r])),
                }
            }
        }
        for list in &mut adjacency {
            list.sort_by_key(|(n, _)| *n);
            for (_, rels) in list.iter_mut() {
                rels.sort();
            }
        }
        Self {
            nodes,
            edges,
            adjacency,
            mode,
        }
    }

    pub fn empty() -> Self {
        Self::from_parts(Vec::new(), BTreeSet::new(), GraphMode::Heterogeneous)
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, i: NodeId) -> Result<&GraphNode> {
        self.nodes.get(i.0).ok_or(Error::Index {
            what: "node",
            index: i.0,
            len: self.nodes.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Undirected edges as `(i, j, rel)` with `i < j`.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize, Relation)> + '_ {
        self.edges.iter().copied()
    }

    /// Both directions of every edge.
    pub fn directed_edges(&self) -> impl Iterator<Item = (usize, usize, Relation)> + '_ {
        self.edges
            .iter()
            .flat_map(|&(i, j, r)| [(i, j, r), (j, i, r)])
    }

    pub fn has_edge(&self, i: usize, j: usize, r: Relation) -> bool {
        self.edges.contains(&(i.min(j), i.max(j), r))
    }

    /// Neighbors of `i` in ascending id order, each with its relation set.
    pub fn neighbors(&self, i: NodeId) -> Result<&[(usize, Vec<Relation>)]> {
        self.adjacency
            .get(i.0)
            .map(Vec::as_slice)
            .ok_or(Error::Index {
                what: "node",
                index: i.0,
                len: self.nodes.len(),
            })
    }

    /// Passage number nodes in mention order.
    pub fn passage_numbers(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Number && n.source == Source::Passage)
    }

    pub fn stats(&self) -> GraphStats {
        let mut pairs = [0usize; 9];
        for &(_, _, r) in &self.edges {
            pairs[r.index()] += 1;
        }
        let n_entity = self
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Entity)
            .count();
        GraphStats {
            n_nodes: self.nodes.len(),
            n_number_nodes: self.nodes.len() - n_entity,
            n_entity_nodes: n_entity,
            n_edge_pairs: self.edges.len(),
            relations_used: pairs.iter().filter(|&&c| c > 0).count(),
            pairs_per_relation: Relation::ALL
                .iter()
                .map(|r| (r.as_str().to_string(), pairs[r.index()]))
                .collect(),
        }
    }

    pub fn to_export(&self) -> GraphExport {
        GraphExport {
            nodes: self
                .nodes
                .iter()
                .map(|n| ExportNode {
                    id: n.id.0,
                    kind: n.kind,
                    ntype: n.ntype,
                    source: n.source,
                    span: [n.token_span.0, n.token_span.1],
                    value: n.value,
                })
                .collect(),
            edges: self.edges.iter().map(|&(i, j, r)| (i, j, r)).collect(),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_export())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Node and per-relation edge-pair counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n_nodes: usize,
    pub n_number_nodes: usize,
    pub n_entity_nodes: usize,
    pub n_edge_pairs: usize,
    pub relations_used: usize,
    pub pairs_per_relation: Vec<(String, usize)>,
}

impl GraphStats {
    pub fn pairs(&self, r: Relation) -> usize {
        self.pairs_per_relation[r.index()].1
    }
}

pub fn graph_stats(g: &ReasoningGraph) -> GraphStats {
    g.stats()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportNode {
    pub id: usize,
    pub kind: NodeKind,
    pub ntype: Option<NumberType>,
    pub source: Source,
    pub span: [usize; 2],
    pub value: Option<f64>,
}

/// `{"nodes": [...], "edges": [[i, j, "REL"], ...]}` with one entry per
/// undirected pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<ExportNode>,
    pub edges: Vec<(usize, usize, Relation)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{annotate, AnnotatedPassage, NumberMention, TextAnnotation, Token};
    use proptest::prelude::*;

    fn single_number() -> AnnotatedPassage {
        AnnotatedPassage {
            question: TextAnnotation::default(),
            passage: TextAnnotation {
                tokens: vec![Token {
                    text: "7".into(),
                    char_start: 0,
                    char_end: 1,
                    sentence_id: 0,
                }],
                numbers: vec![NumberMention {
                    token_span: (0, 0),
                    value: 7.0,
                    ntype: NumberType::Number,
                    date: None,
                }],
                entities: vec![],
            },
        }
    }

    #[test]
    fn relation_has_nine_members() {
        assert_eq!(Relation::ALL.len(), 9);
        assert_eq!(Relation::of_type(NumberType::Yard), Relation::Yard);
        assert_eq!(Relation::EntDigit.as_str(), "ENT_DIGIT");
    }

    #[test]
    fn empty_annotation_gives_empty_graph() {
        let g = build_graph(&AnnotatedPassage::default());
        assert!(g.is_empty());
        let s = g.stats();
        assert_eq!(s.n_nodes, 0);
        assert_eq!(s.n_edge_pairs, 0);
        assert!(s.pairs_per_relation.iter().all(|(_, c)| *c == 0));
    }

    #[test]
    fn single_number_no_edges() {
        let g = build_graph(&single_number());
        assert_eq!(g.len(), 1);
        assert_eq!(g.undirected_edges().count(), 0);
        assert!(g.neighbors(NodeId(0)).unwrap().is_empty());
        assert!(g.neighbors(NodeId(1)).is_err());
    }

    #[test]
    fn entity_links_only_within_sentence() {
        let (ann, _) = annotate(
            "How many yards did Kasay kick?",
            "Carolina scored first with kicker John Kasay hitting a 45-yard field goal . \
             The Falcons took the lead with a 69-yard TD pass .",
        );
        let g = build_graph(&ann);
        let find_num = |v: f64| g.nodes().iter().position(|n| n.value == Some(v)).unwrap();
        let kasay = g
            .nodes()
            .iter()
            .position(|n| {
                n.kind == NodeKind::Entity
                    && n.source == Source::Passage
                    && ann.passage.span_text(n.token_span) == "John Kasay"
            })
            .unwrap();
        assert!(g.has_edge(kasay, find_num(45.0), Relation::EntDigit));
        assert!(!g.has_edge(kasay, find_num(69.0), Relation::EntDigit));
        assert!(g.has_edge(find_num(45.0), find_num(69.0), Relation::Yard));
        let nbrs = g.neighbors(NodeId(kasay)).unwrap();
        assert!(nbrs.iter().all(|(_, r)| r == &[Relation::EntDigit]));
    }

    #[test]
    fn question_entity_never_links_passage_number() {
        let (ann, _) = annotate(
            "Did Kasay kick 45 yards?",
            "Kasay kicked a 45-yard goal. Kasay won.",
        );
        let g = build_graph(&ann);
        for (i, j, r) in g.undirected_edges() {
            if r == Relation::EntDigit {
                assert_eq!(g.nodes()[i].source, g.nodes()[j].source);
            }
        }
        // the question's 45-yard joins the passage YARD clique
        let yards: Vec<_> = g
            .nodes()
            .iter()
            .filter(|n| n.ntype == Some(NumberType::Yard))
            .map(|n| n.id.0)
            .collect();
        assert_eq!(yards.len(), 2);
        assert!(g.has_edge(yards[0], yards[1], Relation::Yard));
    }

    #[test]
    fn homogeneous_mode_drops_entities_and_types() {
        let (ann, _) = annotate("q", "Smith ran 12 yards in 1999 and 3 Jones.");
        let g = build_graph_with(&ann, GraphMode::Homogeneous);
        let s = g.stats();
        assert_eq!(s.n_entity_nodes, 0);
        assert_eq!(s.relations_used, 1);
        assert_eq!(s.n_edge_pairs, 3);
    }

    fn arb_annotation() -> impl Strategy<Value = AnnotatedPassage> {
        let text = (
            prop::collection::vec((0usize..8, 0usize..3, any::<bool>()), 0..12),
            prop::collection::vec(0usize..3, 0..6),
        );
        (text.clone(), text).prop_map(|(p, q)| {
            let build = |(nums, ents): (Vec<(usize, usize, bool)>, Vec<usize>)| {
                // one token per mention; sentences assigned in order
                let mut items: Vec<(usize, Option<usize>)> = nums
                    .iter()
                    .map(|&(t, s, _)| (s, Some(t)))
                    .chain(ents.iter().map(|&s| (s, None)))
                    .collect();
                items.sort_by_key(|(s, _)| *s);
                let mut ta = TextAnnotation::default();
                for (k, (s, t)) in items.into_iter().enumerate() {
                    ta.tokens.push(Token {
                        text: "x".into(),
                        char_start: 2 * k,
                        char_end: 2 * k + 1,
                        sentence_id: s,
                    });
                    match t {
                        Some(t) => ta.numbers.push(NumberMention {
                            token_span: (k, k),
                            value: k as f64,
                            ntype: NumberType::ALL[t],
                            date: None,
                        }),
                        None => ta
                            .entities
                            .push(crate::annotate::EntityMention { token_span: (k, k) }),
                    }
                }
                ta
            };
            AnnotatedPassage {
                passage: build(p),
                question: build(q),
            }
        })
    }

    proptest! {
        #[test]
        fn structural_laws(ann in arb_annotation()) {
            prop_assert!(ann.validate().is_ok());
            let g = build_graph(&ann);
            prop_assert_eq!(&g, &build_graph(&ann));
            let directed: BTreeSet<_> = g.directed_edges().collect();
            for &(i, j, r) in &directed {
                prop_assert!(i != j);
                prop_assert!(directed.contains(&(j, i, r)));
                let (a, b) = (&g.nodes()[i], &g.nodes()[j]);
                match r {
                    Relation::EntDigit => prop_assert!(a.kind != b.kind),
                    _ => {
                        prop_assert!(a.kind == NodeKind::Number && b.kind == NodeKind::Number);
                        prop_assert_eq!(a.ntype, b.ntype);
                        prop_assert_eq!(Relation::of_type(a.ntype.unwrap()), r);
                    }
                }
            }
            let stats = g.stats();
            for t in NumberType::ALL {
                let k = g.nodes().iter().filter(|n| n.ntype == Some(t)).count();
                prop_assert_eq!(stats.pairs(Relation::of_type(t)), k * k.saturating_sub(1) / 2);
            }
            for i in 0..g.len() {
                let nbrs = g.neighbors(NodeId(i)).unwrap();
                prop_assert!(nbrs.windows(2).all(|w| w[0].0 < w[1].0));
            }
        }
    }
}

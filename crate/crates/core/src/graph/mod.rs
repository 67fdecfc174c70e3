//! Heterogeneous SRL graph: sentence-level nodes, argument nodes, typed
//! weights `A` and the predicate matrix `K`.
//!
//! Dense node order: question, then for each selected paragraph its title and
//! sentences, then argument nodes in order of first occurrence.

mod export;
pub mod pmi;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{QAInstance, SentenceRef, SrlAnnotation};

pub use export::{export_dot, export_structured, import_structured, ExportError};
pub use pmi::{compute_pmi_weights, PmiCounts};

pub const DEFAULT_PMI_WINDOW: usize = 10;
pub const DEFAULT_PMI_FLOOR: f64 = 0.1;

/// Merge key for argument nodes: normalized phrase plus role.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArgKey {
    pub phrase_norm: String,
    pub role: String,
}

impl ArgKey {
    pub fn new<S: AsRef<str>>(phrase: &[S], role: &str) -> Self {
        ArgKey {
            phrase_norm: normalize_phrase(phrase),
            role: role.to_string(),
        }
    }
}

/// Lowercase and collapse whitespace.
pub fn normalize_phrase<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .flat_map(|t| t.as_ref().split_whitespace())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    Question,
    Title { paragraph: usize },
    Sentence { paragraph: usize, sentence: usize },
    Argument { key: ArgKey },
}

impl NodeKind {
    pub fn is_doc(&self) -> bool {
        !matches!(self, NodeKind::Argument { .. })
    }
}

/// Where an argument occurs: a sentence and a half-open token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    pub sentence: SentenceRef,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub index: usize,
    #[serde(flatten)]
    pub kind: NodeKind,
    /// Sentence tokens for document nodes, phrase tokens for arguments.
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub occurrences: Vec<Occurrence>,
}

impl Node {
    pub fn role(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::Argument { key } => Some(&key.role),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// Rule 1: an argument occurs in a sentence (the question included).
    SentenceArgument,
    /// Rule 2: two context sentences share an argument.
    SentenceSentence,
    /// Rule 3: two arguments of one predicate.
    ArgumentArgument,
    /// Rule 4: the question shares an argument with a sentence.
    QuestionSentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
    pub weight: f64,
}

/// One predicate occurrence linking two arguments.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PredicateRef {
    pub sentence: SentenceRef,
    pub index: usize,
    pub word: String,
}

/// Symmetric map from argument pairs to the predicates linking them.
/// Absent pairs are the empty set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticMatrix {
    cells: BTreeMap<(usize, usize), Vec<PredicateRef>>,
}

impl SemanticMatrix {
    fn key(i: usize, j: usize) -> (usize, usize) {
        (i.min(j), i.max(j))
    }

    pub fn get(&self, i: usize, j: usize) -> &[PredicateRef] {
        self.cells
            .get(&Self::key(i, j))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn push(&mut self, i: usize, j: usize, p: PredicateRef) {
        self.cells.entry(Self::key(i, j)).or_default().push(p);
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Non-empty cells as `(i, j, predicates)` with `i < j`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &[PredicateRef])> {
        self.cells.iter().map(|(&(i, j), v)| (i, j, v.as_slice()))
    }

    /// Distinct predicate occurrences across every cell touching `i`.
    pub fn predicates_of(&self, i: usize) -> Vec<&PredicateRef> {
        let mut set = BTreeSet::new();
        for (&(a, b), v) in &self.cells {
            if a == i || b == i {
                set.extend(v.iter());
            }
        }
        set.into_iter().collect()
    }
}

/// Selected context the graph is built over.
#[derive(Debug, Clone, Copy)]
pub struct GraphInput<'a> {
    pub instance: &'a QAInstance,
    /// Paragraph indices in selection order.
    pub paragraphs: [usize; 2],
    pub srl: &'a SrlAnnotation,
}

impl GraphInput<'_> {
    fn sentence_refs(&self) -> Vec<SentenceRef> {
        let mut refs = vec![SentenceRef::Question];
        for &p in &self.paragraphs {
            for s in 0..self.instance.contexts[p].sentences.len() {
                refs.push(SentenceRef::Sentence {
                    paragraph: p,
                    sentence: s,
                });
            }
        }
        refs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub window: usize,
    pub pmi_floor: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            window: DEFAULT_PMI_WINDOW,
            pmi_floor: DEFAULT_PMI_FLOOR,
        }
    }
}

/// Document nodes followed by merged argument nodes.
pub fn build_nodes(input: &GraphInput) -> Vec<Node> {
    let inst = input.instance;
    let mut nodes = vec![Node {
        index: 0,
        kind: NodeKind::Question,
        tokens: inst.question.clone(),
        occurrences: vec![],
    }];
    for &p in &input.paragraphs {
        let para = &inst.contexts[p];
        nodes.push(Node {
            index: nodes.len(),
            kind: NodeKind::Title { paragraph: p },
            tokens: para.title.clone(),
            occurrences: vec![],
        });
        for (s, toks) in para.sentences.iter().enumerate() {
            nodes.push(Node {
                index: nodes.len(),
                kind: NodeKind::Sentence {
                    paragraph: p,
                    sentence: s,
                },
                tokens: toks.clone(),
                occurrences: vec![],
            });
        }
    }
    let mut by_key: HashMap<ArgKey, usize> = HashMap::new();
    for r in input.sentence_refs() {
        let toks = inst.sentence(r).expect("selected sentence exists");
        for frame in input.srl.frames(r) {
            for arg in &frame.arguments {
                let phrase = &toks[arg.start..arg.end];
                let key = ArgKey::new(phrase, &arg.role);
                let occ = Occurrence {
                    sentence: r,
                    start: arg.start,
                    end: arg.end,
                };
                let idx = *by_key.entry(key.clone()).or_insert_with(|| {
                    nodes.push(Node {
                        index: nodes.len(),
                        kind: NodeKind::Argument { key },
                        tokens: phrase.to_vec(),
                        occurrences: vec![],
                    });
                    nodes.len() - 1
                });
                if !nodes[idx].occurrences.contains(&occ) {
                    nodes[idx].occurrences.push(occ);
                }
            }
        }
    }
    nodes
}

fn doc_index(nodes: &[Node]) -> HashMap<SentenceRef, usize> {
    nodes
        .iter()
        .filter_map(|n| match n.kind {
            NodeKind::Question => Some((SentenceRef::Question, n.index)),
            NodeKind::Sentence {
                paragraph,
                sentence,
            } => Some((
                SentenceRef::Sentence {
                    paragraph,
                    sentence,
                },
                n.index,
            )),
            _ => None,
        })
        .collect()
}

fn arg_index(nodes: &[Node]) -> HashMap<&ArgKey, usize> {
    nodes
        .iter()
        .filter_map(|n| match &n.kind {
            NodeKind::Argument { key } => Some((key, n.index)),
            _ => None,
        })
        .collect()
}

/// Unique argument nodes of every frame in the selected context, with the
/// frame's sentence and predicate position.
fn frame_members(nodes: &[Node], input: &GraphInput) -> Vec<(SentenceRef, usize, String, Vec<usize>)> {
    let args = arg_index(nodes);
    let mut out = Vec::new();
    for r in input.sentence_refs() {
        let toks = input.instance.sentence(r).expect("selected sentence exists");
        for frame in input.srl.frames(r) {
            let mut members: Vec<usize> = Vec::new();
            for arg in &frame.arguments {
                let key = ArgKey::new(&toks[arg.start..arg.end], &arg.role);
                let i = args[&key];
                if !members.contains(&i) {
                    members.push(i);
                }
            }
            out.push((r, frame.predicate, toks[frame.predicate].clone(), members));
        }
    }
    out
}

/// Edge set under the four construction rules, keyed by `(min, max)`.
pub fn build_edges(nodes: &[Node], input: &GraphInput) -> BTreeMap<(usize, usize), EdgeKind> {
    let docs = doc_index(nodes);
    let mut edges = BTreeMap::new();
    for n in nodes.iter().filter(|n| !n.kind.is_doc()) {
        let sents: BTreeSet<usize> = n.occurrences.iter().map(|o| docs[&o.sentence]).collect();
        for &d in &sents {
            edges.insert((d.min(n.index), d.max(n.index)), EdgeKind::SentenceArgument);
        }
        let sents: Vec<usize> = sents.into_iter().collect();
        for (x, &a) in sents.iter().enumerate() {
            for &b in &sents[x + 1..] {
                let kind = if a == 0 {
                    EdgeKind::QuestionSentence
                } else {
                    EdgeKind::SentenceSentence
                };
                edges.insert((a, b), kind);
            }
        }
    }
    for (_, _, _, members) in frame_members(nodes, input) {
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[x + 1..] {
                edges.insert((a.min(b), a.max(b)), EdgeKind::ArgumentArgument);
            }
        }
    }
    edges
}

/// Predicate occurrences for every argument pair sharing a frame.
pub fn build_k(nodes: &[Node], input: &GraphInput) -> SemanticMatrix {
    let mut k = SemanticMatrix::default();
    for (r, pred, word, members) in frame_members(nodes, input) {
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[x + 1..] {
                k.push(
                    a,
                    b,
                    PredicateRef {
                        sentence: r,
                        index: pred,
                        word: word.clone(),
                    },
                );
            }
        }
    }
    k
}

/// Token stream of the question followed by each selected paragraph.
pub fn context_stream(nodes: &[Node]) -> Vec<String> {
    nodes
        .iter()
        .filter(|n| n.kind.is_doc())
        .flat_map(|n| n.tokens.iter().map(|t| t.to_lowercase()))
        .collect()
}

pub fn build_graph(input: &GraphInput, cfg: &GraphConfig) -> HeteroGraph {
    let nodes = build_nodes(input);
    let kinds = build_edges(&nodes, input);
    let k = build_k(&nodes, input);
    let stream = context_stream(&nodes);
    let arg_pairs: Vec<(usize, usize)> = kinds
        .iter()
        .filter(|(_, &kind)| kind == EdgeKind::ArgumentArgument)
        .map(|(&p, _)| p)
        .collect();
    let phrases: HashMap<usize, Vec<String>> = arg_pairs
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .map(|i| {
            let NodeKind::Argument { key } = &nodes[i].kind else {
                unreachable!("argument edge endpoint")
            };
            (i, key.phrase_norm.split(' ').map(String::from).collect())
        })
        .collect();
    let weights = compute_pmi_weights(&arg_pairs, &phrases, &stream, cfg.window, cfg.pmi_floor);
    let edges = kinds
        .into_iter()
        .map(|((a, b), kind)| Edge {
            a,
            b,
            kind,
            weight: if kind == EdgeKind::ArgumentArgument {
                weights[&(a, b)]
            } else {
                1.0
            },
        })
        .collect();
    HeteroGraph::from_parts(nodes, edges, k)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphRepr {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    semantic: SemanticMatrixRepr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SemanticCell {
    a: usize,
    b: usize,
    predicates: Vec<PredicateRef>,
}

type SemanticMatrixRepr = Vec<SemanticCell>;

/// The built graph with cached lookups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "GraphRepr", into = "GraphRepr")]
pub struct HeteroGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    k: SemanticMatrix,
    doc_count: usize,
    weight_index: HashMap<(usize, usize), usize>,
    doc_adj: Vec<Vec<usize>>,
}

impl From<GraphRepr> for HeteroGraph {
    fn from(r: GraphRepr) -> Self {
        let mut k = SemanticMatrix::default();
        for c in r.semantic {
            for p in c.predicates {
                k.push(c.a, c.b, p);
            }
        }
        HeteroGraph::from_parts(r.nodes, r.edges, k)
    }
}

impl From<HeteroGraph> for GraphRepr {
    fn from(g: HeteroGraph) -> Self {
        let semantic = g
            .k
            .iter()
            .map(|(a, b, p)| SemanticCell {
                a,
                b,
                predicates: p.to_vec(),
            })
            .collect();
        GraphRepr {
            nodes: g.nodes,
            edges: g.edges,
            semantic,
        }
    }
}

impl HeteroGraph {
    pub fn from_parts(nodes: Vec<Node>, mut edges: Vec<Edge>, k: SemanticMatrix) -> Self {
        for e in &mut edges {
            if e.a > e.b {
                std::mem::swap(&mut e.a, &mut e.b);
            }
        }
        edges.sort_by_key(|e| (e.a, e.b));
        let doc_count = nodes.iter().take_while(|n| n.kind.is_doc()).count();
        let weight_index = edges
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.a, e.b), i))
            .collect();
        let mut doc_adj = vec![Vec::new(); doc_count];
        for e in &edges {
            if e.a < doc_count && e.b < doc_count {
                doc_adj[e.a].push(e.b);
                doc_adj[e.b].push(e.a);
            }
        }
        for l in &mut doc_adj {
            l.sort_unstable();
        }
        HeteroGraph {
            nodes,
            edges,
            k,
            doc_count,
            weight_index,
            doc_adj,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn arg_count(&self) -> usize {
        self.nodes.len() - self.doc_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn semantic(&self) -> &SemanticMatrix {
        &self.k
    }

    /// `A[i][j]`; zero when there is no edge.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weight_index
            .get(&(i.min(j), i.max(j)))
            .map_or(0.0, |&e| self.edges[e].weight)
    }

    pub fn edge_kind(&self, i: usize, j: usize) -> Option<EdgeKind> {
        self.weight_index
            .get(&(i.min(j), i.max(j)))
            .map(|&e| self.edges[e].kind)
    }

    /// Dense symmetric `A` with zero diagonal.
    pub fn adjacency(&self) -> Array2<f64> {
        let n = self.nodes.len();
        let mut a = Array2::zeros((n, n));
        for e in &self.edges {
            a[[e.a, e.b]] = e.weight;
            a[[e.b, e.a]] = e.weight;
        }
        a
    }

    /// Sentence-level neighbor lists, indexed by document node.
    pub fn doc_adjacency(&self) -> &[Vec<usize>] {
        &self.doc_adj
    }

    pub fn doc_node(&self, r: SentenceRef) -> Option<usize> {
        self.nodes[..self.doc_count].iter().position(|n| match (&n.kind, r) {
            (NodeKind::Question, SentenceRef::Question) => true,
            (
                NodeKind::Sentence {
                    paragraph,
                    sentence,
                },
                SentenceRef::Sentence {
                    paragraph: p,
                    sentence: s,
                },
            ) => *paragraph == p && *sentence == s,
            _ => false,
        })
    }

    /// Context token stream seen by the answer head: every document node after
    /// the question, in index order. Returns tokens and the owning node of each.
    pub fn answer_context(&self) -> (Vec<String>, Vec<(usize, usize)>) {
        let mut toks = Vec::new();
        let mut owner = Vec::new();
        for n in &self.nodes[1..self.doc_count] {
            for (off, t) in n.tokens.iter().enumerate() {
                toks.push(t.clone());
                owner.push((n.index, off));
            }
        }
        (toks, owner)
    }
}

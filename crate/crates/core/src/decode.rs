//! Inference: maximum spanning arborescence over tree scores, thresholded
//! extra edges, relation labeling and assembly into a connected graph.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use thiserror::Error;

use crate::baseline::{self, RepairPolicy};
use crate::graph::{CollapsedGraph, Edge};
use crate::scorer::{ArcScores, Model, RelScores};
use crate::spanning::SpanningTree;
use crate::Scalar;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("score matrix contains a non-finite value at ({head}, {dep})")]
    NonFinite { head: usize, dep: usize },

    #[error("cannot decode an empty sentence")]
    EmptySentence,
}

/// Decoding regime.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    /// Spanning tree from the tree scorer plus thresholded extra edges.
    #[default]
    TreeGraph,
    /// Thresholded edges only, followed by connectivity repair.
    GraphFix,
}

impl FromStr for DecodeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tree-graph" => Ok(DecodeMode::TreeGraph),
            "graph-fix" => Ok(DecodeMode::GraphFix),
            _ => Err(format!("unknown mode '{}' (expected tree-graph or graph-fix)", s)),
        }
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeMode::TreeGraph => "tree-graph",
            DecodeMode::GraphFix => "graph-fix",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DecodeOptions {
    pub mode: DecodeMode,
    /// Allow only one child of the root in the spanning tree.
    pub single_root: bool,
    /// Connectivity repair in graph-fix mode.
    pub repair: RepairPolicy,
}

/// Maximum spanning arborescence rooted at node 0.
///
/// The root may take several children. Runs Tarjan's contraction phase
/// on a dense graph with Camerini et al.'s forest-based expansion, in
/// O(n^2) time.
pub fn mst_decode<T: Scalar>(scores: &ArcScores<T>) -> Result<SpanningTree, DecodeError> {
    let n = scores.len();
    if n == 0 {
        return Err(DecodeError::EmptySentence);
    }
    check_finite(scores)?;
    Ok(SpanningTree::unlabeled(chu_liu_edmonds(scores.square())))
}

/// Maximum spanning arborescence in which the root has exactly one child.
pub fn mst_decode_single_root<T: Scalar>(scores: &ArcScores<T>) -> Result<SpanningTree, DecodeError> {
    let n = scores.len();
    if n == 0 {
        return Err(DecodeError::EmptySentence);
    }
    check_finite(scores)?;

    // Penalize root attachments by more than any tree's score range so
    // the optimum uses as few (i.e. one) root edges as possible.
    let sq = scores.square();
    let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
    for h in 0..=n {
        for d in 1..=n {
            if h != d {
                lo = lo.min(sq[[h, d]]);
                hi = hi.max(sq[[h, d]]);
            }
        }
    }
    let penalty = (hi - lo + T::one()) * T::from_usize(n + 1).expect("size");
    let mut adjusted = sq.clone();
    for d in 1..=n {
        adjusted[[0, d]] = adjusted[[0, d]] - penalty;
    }
    Ok(SpanningTree::unlabeled(chu_liu_edmonds(&adjusted)))
}

fn check_finite<T: Scalar>(scores: &ArcScores<T>) -> Result<(), DecodeError> {
    let n = scores.len();
    for head in 0..=n {
        for dep in 1..=n {
            if head != dep && !scores.get(head, dep).is_finite() {
                return Err(DecodeError::NonFinite { head, dep });
            }
        }
    }
    Ok(())
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(size: usize) -> Self {
        UnionFind((0..size).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.0[root] != root {
            root = self.0[root];
        }
        let mut node = x;
        while self.0[node] != root {
            let next = self.0[node];
            self.0[node] = root;
            node = next;
        }
        root
    }

    /// Attach the set of `child` below `parent`.
    fn attach(&mut self, child: usize, parent: usize) {
        let c = self.find(child);
        let p = self.find(parent);
        if c != p {
            self.0[c] = p;
        }
    }
}

#[derive(Clone, Copy)]
struct InEdge<T> {
    score: T,
    src: usize,
    dst: usize,
}

/// Heads of words `1..n` for square matrix `scores[head, dep]`.
fn chu_liu_edmonds<T: Scalar>(scores: &Array2<T>) -> Vec<usize> {
    let size = scores.nrows();
    let max_nodes = 2 * size;

    // best incoming edge from each original source, per super-node
    let mut incoming: Vec<Vec<Option<InEdge<T>>>> = Vec::with_capacity(max_nodes);
    for dst in 0..size {
        incoming.push(
            (0..size)
                .map(|src| {
                    (dst != 0 && src != dst).then(|| InEdge {
                        score: scores[[src, dst]],
                        src,
                        dst,
                    })
                })
                .collect(),
        );
    }

    let mut strong = UnionFind::new(max_nodes);
    let mut weak = UnionFind::new(max_nodes);
    let mut enter: Vec<Option<(InEdge<T>, usize)>> = vec![None; max_nodes];
    let mut cycle_edges: Vec<Vec<usize>> = vec![Vec::new(); max_nodes];

    let mut forest_edge: Vec<(usize, usize)> = Vec::new();
    let mut forest_parent: Vec<Option<usize>> = Vec::new();
    let mut leaf = vec![usize::MAX; size];

    let mut next_node = size;
    let mut queue: Vec<usize> = (1..size).rev().collect();

    while let Some(v) = queue.pop() {
        let mut best: Option<InEdge<T>> = None;
        for src in 0..size {
            if strong.find(src) == v {
                continue;
            }
            if let Some(e) = incoming[v][src] {
                if best.map_or(true, |b| e.score > b.score) {
                    best = Some(e);
                }
            }
        }
        let best = best.expect("the root reaches every node");

        let f = forest_edge.len();
        forest_edge.push((best.src, best.dst));
        forest_parent.push(None);
        for &child in &cycle_edges[v] {
            forest_parent[child] = Some(f);
        }
        if v < size {
            leaf[v] = f;
        }
        enter[v] = Some((best, f));

        let src_weak = weak.find(best.src);
        if src_weak != weak.find(v) {
            weak.attach(v, src_weak);
            continue;
        }

        // contract the cycle closed by `best`
        let mut members = vec![v];
        let mut w = strong.find(best.src);
        while w != v {
            members.push(w);
            w = strong.find(enter[w].expect("cycle member has an edge").0.src);
        }

        let c = next_node;
        next_node += 1;
        let mut merged: Vec<Option<InEdge<T>>> = vec![None; size];
        for &m in &members {
            let offset = enter[m].expect("cycle member has an edge").0.score;
            for src in 0..size {
                if let Some(e) = incoming[m][src] {
                    let s = strong.find(src);
                    if members.contains(&s) {
                        continue;
                    }
                    let adjusted = InEdge {
                        score: e.score - offset,
                        ..e
                    };
                    if merged[src].map_or(true, |b| adjusted.score > b.score) {
                        merged[src] = Some(adjusted);
                    }
                }
            }
        }
        incoming.push(merged);
        cycle_edges[c] = members.iter().map(|&m| enter[m].expect("edge").1).collect();
        for &m in &members {
            strong.attach(m, c);
            weak.attach(m, c);
        }
        // keep the weak representative of the contracted set at `c`
        let rep = weak.find(c);
        weak.0[rep] = c;
        weak.0[c] = c;
        queue.push(c);
    }

    // expansion
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); forest_edge.len()];
    let mut roots = Vec::new();
    for (f, parent) in forest_parent.iter().enumerate() {
        match parent {
            Some(p) => children[*p].push(f),
            None => roots.push(f),
        }
    }

    let mut removed = vec![false; forest_edge.len()];
    let mut heads = vec![0usize; size - 1];
    roots.reverse();
    while let Some(f) = roots.pop() {
        if removed[f] {
            continue;
        }
        let (src, dst) = forest_edge[f];
        heads[dst - 1] = src;

        let mut path = Vec::new();
        let mut node = leaf[dst];
        loop {
            removed[node] = true;
            path.push(node);
            if node == f {
                break;
            }
            node = forest_parent[node].expect("path from leaf reaches the chosen edge");
        }
        for &p in path.iter().rev() {
            for &child in children[p].iter().rev() {
                if !removed[child] {
                    roots.push(child);
                }
            }
        }
    }

    heads
}

/// Pairs whose extra-edge probability is at least 0.5 (score >= 0).
pub fn edge_decode<T: Scalar>(scores: &ArcScores<T>) -> Vec<(usize, usize)> {
    let n = scores.len();
    let mut edges = Vec::new();
    for head in 0..=n {
        for dep in 1..=n {
            if head != dep && scores.get(head, dep) >= T::zero() {
                edges.push((head, dep));
            }
        }
    }
    edges
}

/// Index of the first maximum.
pub fn argmax<T: Scalar>(values: impl IntoIterator<Item = T>) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Most probable label index of each edge; ties go to the earlier label.
pub fn label_edges<T: Scalar>(rel: &RelScores<T>, edges: &[(usize, usize)]) -> Vec<(usize, usize, usize)> {
    edges
        .iter()
        .map(|&(h, d)| {
            let label = argmax(rel.get(h, d)).expect("at least one label");
            (h, d, label)
        })
        .collect()
}

/// Union of the tree and the extra edges. An extra edge on a tree arc is
/// dropped (the tree label wins). Returns the graph and the number of
/// such collisions.
pub fn assemble(tree: &SpanningTree, extra: &[Edge]) -> (CollapsedGraph, usize) {
    let mut graph = CollapsedGraph::new(tree.len());
    let tree_arcs: BTreeSet<(usize, usize)> = tree.heads().iter().enumerate().map(|(j, &h)| (h, j + 1)).collect();
    for e in tree.edges() {
        graph.add_edge(e).expect("tree edges are valid");
    }
    let mut collisions = 0;
    for e in extra {
        if tree_arcs.contains(&(e.head.major, e.dep.major)) {
            collisions += 1;
            continue;
        }
        graph.add_edge(e.clone()).expect("extra edges are within bounds");
    }
    (graph, collisions)
}

/// Decoder output for one sentence, with labels from the model's label
/// vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Parse {
    pub graph: CollapsedGraph,
    /// Labeled spanning tree (tree-graph mode only).
    pub tree: Option<SpanningTree>,
    /// Extra edges dropped because they coincided with tree arcs.
    pub collisions: usize,
    /// Edges added by connectivity repair (graph-fix mode only).
    pub repaired: usize,
}

pub fn parse_sentence<T: Scalar, S: AsRef<str>>(
    model: &Model<T>,
    words: &[S],
    options: DecodeOptions,
) -> Result<Parse, DecodeError> {
    if words.is_empty() {
        return Err(DecodeError::EmptySentence);
    }
    let scores = model.score_sentence(words);

    match options.mode {
        DecodeMode::GraphFix => {
            let graph = baseline::graph_only_decode_scores(model, &scores)?;
            let (graph, repaired) = baseline::repair(options.repair, &graph, &scores, &model.labels)?;
            Ok(Parse {
                graph,
                tree: None,
                collisions: 0,
                repaired,
            })
        }
        DecodeMode::TreeGraph => {
            let mut tree = if options.single_root {
                mst_decode_single_root(&scores.tree)?
            } else {
                mst_decode(&scores.tree)?
            };
            debug_assert!(tree.is_tree());

            let tree_arcs: Vec<(usize, usize)> = tree.heads().iter().enumerate().map(|(j, &h)| (h, j + 1)).collect();
            for (_, d, l) in label_edges(&scores.rel, &tree_arcs) {
                tree.set_label(d, model.labels[l].clone());
            }

            check_finite(&scores.graph)?;
            let extra: Vec<Edge> = label_edges(&scores.rel, &edge_decode(&scores.graph))
                .into_iter()
                .map(|(h, d, l)| Edge::words(h, d, model.labels[l].clone()))
                .collect();
            let (graph, collisions) = assemble(&tree, &extra);
            if collisions > 0 {
                log::debug!("W-COLLIDE {} extra edge(s) coincided with tree arcs", collisions);
            }
            Ok(Parse {
                graph,
                tree: Some(tree),
                collisions,
                repaired: 0,
            })
        }
    }
}

//! Enhanced dependency graphs and the transforms applied to them before
//! parsing: collapsing paths through empty nodes and merging parallel
//! relations into composite labels.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::ops::Deref;

use thiserror::Error;

use crate::conllu::NodeId;

/// Separator between the labels of a collapsed empty-node path.
pub const PATH_SEPARATOR: char = '>';

/// Separator between the labels of merged parallel edges.
pub const MERGE_SEPARATOR: char = '+';

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),

    #[error("edge {head} -> {dep} points into the root")]
    EdgeIntoRoot { head: NodeId, dep: NodeId },

    #[error("edge {head} -> {dep} references a node outside the graph")]
    UnknownNode { head: NodeId, dep: NodeId },

    #[error("cycle among empty nodes through {0}")]
    EmptyNodeCycle(NodeId),

    #[error("collapsed graph cannot contain empty node {0}")]
    EmptyNodeInCollapsed(NodeId),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

/// A labeled, directed dependency edge.
///
/// Edges order by dependent first, then head, then label; this is the
/// order in which the DEPS column lists them.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub head: NodeId,
    pub dep: NodeId,
    pub label: String,
}

impl Edge {
    pub fn new(head: NodeId, dep: NodeId, label: impl Into<String>) -> Self {
        Edge {
            head,
            dep,
            label: label.into(),
        }
    }

    /// Edge between two surface words (or the root and a word).
    pub fn words(head: usize, dep: usize, label: impl Into<String>) -> Self {
        Edge::new(NodeId::word(head), NodeId::word(dep), label)
    }
}

impl Ord for Edge {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.dep, self.head, &self.label).cmp(&(other.dep, other.head, &other.label))
    }
}

impl PartialOrd for Edge {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -{}-> {}", self.head, self.label, self.dep)
    }
}

/// Labeled directed graph over the root, `n` surface words and optional
/// empty nodes. Heads may repeat, cycles are allowed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EnhancedGraph {
    n: usize,
    empty_nodes: Vec<NodeId>,
    edges: BTreeSet<Edge>,
}

impl EnhancedGraph {
    pub fn new(n: usize) -> Self {
        EnhancedGraph {
            n,
            empty_nodes: Vec::new(),
            edges: BTreeSet::new(),
        }
    }

    pub fn with_empty_nodes(n: usize, mut empty_nodes: Vec<NodeId>) -> Self {
        empty_nodes.sort();
        empty_nodes.dedup();
        EnhancedGraph {
            n,
            empty_nodes,
            edges: BTreeSet::new(),
        }
    }

    /// Number of surface words.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn empty_nodes(&self) -> &[NodeId] {
        &self.empty_nodes
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        if id.is_empty_node() {
            self.empty_nodes.binary_search(&id).is_ok()
        } else {
            id.major <= self.n
        }
    }

    /// All nodes except the root, in file order.
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut nodes: Vec<NodeId> = (1..=self.n).map(NodeId::word).collect();
        nodes.extend(self.empty_nodes.iter().copied());
        nodes.sort();
        nodes
    }

    pub fn add_edge(&mut self, edge: Edge) -> Result<bool, GraphError> {
        if edge.head == edge.dep {
            return Err(GraphError::SelfLoop(edge.dep));
        }
        if edge.dep.is_root() {
            return Err(GraphError::EdgeIntoRoot {
                head: edge.head,
                dep: edge.dep,
            });
        }
        if !self.contains_node(edge.head) || !self.contains_node(edge.dep) {
            return Err(GraphError::UnknownNode {
                head: edge.head,
                dep: edge.dep,
            });
        }
        Ok(self.edges.insert(edge))
    }

    pub fn remove_edge(&mut self, edge: &Edge) -> bool {
        self.edges.remove(edge)
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_edge(&self, edge: &Edge) -> bool {
        self.edges.contains(edge)
    }

    pub fn contains_arc(&self, head: NodeId, dep: NodeId) -> bool {
        self.incoming(dep).any(|e| e.head == head)
    }

    /// Incoming edges of `dep`, ordered by head then label.
    pub fn incoming(&self, dep: NodeId) -> impl Iterator<Item = &Edge> {
        let lo = Edge::new(NodeId::ROOT, dep, "");
        self.edges.range(lo..).take_while(move |e| e.dep == dep)
    }

    pub fn outgoing(&self, head: NodeId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.head == head)
    }

    /// Replace all labels through `f`, keeping the edge structure.
    pub fn map_labels(&self, mut f: impl FnMut(&Edge) -> String) -> EnhancedGraph {
        EnhancedGraph {
            n: self.n,
            empty_nodes: self.empty_nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| Edge::new(e.head, e.dep, f(e)))
                .collect(),
        }
    }

    /// Nodes reachable from the root along edge direction.
    pub fn reachable_from_root(&self) -> BTreeSet<NodeId> {
        let mut adjacency: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for e in &self.edges {
            adjacency.entry(e.head).or_default().push(e.dep);
        }

        let mut seen = BTreeSet::new();
        seen.insert(NodeId::ROOT);
        let mut queue = VecDeque::from([NodeId::ROOT]);
        while let Some(node) = queue.pop_front() {
            for &next in adjacency.get(&node).into_iter().flatten() {
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        seen
    }
}

/// Enhanced graph over the root and surface words only.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CollapsedGraph(EnhancedGraph);

impl CollapsedGraph {
    pub fn new(n: usize) -> Self {
        CollapsedGraph(EnhancedGraph::new(n))
    }

    pub fn from_graph(graph: EnhancedGraph) -> Result<Self, GraphError> {
        if let Some(&node) = graph.empty_nodes.first() {
            return Err(GraphError::EmptyNodeInCollapsed(node));
        }
        Ok(CollapsedGraph(graph))
    }

    pub fn add_edge(&mut self, edge: Edge) -> Result<bool, GraphError> {
        self.0.add_edge(edge)
    }

    pub fn add_arc(&mut self, head: usize, dep: usize, label: impl Into<String>) -> Result<bool, GraphError> {
        self.0.add_edge(Edge::words(head, dep, label))
    }

    pub fn map_labels(&self, f: impl FnMut(&Edge) -> String) -> CollapsedGraph {
        CollapsedGraph(self.0.map_labels(f))
    }

    pub fn into_inner(self) -> EnhancedGraph {
        self.0
    }
}

impl Deref for CollapsedGraph {
    type Target = EnhancedGraph;

    fn deref(&self) -> &EnhancedGraph {
        &self.0
    }
}

impl FromIterator<Edge> for CollapsedGraph {
    /// Collects surface edges; the word count is the largest index seen.
    fn from_iter<I: IntoIterator<Item = Edge>>(iter: I) -> Self {
        let edges: Vec<Edge> = iter.into_iter().collect();
        let n = edges
            .iter()
            .map(|e| e.head.major.max(e.dep.major))
            .max()
            .unwrap_or(0);
        let mut g = CollapsedGraph::new(n);
        for e in edges {
            g.add_edge(e).expect("valid surface edge");
        }
        g
    }
}

/// Result of a root-reachability check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Connectivity {
    pub unreachable: BTreeSet<NodeId>,
}

impl Connectivity {
    pub fn is_connected(&self) -> bool {
        self.unreachable.is_empty()
    }
}

/// Check that every node is reachable from the root following edge
/// direction.
pub fn check_connectivity(graph: &EnhancedGraph) -> Connectivity {
    let reachable = graph.reachable_from_root();
    Connectivity {
        unreachable: graph
            .nodes()
            .into_iter()
            .filter(|node| !reachable.contains(node))
            .collect(),
    }
}

/// Replace every path `head -l1-> e1 -l2-> ... -lk-> dep` whose inner
/// nodes are all empty nodes by one edge labeled `l1>l2>...>lk`.
///
/// Paths that never reach a surface word are dropped.
pub fn collapse_empty_nodes(graph: &EnhancedGraph) -> Result<CollapsedGraph, GraphError> {
    let mut collapsed = CollapsedGraph::new(graph.n);
    if graph.empty_nodes.is_empty() {
        collapsed.0.edges = graph.edges.clone();
        return Ok(collapsed);
    }

    let mut from_empty: BTreeMap<NodeId, Vec<&Edge>> = BTreeMap::new();
    for e in &graph.edges {
        if e.head.is_empty_node() {
            from_empty.entry(e.head).or_default().push(e);
        }
    }

    let mut dropped = 0;
    for e in graph.edges.iter().filter(|e| !e.head.is_empty_node()) {
        if !e.dep.is_empty_node() {
            collapsed.0.edges.insert(e.clone());
            continue;
        }

        let mut path_nodes = vec![e.dep];
        let mut labels = vec![e.label.as_str()];
        let before = collapsed.0.edges.len();
        extend_paths(e.head, &from_empty, &mut path_nodes, &mut labels, &mut collapsed)?;
        if collapsed.0.edges.len() == before {
            dropped += 1;
        }
    }

    if dropped > 0 {
        log::warn!("W-COLLAPSE dropped {} empty-node path(s) without a surface word", dropped);
    }

    Ok(collapsed)
}

fn extend_paths<'a>(
    head: NodeId,
    from_empty: &BTreeMap<NodeId, Vec<&'a Edge>>,
    path_nodes: &mut Vec<NodeId>,
    labels: &mut Vec<&'a str>,
    out: &mut CollapsedGraph,
) -> Result<(), GraphError> {
    let last = *path_nodes.last().expect("nonempty path");
    for next in from_empty.get(&last).into_iter().flatten() {
        if path_nodes.contains(&next.dep) {
            return Err(GraphError::EmptyNodeCycle(next.dep));
        }

        labels.push(&next.label);
        if next.dep.is_empty_node() {
            path_nodes.push(next.dep);
            extend_paths(head, from_empty, path_nodes, labels, out)?;
            path_nodes.pop();
        } else if next.dep != head {
            let label = labels.join(&PATH_SEPARATOR.to_string());
            out.0.edges.insert(Edge::new(head, next.dep, label));
        }
        labels.pop();
    }
    Ok(())
}

/// Replace edges sharing a (head, dependent) pair by one edge whose label
/// joins the sorted original labels with `+`.
pub fn merge_parallel_edges(graph: &CollapsedGraph) -> CollapsedGraph {
    let mut grouped: BTreeMap<(NodeId, NodeId), Vec<&str>> = BTreeMap::new();
    for e in graph.edges() {
        grouped.entry((e.head, e.dep)).or_default().push(&e.label);
    }

    let mut merged = CollapsedGraph::new(graph.len());
    for ((head, dep), mut labels) in grouped {
        labels.sort_unstable();
        let label = labels.join(&MERGE_SEPARATOR.to_string());
        merged.0.edges.insert(Edge::new(head, dep, label));
    }
    merged
}

/// Inverse of [`merge_parallel_edges`].
pub fn split_parallel_edges(graph: &CollapsedGraph) -> CollapsedGraph {
    let mut split = CollapsedGraph::new(graph.len());
    for e in graph.edges() {
        for label in e.label.split(MERGE_SEPARATOR) {
            split.0.edges.insert(Edge::new(e.head, e.dep, label));
        }
    }
    split
}

#[cfg(test)]
mod tests {
    use super::*;

    fn figure_one() -> CollapsedGraph {
        // the book that I read
        [
            Edge::words(2, 1, "det"),
            Edge::words(0, 2, "root"),
            Edge::words(5, 2, "obj"),
            Edge::words(2, 3, "ref"),
            Edge::words(5, 4, "nsubj"),
            Edge::words(2, 5, "acl:relcl"),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn figure_one_is_connected() {
        assert!(check_connectivity(&figure_one()).is_connected());
    }

    #[test]
    fn edgeless_single_word_is_unreachable() {
        let g = EnhancedGraph::new(1);
        let c = check_connectivity(&g);
        assert_eq!(c.unreachable, BTreeSet::from([NodeId::word(1)]));
    }

    #[test]
    fn broken_chain_reports_tail() {
        let mut g = CollapsedGraph::new(2);
        g.add_arc(0, 1, "root").unwrap();
        assert_eq!(
            check_connectivity(&g).unreachable,
            BTreeSet::from([NodeId::word(2)])
        );
        g.add_arc(1, 2, "obj").unwrap();
        assert!(check_connectivity(&g).is_connected());
    }

    #[test]
    fn rejects_self_loops_and_root_dependents() {
        let mut g = EnhancedGraph::new(2);
        assert_eq!(
            g.add_edge(Edge::words(1, 1, "x")),
            Err(GraphError::SelfLoop(NodeId::word(1)))
        );
        assert!(matches!(
            g.add_edge(Edge::words(1, 0, "x")),
            Err(GraphError::EdgeIntoRoot { .. })
        ));
        assert!(matches!(
            g.add_edge(Edge::words(1, 3, "x")),
            Err(GraphError::UnknownNode { .. })
        ));
    }

    #[test]
    fn collapses_single_empty_node() {
        let e = NodeId::empty(5, 1);
        let mut g = EnhancedGraph::with_empty_nodes(6, vec![e]);
        g.add_edge(Edge::words(0, 2, "root")).unwrap();
        g.add_edge(Edge::new(NodeId::word(2), e, "conj")).unwrap();
        g.add_edge(Edge::new(e, NodeId::word(6), "nsubj")).unwrap();

        let c = collapse_empty_nodes(&g).unwrap();
        let edges: Vec<_> = c.edges().cloned().collect();
        assert_eq!(
            edges,
            vec![Edge::words(0, 2, "root"), Edge::words(2, 6, "conj>nsubj")]
        );
        assert!(c.empty_nodes().is_empty());
    }

    #[test]
    fn collapse_is_identity_without_empty_nodes() {
        let g = figure_one();
        assert_eq!(collapse_empty_nodes(&g).unwrap(), g);
    }

    #[test]
    fn fan_out_shares_prefix() {
        let e = NodeId::empty(1, 1);
        let mut g = EnhancedGraph::with_empty_nodes(3, vec![e]);
        g.add_edge(Edge::new(NodeId::word(1), e, "conj")).unwrap();
        g.add_edge(Edge::new(e, NodeId::word(2), "nsubj")).unwrap();
        g.add_edge(Edge::new(e, NodeId::word(3), "obj")).unwrap();

        let c = collapse_empty_nodes(&g).unwrap();
        let labels: Vec<_> = c.edges().map(|e| e.label.as_str()).collect();
        assert_eq!(labels, vec!["conj>nsubj", "conj>obj"]);
    }

    #[test]
    fn empty_node_cycle_is_an_error() {
        let a = NodeId::empty(1, 1);
        let b = NodeId::empty(1, 2);
        let mut g = EnhancedGraph::with_empty_nodes(2, vec![a, b]);
        g.add_edge(Edge::new(NodeId::word(1), a, "x")).unwrap();
        g.add_edge(Edge::new(a, b, "y")).unwrap();
        g.add_edge(Edge::new(b, a, "z")).unwrap();
        assert!(matches!(
            collapse_empty_nodes(&g),
            Err(GraphError::EmptyNodeCycle(_))
        ));
    }

    #[test]
    fn dead_end_empty_paths_are_dropped() {
        let a = NodeId::empty(1, 1);
        let mut g = EnhancedGraph::with_empty_nodes(1, vec![a]);
        g.add_edge(Edge::words(0, 1, "root")).unwrap();
        g.add_edge(Edge::new(NodeId::word(1), a, "orphan")).unwrap();
        let c = collapse_empty_nodes(&g).unwrap();
        assert_eq!(c.edge_count(), 1);
    }

    #[test]
    fn merge_and_split() {
        let g: CollapsedGraph = [
            Edge::words(3, 5, "xcomp"),
            Edge::words(3, 5, "obj"),
            Edge::words(0, 3, "root"),
        ]
        .into_iter()
        .collect();
        let merged = merge_parallel_edges(&g);
        let labels: Vec<_> = merged.edges().map(|e| e.label.clone()).collect();
        assert_eq!(labels, vec!["root", "obj+xcomp"]);
        assert_eq!(split_parallel_edges(&merged), g);
    }

    #[test]
    fn merge_three_parallel_edges() {
        let g: CollapsedGraph = ["c", "a", "b"]
            .into_iter()
            .map(|l| Edge::words(1, 2, l))
            .collect();
        let merged = merge_parallel_edges(&g);
        assert_eq!(merged.edge_count(), 1);
        assert_eq!(merged.edges().next().unwrap().label, "a+b+c");
        assert_eq!(split_parallel_edges(&merged), g);
    }

    #[test]
    fn merge_leaves_unique_pairs_alone() {
        let g = figure_one();
        assert_eq!(merge_parallel_edges(&g), g);
    }
}

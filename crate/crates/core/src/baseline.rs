//! Graph-only decoding with connectivity repair, the comparison system for
//! tree-graph decoding.

use std::collections::BTreeSet;
use std::str::FromStr;

use crate::decode::{argmax, edge_decode, label_edges, mst_decode, DecodeError};
use crate::graph::{check_connectivity, CollapsedGraph, Edge};
use crate::scorer::{Model, SentenceScores};
use crate::{NodeId, Scalar};

/// How unreachable nodes get reattached.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairPolicy {
    /// Repeatedly add the best-scoring edge from a reachable node to an
    /// unreachable one.
    #[default]
    Greedy,
    /// Give every unreachable node its head from a maximum spanning tree
    /// over the graph scores.
    Mst,
}

impl FromStr for RepairPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(RepairPolicy::Greedy),
            "mst" => Ok(RepairPolicy::Mst),
            _ => Err(format!("unknown repair policy '{}' (expected greedy or mst)", s)),
        }
    }
}

/// Thresholded, labeled graph-scorer edges; may be disconnected.
pub fn graph_only_decode<T: Scalar, S: AsRef<str>>(model: &Model<T>, words: &[S]) -> Result<CollapsedGraph, DecodeError> {
    if words.is_empty() {
        return Err(DecodeError::EmptySentence);
    }
    graph_only_decode_scores(model, &model.score_sentence(words))
}

pub fn graph_only_decode_scores<T: Scalar>(
    model: &Model<T>,
    scores: &SentenceScores<T>,
) -> Result<CollapsedGraph, DecodeError> {
    let n = scores.len();
    for h in 0..=n {
        for d in 1..=n {
            if h != d && !scores.graph.get(h, d).is_finite() {
                return Err(DecodeError::NonFinite { head: h, dep: d });
            }
        }
    }
    let mut graph = CollapsedGraph::new(n);
    for (h, d, l) in label_edges(&scores.rel, &edge_decode(&scores.graph)) {
        graph
            .add_arc(h, d, model.labels[l].clone())
            .expect("decoded arcs are in bounds");
    }
    Ok(graph)
}

fn best_label<T: Scalar>(scores: &SentenceScores<T>, labels: &[String], h: usize, d: usize) -> String {
    labels[argmax(scores.rel.get(h, d)).expect("at least one label")].clone()
}

/// Greedy repair: while some word is unreachable from the root, add the
/// highest-scoring edge from a reachable node to an unreachable word
/// (ties to the smallest `(head, dep)`). Returns the repaired graph and
/// the number of edges added, which never exceeds the initial number of
/// unreachable words.
pub fn fix_connectivity<T: Scalar>(
    graph: &CollapsedGraph,
    scores: &SentenceScores<T>,
    labels: &[String],
) -> (CollapsedGraph, usize) {
    let n = graph.len();
    let mut out = graph.clone();
    let mut added = 0;
    loop {
        let reachable: BTreeSet<usize> = out.reachable_from_root().into_iter().map(|id| id.major).collect();
        if reachable.len() == n + 1 {
            break;
        }
        let mut best: Option<(usize, usize, T)> = None;
        for &h in &reachable {
            for d in 1..=n {
                if reachable.contains(&d) {
                    continue;
                }
                let s = scores.graph.get(h, d);
                if best.map_or(true, |(_, _, b)| s > b) {
                    best = Some((h, d, s));
                }
            }
        }
        let (h, d, _) = best.expect("an unreachable word has a reachable candidate head");
        out.add_edge(Edge::words(h, d, best_label(scores, labels, h, d)))
            .expect("repair arcs are in bounds");
        added += 1;
    }
    debug_assert!(check_connectivity(&out).is_connected());
    (out, added)
}

/// Repair by attaching every unreachable word to its head in the maximum
/// spanning tree over the graph scores.
pub fn fix_connectivity_mst<T: Scalar>(
    graph: &CollapsedGraph,
    scores: &SentenceScores<T>,
    labels: &[String],
) -> Result<(CollapsedGraph, usize), DecodeError> {
    let unreachable = check_connectivity(graph).unreachable;
    let mut out = graph.clone();
    if unreachable.is_empty() {
        return Ok((out, 0));
    }
    let tree = mst_decode(&scores.graph)?;
    let mut added = 0;
    for id in unreachable {
        let d = id.major;
        let h = tree.head(d);
        if out.add_edge(Edge::words(h, d, best_label(scores, labels, h, d))).expect("in bounds") {
            added += 1;
        }
    }
    debug_assert!(check_connectivity(&out).is_connected());
    Ok((out, added))
}

/// Apply `policy` to `graph`.
pub fn repair<T: Scalar>(
    policy: RepairPolicy,
    graph: &CollapsedGraph,
    scores: &SentenceScores<T>,
    labels: &[String],
) -> Result<(CollapsedGraph, usize), DecodeError> {
    match policy {
        RepairPolicy::Greedy => Ok(fix_connectivity(graph, scores, labels)),
        RepairPolicy::Mst => fix_connectivity_mst(graph, scores, labels),
    }
}

/// Words of `graph` that cannot be reached from the root.
pub fn unreachable_words(graph: &CollapsedGraph) -> Vec<usize> {
    check_connectivity(graph)
        .unreachable
        .iter()
        .map(|id: &NodeId| id.major)
        .collect()
}

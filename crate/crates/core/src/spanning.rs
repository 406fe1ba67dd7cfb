//! Spanning-tree extraction from gold enhanced graphs.
//!
//! Every word gets a unique head chosen among its enhanced heads:
//!
//! 1. a word with a single enhanced head keeps it;
//! 2. otherwise, the enhanced edge whose head is the word's basic head
//!    wins (labels may differ);
//! 3. otherwise, the head closest to the root in the basic tree wins.
//!
//! These rules do not guarantee a tree, so the result is checked and a
//! cycle is reported as an error.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::conllu::{NodeId, Sentence};
use crate::graph::{CollapsedGraph, Edge};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SpanningError {
    #[error("word {0} has no basic head")]
    MissingBasicHead(usize),

    #[error("basic tree has a cycle through word {0}")]
    BasicCycle(usize),

    #[error("word {0} has no incoming enhanced edge")]
    NoIncomingEdge(usize),

    #[error("extracted head assignment contains a cycle through word {0}")]
    Cycle(usize),

    #[error("graph has {graph} words but sentence has {sentence}")]
    LengthMismatch { graph: usize, sentence: usize },
}

/// Distance of each word from the root in the basic tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasicDepth(Vec<usize>);

impl BasicDepth {
    /// Depth of word `index` (1-based); the root has depth 0.
    pub fn depth(&self, index: usize) -> usize {
        self.0[index]
    }

    /// Depths of words `1..=n`.
    pub fn depths(&self) -> &[usize] {
        &self.0[1..]
    }
}

pub fn compute_basic_depth(sentence: &Sentence) -> Result<BasicDepth, SpanningError> {
    let heads = sentence
        .surface_words()
        .enumerate()
        .map(|(i, w)| w.head.map(|h| h.major).ok_or(SpanningError::MissingBasicHead(i + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    let n = heads.len();

    const UNKNOWN: usize = usize::MAX;
    let mut depth = vec![UNKNOWN; n + 1];
    depth[0] = 0;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut node = start;
        while depth[node] == UNKNOWN {
            if path.len() > n {
                return Err(SpanningError::BasicCycle(start));
            }
            path.push(node);
            node = heads[node - 1];
        }
        let mut d = depth[node];
        for &p in path.iter().rev() {
            d += 1;
            depth[p] = d;
        }
    }

    Ok(BasicDepth(depth))
}

/// One head and label per word, forming a tree rooted at node 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanningTree {
    heads: Vec<usize>,
    labels: Vec<String>,
}

impl SpanningTree {
    /// `heads[j - 1]` is the head of word `j`.
    pub fn new(heads: Vec<usize>, labels: Vec<String>) -> Self {
        assert_eq!(heads.len(), labels.len(), "one label per head");
        SpanningTree { heads, labels }
    }

    pub fn unlabeled(heads: Vec<usize>) -> Self {
        let labels = vec![String::new(); heads.len()];
        SpanningTree { heads, labels }
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn head(&self, word: usize) -> usize {
        self.heads[word - 1]
    }

    pub fn label(&self, word: usize) -> &str {
        &self.labels[word - 1]
    }

    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn set_label(&mut self, word: usize, label: impl Into<String>) {
        self.labels[word - 1] = label.into();
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.heads
            .iter()
            .zip(&self.labels)
            .enumerate()
            .map(|(i, (&h, l))| Edge::words(h, i + 1, l.clone()))
    }

    pub fn is_tree(&self) -> bool {
        is_tree(&self.heads)
    }
}

/// Whether `heads` (head of word `j` at `j - 1`) forms a tree rooted at 0:
/// heads in range, no self-attachment, no cycles.
pub fn is_tree(heads: &[usize]) -> bool {
    find_cycle(heads).is_none() && heads.iter().enumerate().all(|(i, &h)| h <= heads.len() && h != i + 1)
}

/// First word found on a cycle, if any.
fn find_cycle(heads: &[usize]) -> Option<usize> {
    let n = heads.len();
    // 0 = unvisited, 1 = on current path, 2 = reaches root
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut node = start;
        while state[node] == 0 {
            state[node] = 1;
            path.push(node);
            node = heads[node - 1];
            if node > n {
                return Some(start);
            }
        }
        if state[node] == 1 {
            return Some(node);
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

/// Extract the training tree of `graph`, the collapsed and merged gold
/// graph of `sentence`.
pub fn extract_spanning_tree(sentence: &Sentence, graph: &CollapsedGraph) -> Result<SpanningTree, SpanningError> {
    let n = sentence.len();
    if graph.len() != n {
        return Err(SpanningError::LengthMismatch {
            graph: graph.len(),
            sentence: n,
        });
    }

    let mut depth = None;
    let mut heads = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    for (j, word) in (1..=n).zip(sentence.surface_words()) {
        let incoming: Vec<&Edge> = graph.incoming(NodeId::word(j)).collect();
        let distinct_heads: BTreeSet<NodeId> = incoming.iter().map(|e| e.head).collect();

        let chosen = match distinct_heads.len() {
            0 => return Err(SpanningError::NoIncomingEdge(j)),
            // incoming is sorted by (head, label): the first edge has the
            // smallest label
            1 => incoming[0],
            _ => match incoming.iter().find(|e| Some(e.head) == word.head) {
                Some(e) => e,
                None => {
                    if depth.is_none() {
                        depth = Some(compute_basic_depth(sentence)?);
                    }
                    let depth = depth.as_ref().expect("computed");
                    incoming
                        .iter()
                        .min_by_key(|e| (depth.depth(e.head.major), e.head, &e.label))
                        .expect("nonempty")
                }
            },
        };

        heads.push(chosen.head.major);
        labels.push(chosen.label.clone());
    }

    if let Some(word) = find_cycle(&heads) {
        return Err(SpanningError::Cycle(word));
    }

    Ok(SpanningTree { heads, labels })
}

/// Edges of `graph` that are not part of `tree`.
pub fn residual_edges(graph: &CollapsedGraph, tree: &SpanningTree) -> Vec<Edge> {
    let tree_edges: BTreeSet<Edge> = tree.edges().collect();
    graph.edges().filter(|e| !tree_edges.contains(e)).cloned().collect()
}

//! ELAS and EULAS: micro-averaged F1 over labeled enhanced edges, and
//! macro-averaging across languages.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::conllu::Sentence;
use crate::graph::{collapse_empty_nodes, split_parallel_edges, CollapsedGraph, EnhancedGraph, GraphError, PATH_SEPARATOR};
use crate::NodeId;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("gold has {gold} sentences, system has {system}")]
    SentenceCount { gold: usize, system: usize },

    #[error("word counts differ in sentence(s) {}", .0.join(", "))]
    WordCount(Vec<String>),

    #[error("sentence {sentence}: {source}")]
    Graph { sentence: String, source: GraphError },
}

/// Precision, recall and F1 with the underlying edge counts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub system: usize,
    pub matched: usize,
}

impl EvalResult {
    pub fn from_counts(gold: usize, system: usize, matched: usize) -> Self {
        assert!(matched <= gold.min(system), "matched edges exceed a side");
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, system);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        EvalResult {
            precision,
            recall,
            f1,
            gold,
            system,
            matched,
        }
    }

    /// `NAME_P=..`, `NAME_R=..`, `NAME_F1=..` lines in percent.
    pub fn key_values(&self, name: &str) -> String {
        format!(
            "{name}_P={:.2}\n{name}_R={:.2}\n{name}_F1={:.2}\n",
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f1
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Metric {
    #[default]
    Elas,
    Eulas,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Elas => "ELAS",
            Metric::Eulas => "EULAS",
        }
    }

    fn normalize(self, label: &str) -> String {
        match self {
            Metric::Elas => label.to_owned(),
            Metric::Eulas => universal_label(label),
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "elas" => Ok(Metric::Elas),
            "eulas" => Ok(Metric::Eulas),
            _ => Err(format!("unknown metric '{}'", s)),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Each `>`-separated component truncated at its first `:`.
pub fn universal_label(label: &str) -> String {
    label
        .split(PATH_SEPARATOR)
        .map(|c| c.split(':').next().unwrap_or(c))
        .collect::<Vec<_>>()
        .join(&PATH_SEPARATOR.to_string())
}

type EdgeKey = (NodeId, NodeId, String);

/// Edge multiset after splitting merged labels. Truncating subtypes can
/// map distinct labels of one arc to the same key; counting them keeps
/// every gold and system edge, so EULAS never falls below ELAS.
fn edge_counts(graph: &CollapsedGraph, metric: Metric) -> BTreeMap<EdgeKey, usize> {
    let mut counts = BTreeMap::new();
    for e in split_parallel_edges(graph).edges() {
        *counts.entry((e.head, e.dep, metric.normalize(&e.label))).or_insert(0) += 1;
    }
    counts
}

fn counts(gold: &CollapsedGraph, system: &CollapsedGraph, metric: Metric) -> (usize, usize, usize) {
    let g = edge_counts(gold, metric);
    let s = edge_counts(system, metric);
    let matched = g.iter().map(|(k, c)| (*c).min(s.get(k).copied().unwrap_or(0))).sum();
    (g.values().sum(), s.values().sum(), matched)
}

/// Score aligned collapsed graphs; `ids` names sentences in errors.
pub fn score_collapsed(
    gold: &[CollapsedGraph],
    system: &[CollapsedGraph],
    metric: Metric,
    ids: Option<&[String]>,
) -> Result<EvalResult, EvalError> {
    if gold.len() != system.len() {
        return Err(EvalError::SentenceCount {
            gold: gold.len(),
            system: system.len(),
        });
    }
    let name = |i: usize| {
        ids.and_then(|ids| ids.get(i).cloned())
            .unwrap_or_else(|| format!("#{}", i + 1))
    };
    let mismatched: Vec<String> = (0..gold.len())
        .filter(|&i| gold[i].len() != system[i].len())
        .map(name)
        .collect();
    if !mismatched.is_empty() {
        return Err(EvalError::WordCount(mismatched));
    }

    let (g, s, m) = gold
        .par_iter()
        .zip(system)
        .map(|(g, s)| counts(g, s, metric))
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    Ok(EvalResult::from_counts(g, s, m))
}

/// ELAS over aligned collapsed graphs.
pub fn elas(gold: &[CollapsedGraph], system: &[CollapsedGraph]) -> Result<EvalResult, EvalError> {
    score_collapsed(gold, system, Metric::Elas, None)
}

/// EULAS over aligned collapsed graphs.
pub fn eulas(gold: &[CollapsedGraph], system: &[CollapsedGraph]) -> Result<EvalResult, EvalError> {
    score_collapsed(gold, system, Metric::Eulas, None)
}

fn collapse_all(graphs: &[&EnhancedGraph], ids: &[String]) -> Result<Vec<CollapsedGraph>, EvalError> {
    graphs
        .iter()
        .zip(ids)
        .map(|(g, id)| {
            collapse_empty_nodes(g).map_err(|source| EvalError::Graph {
                sentence: id.clone(),
                source,
            })
        })
        .collect()
}

/// Score aligned sentences by their enhanced graphs; both sides are
/// collapsed first.
pub fn evaluate_sentences(gold: &[Sentence], system: &[Sentence], metric: Metric) -> Result<EvalResult, EvalError> {
    if gold.len() != system.len() {
        return Err(EvalError::SentenceCount {
            gold: gold.len(),
            system: system.len(),
        });
    }
    let ids: Vec<String> = gold.iter().enumerate().map(|(i, s)| s.label(i)).collect();
    let g = collapse_all(&gold.iter().map(|s| &s.enhanced).collect::<Vec<_>>(), &ids)?;
    let s = collapse_all(&system.iter().map(|s| &s.enhanced).collect::<Vec<_>>(), &ids)?;
    score_collapsed(&g, &s, metric, Some(&ids))
}

/// Unweighted mean; `None` for no values.
pub fn macro_average(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

use std::collections::HashSet;

use ndarray::Array2;

use super::{Model, ParamSet};
use crate::Scalar;

/// Which edges supervise the graph scorer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphSupervision {
    /// Only edges outside the spanning tree are positives; tree arcs are
    /// left out of the negatives. The tree scorer is trained.
    Residual,
    /// Every gold edge is a positive and the tree scorer is unused.
    Full,
}

/// Training targets of one sentence, in model index space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    pub word_ids: Vec<usize>,
    /// Head of word `j` at `j - 1`; `None` when tree extraction failed.
    pub heads: Option<Vec<usize>>,
    /// Gold edges outside the spanning tree, `(head, dep)`.
    pub extra: Vec<(usize, usize)>,
    /// Every gold edge with its label index, `(head, dep, label)`.
    pub labeled: Vec<(usize, usize, usize)>,
}

impl TrainingExample {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown<T> {
    pub tree: T,
    pub graph: T,
    pub rel: T,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn total(&self) -> T {
        self.tree + self.graph + self.rel
    }
}

fn log_sum_exp<T: Scalar>(values: impl Iterator<Item = T> + Clone) -> T {
    let max = values.clone().fold(T::neg_infinity(), T::max);
    max + values.map(|v| (v - max).exp()).sum::<T>().ln()
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Model<T> {
    /// Summed cross-entropy of the tree, graph and relation scorers.
    pub fn loss(&self, example: &TrainingExample, supervision: GraphSupervision) -> LossBreakdown<T> {
        self.compute_loss(example, supervision, None)
    }

    /// Loss plus gradients, accumulated (added) into `grad`.
    pub fn loss_and_gradient(
        &self,
        example: &TrainingExample,
        supervision: GraphSupervision,
        grad: &mut ParamSet<T>,
    ) -> LossBreakdown<T> {
        self.compute_loss(example, supervision, Some(grad))
    }

    fn compute_loss(
        &self,
        example: &TrainingExample,
        supervision: GraphSupervision,
        grad: Option<&mut ParamSet<T>>,
    ) -> LossBreakdown<T> {
        let n = example.len();
        let params = &self.params;
        let enc = params.encoder.forward(&example.word_ids);
        let mut loss = LossBreakdown {
            tree: T::zero(),
            graph: T::zero(),
            rel: T::zero(),
        };

        let tree_heads = match supervision {
            GraphSupervision::Residual => example.heads.as_deref(),
            GraphSupervision::Full => None,
        };

        // tree scorer: softmax over candidate heads of each word
        let tree_proj = params.tree.project(&enc);
        let mut d_tree = Array2::zeros((n + 1, n + 1));
        if let Some(heads) = tree_heads {
            let scores = params.tree.scores(&tree_proj);
            for j in 1..=n {
                let candidates = (0..=n).filter(|&i| i != j);
                let lse = log_sum_exp(candidates.clone().map(|i| scores[[i, j]]));
                let gold = heads[j - 1];
                loss.tree = loss.tree + lse - scores[[gold, j]];
                for i in candidates {
                    d_tree[[i, j]] = (scores[[i, j]] - lse).exp();
                }
                d_tree[[gold, j]] = d_tree[[gold, j]] - T::one();
            }
        }

        // graph scorer: independent binary decision per candidate pair
        let (positives, excluded): (HashSet<(usize, usize)>, HashSet<(usize, usize)>) = match tree_heads {
            Some(heads) => (
                example.extra.iter().copied().collect(),
                heads.iter().enumerate().map(|(j, &h)| (h, j + 1)).collect(),
            ),
            None => (
                example.labeled.iter().map(|&(h, d, _)| (h, d)).collect(),
                HashSet::new(),
            ),
        };
        let graph_proj = params.graph.project(&enc);
        let graph_scores = params.graph.scores(&graph_proj);
        let mut d_graph = Array2::zeros((n + 1, n + 1));
        for i in 0..=n {
            for j in 1..=n {
                if i == j || excluded.contains(&(i, j)) {
                    continue;
                }
                let s = graph_scores[[i, j]];
                let y = if positives.contains(&(i, j)) { T::one() } else { T::zero() };
                loss.graph = loss.graph + softplus(s) - y * s;
                d_graph[[i, j]] = sigmoid(s) - y;
            }
        }

        // relation labeler on gold edges
        let rel_proj: Vec<_> = if example.labeled.is_empty() {
            Vec::new()
        } else {
            params.rel.iter().map(|r| r.project(&enc)).collect()
        };
        let mut d_rel = vec![Array2::zeros((n + 1, n + 1)); rel_proj.len()];
        for &(h, d, gold) in &example.labeled {
            let scores: Vec<T> = params
                .rel
                .iter()
                .zip(&rel_proj)
                .map(|(dbf, p)| dbf.pair_score(p, h, d))
                .collect();
            let lse = log_sum_exp(scores.iter().copied());
            loss.rel = loss.rel + lse - scores[gold];
            for (r, &s) in scores.iter().enumerate() {
                d_rel[r][[h, d]] = d_rel[r][[h, d]] + (s - lse).exp();
            }
            d_rel[gold][[h, d]] = d_rel[gold][[h, d]] - T::one();
        }

        if let Some(grad) = grad {
            let mut d_layers: Vec<Array2<T>> = enc.layers.iter().map(|l| Array2::zeros(l.raw_dim())).collect();
            if tree_heads.is_some() {
                params.tree.backward(&enc, &tree_proj, &d_tree, &mut grad.tree, &mut d_layers);
            }
            params.graph.backward(&enc, &graph_proj, &d_graph, &mut grad.graph, &mut d_layers);
            for (r, (dbf, p)) in params.rel.iter().zip(&rel_proj).enumerate() {
                dbf.backward(&enc, p, &d_rel[r], &mut grad.rel[r], &mut d_layers);
            }
            params
                .encoder
                .backward(&example.word_ids, &enc, d_layers, &mut grad.encoder);
        }

        loss
    }
}

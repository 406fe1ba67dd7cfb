#![allow(dead_code)]

use eud_core::scorer::{ArcScores, GraphSupervision, Model, ModelConfig, TrainingExample, Vocab};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Heads of a uniformly shuffled random tree over `n` words rooted at 0.
pub fn random_tree<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let mut heads = vec![0; n];
    for (k, &w) in order.iter().enumerate() {
        // attach to the root or to any word placed earlier
        let h = rng.gen_range(0..=k);
        heads[w - 1] = if h == 0 { 0 } else { order[h - 1] };
    }
    heads
}

pub fn small_model(labels: usize, layers: usize, seed: u64) -> Model<f64> {
    let config = ModelConfig {
        embedding_dim: 4,
        recurrent_layers: layers,
        arc_hidden: 3,
        rel_hidden: 2,
        unk_buckets: 2,
        min_word_count: 1,
    };
    let vocab = Vocab::new(vec!["a".into(), "b".into(), "c".into()], 2);
    let labels = (0..labels).map(|i| format!("l{i}")).collect();
    Model::new(config, vocab, labels, seed).unwrap()
}

/// A random training example over `n` words.
pub fn random_example<R: Rng>(n: usize, labels: usize, vocab_rows: usize, rng: &mut R) -> TrainingExample {
    let heads = random_tree(n, rng);
    let mut extra = Vec::new();
    for d in 1..=n {
        for h in 0..=n {
            if h != d && heads[d - 1] != h && rng.gen_bool(0.2) {
                extra.push((h, d));
            }
        }
    }
    let mut labeled: Vec<(usize, usize, usize)> = heads
        .iter()
        .enumerate()
        .map(|(j, &h)| (h, j + 1, rng.gen_range(0..labels)))
        .collect();
    labeled.extend(extra.iter().map(|&(h, d)| (h, d, rng.gen_range(0..labels))));
    TrainingExample {
        word_ids: (0..n).map(|_| rng.gen_range(0..vocab_rows)).collect(),
        heads: Some(heads),
        extra,
        labeled,
    }
}

pub fn supervisions() -> [GraphSupervision; 2] {
    [GraphSupervision::Residual, GraphSupervision::Full]
}

const STEP: f64 = 1e-5;
/// Denominator floor: gradients smaller than this are compared in
/// absolute terms, since central differences of an O(10) loss carry
/// roughly 1e-10 of cancellation noise.
const FLOOR: f64 = 1e-5;

/// Largest relative error between analytic and central-difference
/// gradients over every parameter.
pub fn max_relative_error(seed: u64, supervision: GraphSupervision, with_tree: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = rng.gen_range(0..=2);
    let mut model = small_model(3, layers, seed);
    let n = rng.gen_range(1..=5);
    let rows = model.vocab.rows();
    let mut ex = random_example(n, 3, rows, &mut rng);
    if !with_tree {
        ex.heads = None;
    }

    let mut grad = model.params.zeros_like();
    model.loss_and_gradient(&ex, supervision, &mut grad);
    let analytic: Vec<f64> = grad.blocks().iter().flat_map(|b| b.iter().copied()).collect();

    let mut worst = 0.0f64;
    let mut k = 0;
    let block_count = model.params.blocks().len();
    for b in 0..block_count {
        let len = model.params.blocks()[b].len();
        for i in 0..len {
            let orig = model.params.blocks()[b][i];
            model.params.blocks_mut()[b][i] = orig + STEP;
            let plus = model.loss(&ex, supervision).total();
            model.params.blocks_mut()[b][i] = orig - STEP;
            let minus = model.loss(&ex, supervision).total();
            model.params.blocks_mut()[b][i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(err);
            k += 1;
        }
    }
    worst
}

/// Score of a head assignment.
pub fn tree_score(scores: &ArcScores<f64>, heads: &[usize]) -> f64 {
    heads.iter().enumerate().map(|(j, &h)| scores.get(h, j + 1)).sum()
}

fn acyclic(heads: &[usize]) -> bool {
    let n = heads.len();
    (1..=n).all(|start| {
        let mut v = start;
        for _ in 0..=n {
            if v == 0 {
                return true;
            }
            v = heads[v - 1];
        }
        false
    })
}

fn enumerate(
    scores: &ArcScores<f64>,
    single_root: bool,
    heads: &mut Vec<usize>,
    partial: f64,
    best: &mut Option<(Vec<usize>, f64)>,
) {
    let n = scores.len();
    let d = heads.len() + 1;
    if d > n {
        let roots = heads.iter().filter(|&&h| h == 0).count();
        if roots >= 1 && (!single_root || roots == 1) && acyclic(heads) && best.as_ref().map_or(true, |(_, b)| partial > *b) {
            *best = Some((heads.clone(), partial));
        }
        return;
    }
    for h in 0..=n {
        if h != d {
            heads.push(h);
            enumerate(scores, single_root, heads, partial + scores.get(h, d), best);
            heads.pop();
        }
    }
}

/// Best arborescence rooted at 0 by enumerating every head assignment.
pub fn brute_force_mst(scores: &ArcScores<f64>, single_root: bool) -> (Vec<usize>, f64) {
    let mut best = None;
    enumerate(scores, single_root, &mut Vec::with_capacity(scores.len()), 0.0, &mut best);
    best.expect("at least one tree")
}

pub fn random_scores<R: Rng>(n: usize, rng: &mut R) -> ArcScores<f64> {
    ArcScores::from_fn(n, |_, _| rng.gen_range(-5.0..5.0))
}

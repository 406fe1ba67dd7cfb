//! Trainable arc, extra-edge and relation scorers.
//!
//! A small encoder (word embeddings plus bidirectional recurrent layers)
//! produces one state per layer and position; every scorer is a deep
//! biaffine function over its own softmax-weighted mix of those layers.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

mod dbf;
mod encoder;
mod io;
mod loss;
mod optim;

pub use dbf::{Dbf, Projection};
pub use encoder::{BiRnn, Encoder, EncoderOutput, RnnCell};
pub use io::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use loss::{GraphSupervision, LossBreakdown, TrainingExample};
pub use optim::{clip_grad_norm, RAdam, RAdamConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("label vocabulary is empty")]
    EmptyLabelVocab,

    #[error("not a model file (bad magic bytes)")]
    BadMagic,

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),

    #[error("model file is truncated")]
    Truncated,

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("unknown relation label '{0}'")]
    UnknownLabel(String),

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Width of embeddings and of every encoder layer (even).
    pub embedding_dim: usize,
    pub recurrent_layers: usize,
    /// Projection size of the tree and graph scorers.
    pub arc_hidden: usize,
    /// Projection size of each relation scorer.
    pub rel_hidden: usize,
    /// Hashed embedding rows shared by out-of-vocabulary words.
    pub unk_buckets: usize,
    /// Words seen fewer times than this in training use the hashed rows.
    pub min_word_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 64,
            recurrent_layers: 2,
            arc_hidden: 64,
            rel_hidden: 32,
            unk_buckets: 16,
            min_word_count: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embedding_dim == 0 || self.embedding_dim % 2 != 0 {
            return Err(ModelError::Config("embedding_dim must be a positive even number".into()));
        }
        if self.arc_hidden == 0 || self.rel_hidden == 0 {
            return Err(ModelError::Config("hidden sizes must be positive".into()));
        }
        if self.unk_buckets == 0 {
            return Err(ModelError::Config("at least one unknown-word bucket is required".into()));
        }
        Ok(())
    }

    /// Number of encoder layers including the embedding layer.
    pub fn mixed_layers(&self) -> usize {
        self.recurrent_layers + 1
    }
}

/// Word vocabulary with hashed buckets for unknown forms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    unk_buckets: usize,
}

impl Vocab {
    /// Known words in sorted order.
    pub fn new(mut words: Vec<String>, unk_buckets: usize) -> Self {
        words.sort();
        words.dedup();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab {
            words,
            index,
            unk_buckets: unk_buckets.max(1),
        }
    }

    /// Words occurring at least `min_count` times.
    pub fn from_counts<'a>(forms: impl IntoIterator<Item = &'a str>, min_count: usize, unk_buckets: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for f in forms {
            *counts.entry(f).or_default() += 1;
        }
        let words = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .map(|(w, _)| w.to_owned())
            .collect();
        Vocab::new(words, unk_buckets)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn unk_buckets(&self) -> usize {
        self.unk_buckets
    }

    /// Number of embedding rows.
    pub fn rows(&self) -> usize {
        self.words.len() + self.unk_buckets
    }

    pub fn contains(&self, form: &str) -> bool {
        self.index.contains_key(form)
    }

    pub fn id(&self, form: &str) -> usize {
        match self.index.get(form) {
            Some(&i) => i,
            None => self.words.len() + (fnv1a(form.as_bytes()) % self.unk_buckets as u64) as usize,
        }
    }

    pub fn ids<S: AsRef<str>>(&self, forms: &[S]) -> Vec<usize> {
        forms.iter().map(|f| self.id(f.as_ref())).collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub(crate) fn init_uniform<T: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::from_f64_lossy(rng.gen_range(-limit..limit)))
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(x: ArrayView1<'_, T>) -> Array1<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exp = x.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Position-wise convex combination of encoder layers with weights
/// `softmax(alpha)`.
pub fn mix_layers<T: Scalar>(enc: &EncoderOutput<T>, alpha: ArrayView1<'_, T>) -> Array2<T> {
    assert_eq!(alpha.len(), enc.layers.len(), "one mixing weight per layer");
    let weights = softmax(alpha);
    let mut mixed = Array2::zeros(enc.layers[0].raw_dim());
    for (layer, &w) in enc.layers.iter().zip(&weights) {
        mixed.scaled_add(w, layer);
    }
    mixed
}

/// Score one (head, dependent) pair with a deep biaffine function.
pub fn dbf_score<T: Scalar>(dbf: &Dbf<T>, enc: &EncoderOutput<T>, head: usize, dep: usize) -> T {
    dbf.pair_score(&dbf.project(enc), head, dep)
}

/// All trainable parameters; also used for gradients and optimizer
/// moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub encoder: Encoder<T>,
    pub tree: Dbf<T>,
    pub graph: Dbf<T>,
    pub rel: Vec<Dbf<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new<R: Rng>(config: &ModelConfig, vocab_rows: usize, labels: usize, rng: &mut R) -> Self {
        let dim = config.embedding_dim;
        let layers = config.mixed_layers();
        ParamSet {
            encoder: Encoder::new(vocab_rows, dim, config.recurrent_layers, rng),
            tree: Dbf::new(layers, dim, config.arc_hidden, rng),
            graph: Dbf::new(layers, dim, config.arc_hidden, rng),
            rel: (0..labels).map(|_| Dbf::new(layers, dim, config.rel_hidden, rng)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            encoder: self.encoder.zeros_like(),
            tree: self.tree.zeros_like(),
            graph: self.graph.zeros_like(),
            rel: self.rel.iter().map(Dbf::zeros_like).collect(),
        }
    }

    /// Parameter blocks in serialization order.
    pub fn blocks(&self) -> Vec<&[T]> {
        let mut blocks = self.encoder.blocks();
        blocks.extend(self.tree.blocks());
        blocks.extend(self.graph.blocks());
        for r in &self.rel {
            blocks.extend(r.blocks());
        }
        blocks
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut blocks = self.encoder.blocks_mut();
        blocks.extend(self.tree.blocks_mut());
        blocks.extend(self.graph.blocks_mut());
        for r in &mut self.rel {
            blocks.extend(r.blocks_mut());
        }
        blocks
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn fill_zero(&mut self) {
        for b in self.blocks_mut() {
            b.fill(T::zero());
        }
    }

    pub fn scale(&mut self, factor: T) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v = *v * factor);
        }
    }

    pub fn norm(&self) -> T {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Arc scores indexed `[head, dependent]`; heads `0..=n`, dependents
/// `1..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArcScores<T>(Array2<T>);

impl<T: Scalar> ArcScores<T> {
    /// From a square `(n + 1) x (n + 1)` matrix; column 0 is ignored.
    pub fn from_square(scores: Array2<T>) -> Self {
        assert_eq!(scores.nrows(), scores.ncols(), "square score matrix");
        assert!(scores.nrows() >= 1, "at least the root row");
        ArcScores(scores)
    }

    /// Build from a closure over (head, dependent).
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        ArcScores(Array2::from_shape_fn((n + 1, n + 1), |(h, d)| {
            if d == 0 {
                T::zero()
            } else {
                f(h, d)
            }
        }))
    }

    /// Number of words.
    pub fn len(&self) -> usize {
        self.0.nrows() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, head: usize, dep: usize) -> T {
        assert!(dep >= 1, "the root has no head");
        self.0[[head, dep]]
    }

    pub fn square(&self) -> &Array2<T> {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Relation scores for any pair, computed on demand from cached
/// projections.
#[derive(Clone, Debug)]
pub struct RelScores<T> {
    per_label: Vec<RelCache<T>>,
}

#[derive(Clone, Debug)]
struct RelCache<T> {
    head_u: Array2<T>,
    head_bias: Array1<T>,
    v_mod: Array2<T>,
    mod_bias: Array1<T>,
    b: T,
}

impl<T: Scalar> RelScores<T> {
    fn new(rel: &[Dbf<T>], enc: &EncoderOutput<T>) -> Self {
        let per_label = rel
            .iter()
            .map(|dbf| {
                let p = dbf.project(enc);
                RelCache {
                    head_u: p.v_head.dot(&dbf.u),
                    head_bias: p.v_head.dot(&dbf.b_head),
                    mod_bias: p.v_mod.dot(&dbf.b_mod),
                    v_mod: p.v_mod,
                    b: dbf.b[0],
                }
            })
            .collect();
        RelScores { per_label }
    }

    pub fn labels(&self) -> usize {
        self.per_label.len()
    }

    /// One score per label for edge `head -> dep`.
    pub fn get(&self, head: usize, dep: usize) -> Array1<T> {
        self.per_label
            .iter()
            .map(|c| c.head_u.row(head).dot(&c.v_mod.row(dep)) + c.head_bias[head] + c.mod_bias[dep] + c.b)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SentenceScores<T> {
    pub tree: ArcScores<T>,
    pub graph: ArcScores<T>,
    pub rel: RelScores<T>,
}

impl<T: Scalar> SentenceScores<T> {
    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }
}

/// Scoring model: parameters plus the closed word and label vocabularies.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub labels: Vec<String>,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, vocab: Vocab, labels: Vec<String>, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if labels.is_empty() {
            return Err(ModelError::EmptyLabelVocab);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParamSet::new(&config, vocab.rows(), labels.len(), &mut rng);
        Ok(Model {
            config,
            vocab,
            labels,
            params,
        })
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> EncoderOutput<T> {
        self.params.encoder.forward(&self.vocab.ids(words))
    }

    pub fn score_sentence<S: AsRef<str>>(&self, words: &[S]) -> SentenceScores<T> {
        self.score_encoded(&self.encode(words))
    }

    pub fn score_encoded(&self, enc: &EncoderOutput<T>) -> SentenceScores<T> {
        let tree = self.params.tree.scores(&self.params.tree.project(enc));
        let graph = self.params.graph.scores(&self.params.graph.project(enc));
        SentenceScores {
            tree: ArcScores::from_square(tree),
            graph: ArcScores::from_square(graph),
            rel: RelScores::new(&self.params.rel, enc),
        }
    }
}

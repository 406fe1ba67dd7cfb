//! Enhanced Universal Dependencies parsing.
//!
//! The parser predicts a spanning tree of each enhanced graph with a
//! maximum spanning arborescence decoder and adds independently scored
//! extra edges on top of it, so every output graph is connected without
//! any repair step. Around that sit the corpus transforms needed to train
//! and evaluate such a parser: CoNLL-U I/O, empty-node collapsing,
//! parallel-edge merging, spanning-tree extraction, label
//! de-/re-lexicalization, multi-word token expansion and ELAS/EULAS.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the precision used by the toolkit (`f64`).

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};

pub mod baseline;
pub mod conllu;
pub mod decode;
pub mod eval;
pub mod graph;
pub mod labels;
pub mod mwt;
pub mod scorer;
pub mod spanning;
pub mod toy;
pub mod train;

mod error;

pub use error::{Error, Result};

/// Floating point type the scoring model and decoders are generic over.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    /// Lossless for `f64`, and for every `f32` value.
    fn to_f64_lossless(self) -> f64 {
        self.to_f64().expect("float to f64")
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 to float")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Scoring model at the toolkit's working precision.
pub type ScoreModel = scorer::Model<f64>;
/// Per-sentence scores at the toolkit's working precision.
pub type SentenceScores = scorer::SentenceScores<f64>;
/// Arc score matrix at the toolkit's working precision.
pub type ArcScores = scorer::ArcScores<f64>;
/// Parameter blocks (and gradients) at the toolkit's working precision.
pub type ParamSet = scorer::ParamSet<f64>;

pub use conllu::{MwtRange, NodeId, Sentence, Word};
pub use graph::{CollapsedGraph, Edge, EnhancedGraph};
pub use spanning::SpanningTree;

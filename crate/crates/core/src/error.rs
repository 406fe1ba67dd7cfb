use thiserror::Error;

use crate::conllu::ConlluError;
use crate::decode::DecodeError;
use crate::eval::EvalError;
use crate::graph::GraphError;
use crate::mwt::MwtError;
use crate::scorer::ModelError;
use crate::spanning::SpanningError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Conllu(#[from] ConlluError),

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error(transparent)]
    Spanning(#[from] SpanningError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Mwt(#[from] MwtError),

    #[error(transparent)]
    Decode(#[from] DecodeError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("{0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sentence {sentence}: {source}")]
    InSentence {
        sentence: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn in_sentence(self, sentence: impl Into<String>) -> Error {
        Error::InSentence {
            sentence: sentence.into(),
            source: Box::new(self),
        }
    }

    /// Whether the error stems from bad input data rather than a bug.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::InSentence { source, .. } => source.is_data_error(),
            Error::Graph(GraphError::Invariant(_)) => false,
            _ => true,
        }
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("ARPA line {line}: {msg}")]
    Arpa { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("word id {id} out of range for vocabulary of size {size}")]
    Index { id: usize, size: usize },

    #[error("non-finite loss at batch {batch} (epoch {epoch})")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("no candidates available")]
    NoCandidates,

    #[error("word {0:?} is not in the model vocabulary")]
    OutOfVocabulary(String),

    #[error("no reference for utterance {0:?}")]
    MissingReference(String),

    #[error("empty n-best list for utterance {0:?}")]
    EmptyNBest(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

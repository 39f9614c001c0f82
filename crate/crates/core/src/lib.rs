//! Word-level language modeling toolkit centred on rare-word embedding
//! enrichment: an LSTM language model whose rare-word columns in the input
//! and output embedding matrices are replaced by weighted centroids of
//! frequent related words, plus the interpolated Kneser-Ney baseline,
//! n-best rescoring and WER / rare-word accuracy evaluation around it.

pub mod enrich;
pub mod error;
pub mod eval;
pub mod neural;
pub mod ngram;
pub mod rescore;
pub mod synth;
pub mod text;

pub use error::{Error, Result};

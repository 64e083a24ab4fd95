//! Reference-based text generation evaluation with automatic error analysis.
//!
//! A hypothesis is scored by the mean token log-probability a seq2seq model
//! assigns to it given a reference (or source). The score is split into an
//! explicit part, recovered by iteratively correcting the least likely
//! tokens, and an implicit part that remains after correction. The two are
//! recombined with separate weights.
//!
//! Backends implement [`scorer::ScorerBackend`]: [`ngram::NgramScorer`] is a
//! deterministic in-process model, [`remote::RemoteScorer`] talks to an HTTP
//! model server. See the `examples/` directory for end-to-end usage.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod io;
pub mod meta;
pub mod metric;
pub mod ngram;
pub mod remote;
pub mod replay;
pub mod scorer;

pub use analysis::{refine, RefinementTrace};
pub use error::{Error, Result};
pub use metric::{evaluate, ErrorReport, EvalConfig};
pub use ngram::NgramScorer;
pub use remote::{RemoteScorer, ServerEndpoint};
pub use scorer::{ScorerBackend, Variant};

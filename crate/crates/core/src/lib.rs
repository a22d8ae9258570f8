//! Semantic-ID generative retrieval for episode recommendation.
//!
//! Content embeddings are quantized by residual k-means into fixed-length
//! semantic ids; a small autoregressive scorer conditioned on listening
//! history, a soft-prompt user vector and a familiarity control token
//! generates ids by beam search, and a lookup table resolves them to
//! episodes.

pub mod artifact;
pub mod catalog;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod quantizer;
pub mod sid_index;
pub mod util;

pub use error::{Error, Result};
pub use quantizer::{Codebook, SemanticId};
pub use sid_index::{ControlToken, LookupTable, TokenSpace};

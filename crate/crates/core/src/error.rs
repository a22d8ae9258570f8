use std::io;

/// Errors produced by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {needed} vectors to fit {needed} centroids, got {got}")]
    NotEnoughVectors { needed: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("code {code} out of range at level {level} (K = {k})")]
    CodeOutOfRange { level: usize, code: u32, k: usize },
    #[error("semantic id has {got} codes, expected {expected}")]
    SidLength { expected: usize, got: usize },
    #[error("prefix of length {len} is too long for {levels} levels")]
    PrefixTooLong { len: usize, levels: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("events are not sorted by timestamp")]
    UnsortedEvents,
    #[error("no profile for user {0}")]
    MissingProfile(String),
    #[error("unknown episode {0}")]
    UnknownEpisode(String),
    #[error("split is degenerate: {train} train users, {eval} eval users")]
    DegenerateSplit { train: usize, eval: usize },
    #[error("loss became non-finite at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("constrained decoding requested with an empty prefix trie")]
    EmptyTrie,
    #[error("reports were computed on different evaluation sets ({0} vs {1})")]
    EvalSetMismatch(String, String),
    #[error("incompatible artifacts: {0}")]
    Incompatible(String),
    #[error("malformed {what} at line {line}: {msg}")]
    Format {
        what: &'static str,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

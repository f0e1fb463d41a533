use std::path::PathBuf;

/// Errors surfaced by stack loading, system construction, and solving.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("metadata lists {meta} entries but {images} images were given")]
    MetadataCount { meta: usize, images: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed PFM ({path}): {reason}")]
    PfmFormat { path: PathBuf, reason: String },

    #[error("malformed JSON ({path}): {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no noise parameters for ISO {iso}; profile \"{profile}\" has {available:?}")]
    UnknownIso {
        iso: u32,
        profile: String,
        available: Vec<u32>,
    },

    #[error("system is unsolvable: {0}")]
    Unsolvable(String),

    #[error("exposures {unreachable:?} share no valid pixels with the rest of the stack")]
    Disconnected { unreachable: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, Error>;

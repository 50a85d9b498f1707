use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("PLY format error: {0}")]
    Format(String),

    #[error("scene contains no Gaussians")]
    EmptyScene,

    #[error(
        "all {total} Gaussians were filtered out ({below_opacity} below opacity threshold, {outliers} outliers)"
    )]
    EmptyAfterFilter {
        total: usize,
        below_opacity: usize,
        outliers: usize,
    },

    #[error("degenerate point cloud: {0}")]
    Degenerate(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate partition: {0}")]
    DegeneratePartition(String),

    #[error("style selection for cluster {cluster} found only {found} Gaussians (k = {k_used})")]
    Selection {
        cluster: usize,
        found: usize,
        k_used: usize,
    },

    #[error("{failed} of {total} clusters failed, first failure in cluster {first}: {reason}")]
    Pipeline {
        failed: usize,
        total: usize,
        first: usize,
        reason: String,
    },

    #[error("image encoding failed: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

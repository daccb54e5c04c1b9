use std::path::PathBuf;

use crate::dataset::DatasetError;
use crate::embedding::EmbeddingError;
use crate::mask::MaskError;
use crate::metrics::MetricsError;
use crate::results::CsvError;
use crate::retrieval::RetrievalError;
use crate::synth::SynthError;

/// Process exit codes.
pub mod exit {
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const INTERNAL: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("scene {scene_id}: {source}")]
    Mask {
        scene_id: String,
        #[source]
        source: MaskError,
    },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot encode image: {0}")]
    Image(#[from] image::ImageError),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Retrieval(RetrievalError::InvalidParams(_))
            | Error::Synth(SynthError::InvalidConfig(_)) => exit::CONFIG,
            Error::Invariant(_) | Error::Retrieval(RetrievalError::WorkerPool(_)) => exit::INTERNAL,
            _ => exit::DATA,
        }
    }
}

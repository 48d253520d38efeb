use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: field `{field}`: {message}")]
    Schema { line: usize, field: String, message: String },

    #[error("line {line}: frame {frame} outside [1, {frame_count}]")]
    Range { line: usize, frame: u32, frame_count: u32 },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("frame {frame}: annotation `{person_id}` has no {target} box")]
    TargetMissing { frame: u32, person_id: String, target: &'static str },

    #[error("ground truth has no records")]
    EmptyGt,

    #[error("count series is empty")]
    EmptySeries,

    #[error("nothing to aggregate")]
    EmptyInput,

    #[error("video {video}: {source}")]
    Video {
        video: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn schema(line: usize, field: &str, message: impl Into<String>) -> Self {
        Error::Schema { line, field: field.to_string(), message: message.into() }
    }

    pub fn in_video(self, video: &str) -> Self {
        match self {
            e @ Error::Video { .. } => e,
            e => Error::Video { video: video.to_string(), source: Box::new(e) },
        }
    }

    /// True for errors caused by configuration rather than input data.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Video { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

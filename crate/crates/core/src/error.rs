use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("divisibility error: {0}")]
    Divisibility(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("slide coordinate {coord} lies before the map anchor {anchor}")]
    OutOfFrame { coord: usize, anchor: usize },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("missing tile {0}")]
    MissingTile(PathBuf),
    #[error("level {level} out of range (slide has {levels} levels)")]
    Level { level: usize, levels: usize },

    #[error("degenerate histogram: all mass in bin {0}")]
    DegenerateHistogram(usize),
    #[error("empty histogram")]
    EmptyHistogram,

    #[error("network spec error: {0}")]
    Spec(String),
    #[error("input side {side} does not fit the scorer: {msg}")]
    Size { side: usize, msg: String },

    #[error("expected {expected} offset tiles, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("duplicate dense tile at ROI ({0}, {1})")]
    DuplicateTile(usize, usize),

    #[error("work item {index} failed: {source}")]
    Pipeline {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient region on slide {slide}: {msg}")]
    InsufficientRegion { slide: String, msg: String },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("unknown slide {0}")]
    UnknownSlide(String),
    #[error("need at least one slide of each class")]
    SingleClass,

    #[error("recipe error: {0}")]
    Recipe(String),
    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("config error: {0}")]
    Config(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Usage and configuration problems, as opposed to runtime failures.
    pub fn is_usage(&self) -> bool {
        if let Error::Pipeline { source, .. } = self {
            return source.is_usage();
        }
        matches!(
            self,
            Error::Divisibility(_)
                | Error::Range(_)
                | Error::Config(_)
                | Error::Spec(_)
                | Error::Manifest(_)
                | Error::Recipe(_)
                | Error::Io { .. }
                | Error::Json { .. }
                | Error::MissingTile(_)
                | Error::Format { .. }
        )
    }
}

/// Reads and parses a JSON file.
pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

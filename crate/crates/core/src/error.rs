use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("sample rate mismatch: waveform is {waveform} Hz, frontend expects {expected} Hz")]
    SampleRateMismatch { waveform: u32, expected: u32 },

    #[error("empty waveform")]
    EmptyWaveform,

    #[error("unsupported audio in {path}: {reason}")]
    UnsupportedAudio { path: PathBuf, reason: String },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("charset error: {0}")]
    Charset(String),

    #[error("grapheme {grapheme:?} at position {position} is not in the charset")]
    UnknownGrapheme { grapheme: String, position: usize },

    #[error("label id {id} out of range for charset of size {size}")]
    LabelOutOfRange { id: usize, size: usize },

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("missing audio files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingAudio(Vec<PathBuf>),

    #[error("{}: {source}", .path.display())]
    Utterance {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("input has {frames} frames; the model needs at least {min_frames}")]
    InputTooShort { frames: usize, min_frames: usize },

    #[error("error rate undefined for an empty reference (distance {distance})")]
    EmptyReference { distance: usize },

    #[error("training aborted: {0}")]
    Training(String),

    #[error("checkpoint incompatible: {0}")]
    Incompatible(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

/// Attaches a path to IO errors.
pub(crate) trait IoContext<T> {
    fn with_path(self, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn with_path(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| Error::io(path.display().to_string(), e))
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: channel mismatch ({expected} vs {got})")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("kernel extents must be odd, got {0}x{1}")]
    EvenKernel(usize, usize),

    #[error("{op}: extent {extent} is not divisible by {divisor}")]
    Indivisible {
        op: &'static str,
        extent: usize,
        divisor: usize,
    },

    #[error("{op}: channel count {channels} must be even")]
    OddChannels { op: &'static str, channels: usize },

    #[error("timescale must be strictly positive, got {0}")]
    NonPositiveDelta(f64),

    #[error("ssm kernel requires time-invariant parameters")]
    TokenVarying,

    #[error("{op}: input of {got}x{got_w} is smaller than the required {min}x{min}")]
    TooSmall {
        op: &'static str,
        got: usize,
        got_w: usize,
        min: usize,
    },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("variable was not recorded on this tape")]
    Unrecorded,

    #[error("unknown parameter `{0}`")]
    MissingParam(String),

    #[error("non-finite value produced by `{0}`")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: usize,
        msg: String,
    },

    #[error("{path}: state file version {found} is not supported (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error(
        "parameter set does not match config: {} missing{}, {} extra{}",
        missing.len(),
        preview(missing),
        extra.len(),
        preview(extra)
    )]
    NameSet {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("pair `{pair}`: {source}")]
    Pair {
        pair: String,
        #[source]
        source: Box<Error>,
    },

    #[error("loss diverged at step {0}")]
    Diverged(usize),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

fn preview(names: &[String]) -> String {
    match names {
        [] => String::new(),
        [a] => format!(" ({a})"),
        [a, b] => format!(" ({a}, {b})"),
        [a, b, ..] => format!(" ({a}, {b}, ...)"),
    }
}

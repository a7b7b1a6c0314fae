use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Static configuration problem: bad kernel geometry, channel mismatch, etc.
    #[error("configuration error: {0}")]
    Config(String),

    /// A tensor reached an operation with the wrong shape at run time.
    #[error("shape error at {edge}: expected {expected:?}, got {actual:?}")]
    Shape {
        edge: String,
        expected: [usize; 4],
        actual: [usize; 4],
    },

    #[error("unsupported scaling coefficient phi={phi}: {reason}")]
    UnsupportedPhi { phi: i32, reason: String },

    #[error("graph error at node `{node}`: {reason}")]
    Graph { node: String, reason: String },

    #[error("tensor file format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("parse error at line {line}, column {column}: {reason}")]
    Parse {
        line: usize,
        column: usize,
        reason: String,
    },

    #[error("keypoint out of bounds: person {person}, joint {joint}: ({x}, {y}) outside [0, {bound})")]
    KeypointOutOfBounds {
        person: usize,
        joint: usize,
        x: f32,
        y: f32,
        bound: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

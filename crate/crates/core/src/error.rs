use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("row dominance {r:.4} at tone {tone} exceeds ceiling {ceiling}")]
    DominanceViolation { tone: usize, r: f64, ceiling: f64 },

    #[error("parse error{}{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default(), tone.map(|t| format!(" in tone {t}")).unwrap_or_default())]
    ParseError {
        line: Option<usize>,
        tone: Option<usize>,
        msg: String,
    },

    #[error("zero diagonal entry for user {user}{}", tone.map(|t| format!(" at tone {t}")).unwrap_or_default())]
    SingularDiagonal { tone: Option<usize>, user: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerically singular channel at {freq} Hz{} (condition estimate {condition:.3e})", tone.map(|t| format!(" (tone {t})")).unwrap_or_default())]
    SingularChannel {
        tone: Option<usize>,
        freq: f64,
        condition: f64,
    },

    #[error("precoder entry ({row}, {col}) has component {value} outside [-1, 1]")]
    RangeError { row: usize, col: usize, value: f64 },

    #[error("numerical error: {0}")]
    NumericalError(String),

    #[error("invalid link budget: {0}")]
    InvalidBudget(String),

    #[error("relative loss undefined for user {user}: ideal rate is zero")]
    RelativeLossUndefined { user: usize },

    #[error("bound inapplicable: {0}")]
    BoundInapplicable(String),

    #[error("{requested} bits is below the minimum admissible word length of {min_bits} bits")]
    BitDepthTooSmall { requested: u32, min_bits: u32 },

    #[error("spectral-efficiency floor c = {c:.4} is not positive")]
    FloorNonpositive { c: f64 },

    #[error("target not reachable with at most {max_bits} bits")]
    TargetUnreachable { max_bits: u32 },

    #[error("trial {trial} failed at tone {tone}: {source}")]
    TrialFailed {
        trial: usize,
        tone: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attaches a tone index to errors that carry one.
    pub fn at_tone(self, k: usize) -> Self {
        match self {
            Error::SingularDiagonal { user, .. } => Error::SingularDiagonal {
                tone: Some(k),
                user,
            },
            Error::SingularChannel {
                freq, condition, ..
            } => Error::SingularChannel {
                tone: Some(k),
                freq,
                condition,
            },
            Error::ParseError { line, msg, .. } => Error::ParseError {
                line,
                tone: Some(k),
                msg,
            },
            other => other,
        }
    }
}

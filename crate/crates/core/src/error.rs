use thiserror::Error;

/// One violation found while validating a record collection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub instance_id: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.instance_id, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {field}: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("probability out of range (line {line}): {field} = {value}")]
    ProbabilityOutOfRange {
        line: usize,
        field: &'static str,
        value: f64,
    },

    #[error("duplicate instance_id {instance_id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        instance_id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("validation failed with {} violation(s)", .0.len())]
    Validation(Vec<Violation>),

    #[error("no instances")]
    Empty,

    #[error("more bins than instances ({bins} bins, {instances} instances)")]
    TooManyBins { bins: usize, instances: usize },

    #[error("invalid binning: {0}")]
    InvalidBinning(String),

    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),

    #[error("split counts {validation} + {test} do not sum to {n}")]
    SplitMismatch {
        validation: usize,
        test: usize,
        n: usize,
    },

    #[error("cannot fit calibrator on one class")]
    OneClass,

    #[error("{method} did not converge after {iterations} iterations (objective {objective})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        objective: f64,
    },

    #[error("sample size {size} exceeds {n} instances")]
    SizeTooLarge { size: usize, n: usize },

    #[error("at least 2 repeats are required, got {0}")]
    TooFewRepeats(usize),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// `true` for errors caused by the input data rather than by arithmetic.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::ProbabilityOutOfRange { .. }
                | Error::DuplicateId { .. }
                | Error::Validation(_)
                | Error::Empty
                | Error::TooManyBins { .. }
                | Error::ScoreOutOfRange(_)
                | Error::SplitMismatch { .. }
                | Error::OneClass
                | Error::SizeTooLarge { .. }
                | Error::Format { .. }
        )
    }
}

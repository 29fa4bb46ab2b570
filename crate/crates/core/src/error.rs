use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not a probability distribution: {0}")]
    NotADistribution(String),
    #[error("alphabet must contain at least one symbol")]
    EmptyAlphabet,
    #[error("duplicate alphabet symbol `{0}`")]
    DuplicateSymbol(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("symbol `{0}` is not in the alphabet")]
    SymbolOutOfAlphabet(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no feasible parameter triple: {0}")]
    NoFeasiblePoint(String),
    #[error("degenerate distribution: every conditional ratio equals one")]
    DegenerateRatio,
    #[error("decision tree exceeded the node budget of {limit}")]
    NodeBudgetExceeded { limit: usize },
    #[error("no node was accepted as a bucket")]
    EmptyBucketSet,
    #[error("query collided with no database point")]
    NoCandidate,
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("tuning failed: {0}")]
    TuningFailed(String),
    #[error("no feasible radius: {0}")]
    NoFeasibleRadius(String),
    #[error("perturbation infeasible after {attempts} attempts")]
    PerturbationInfeasible { attempts: usize },
    #[error("invalid rank {0}; ranks start at 1")]
    InvalidRank(i64),
    #[error("every threshold grid point failed to build a usable tree")]
    AllBuildsFailed,
    #[error("cross-validation failed: {0}")]
    CrossValidation(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Binary(#[from] bincode::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("toml: {0}")]
    Toml(String),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error once experiment context has been peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Bad input or configuration, as opposed to a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::NotADistribution(_)
                | Error::EmptyAlphabet
                | Error::DuplicateSymbol(_)
                | Error::ShapeMismatch(_)
                | Error::LengthMismatch { .. }
                | Error::SymbolOutOfAlphabet(_)
                | Error::EmptyTrainingSet
                | Error::InvalidArgument(_)
                | Error::InvalidRank(_)
                | Error::Parse { .. }
                | Error::Json(_)
                | Error::Toml(_)
        )
    }

    pub fn is_budget(&self) -> bool {
        matches!(self.root(), Error::NodeBudgetExceeded { .. })
    }
}

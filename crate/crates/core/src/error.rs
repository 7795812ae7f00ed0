use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("insufficient samples: {needed} client partitions requested from {available} samples")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("empty eval set")]
    EmptyEvalSet,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("subset is not contained in the neighborhood of client {owner}")]
    SubsetNotInNeighborhood { owner: usize },

    #[error(
        "exact enumeration over {players} players exceeds the cap of {cap}; use monte-carlo mode"
    )]
    ExactCapExceeded { players: usize, cap: usize },

    #[error("{clients} clients exceed the exact oracle cap of {cap}; design a smaller experiment")]
    OracleCapExceeded { clients: usize, cap: usize },

    #[error("incomplete round report: no LCV from client {0}")]
    IncompleteRoundReport(usize),

    #[error("undefined distance: zero vector")]
    UndefinedDistance,

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("training diverged for client {client} in round {round}")]
    TrainingDiverged { client: usize, round: usize },

    #[error("dataset parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures caused by numerics rather than by input validation.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::TrainingDiverged { .. } | Error::UndefinedDistance
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

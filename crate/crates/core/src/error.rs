use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A `(agent, hypothesis, symbol)` triple pointing at a likelihood-table entry.
pub type TableEntry = (usize, usize, usize);

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("absolute continuity violated: p({symbol}) > 0 but q({symbol}) = 0")]
    AbsoluteContinuity { symbol: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Some symbol that the truth can emit has zero likelihood under a hypothesis.
    #[error("likelihood lower bound is zero at {} entries, first (agent, hypothesis, symbol) = {:?}", offenders.len(), offenders.first())]
    ZeroLikelihood { offenders: Vec<TableEntry> },

    #[error("graph is not connected")]
    Disconnected,

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("agent {agent} observed symbol {symbol}, which has zero likelihood under every admissible hypothesis")]
    DegenerateLikelihood { agent: usize, symbol: usize },

    #[error("band {band}: r_(l+1) - delta_l - R = {value} must be positive")]
    Positivity { band: usize, value: f64 },

    #[error("mirror-descent oracle did not converge within {iterations} iterations")]
    OracleNonConvergence { iterations: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

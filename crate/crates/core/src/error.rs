use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    Lattice(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("unreachable device set point: {0}")]
    Unreachable(String),
    #[error("protocol constraint violated: {0}")]
    Constraint(String),
    #[error("system of {n} sites exceeds the cap of {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),
    #[error("time step too large: phase per step {phase:.3e} rad exceeds {limit}")]
    DtTooLarge { phase: f64, limit: f64 },
    #[error("negative weight encountered in the operator string")]
    SignProblem,
    #[error("Markov chain failed the stationarity test: {0}")]
    NoEquilibration(String),
    #[error("no shots survived post-selection")]
    EmptySample,
    #[error("degenerate readout rates: 1 - eps - eps' = {0}")]
    DegenerateRates(f64),
    #[error("data do not span the normalisation field {0} T")]
    Span(f64),
    #[error("series too short: {0}")]
    ShortSeries(String),
    #[error("cubic fit has no interior extremum of the derivative")]
    DegenerateFit,
    #[error("value {value} outside tabulated range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid case: {0}")]
    Validation(String),

    #[error("no converged operating state after {0} attempts")]
    InfeasibleRegime(usize),

    #[error("contingency disconnects the network")]
    Disconnected,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no feasible contingency found in {0} rejection draws")]
    NearEmptyFeasibleSet(usize),

    #[error("no feasible weight-{k} pattern reachable by projection")]
    ProjectionInfeasible { k: usize },

    #[error("training diverged at epoch {0}")]
    TrainingDiverged(usize),

    #[error("non-finite value at reverse step t={0}")]
    Sampling(usize),

    #[error("noise schedule too short: terminal alpha_bar = {0} (must be < 0.01)")]
    ScheduleTooShort(f64),

    #[error("capture lower bound is zero; no finite budget meets the miss tolerance")]
    UnboundedBudget,

    #[error("coverage is undefined for an empty severe set")]
    UndefinedCoverage,

    #[error("coverage bound is vacuous: delta - sqrt(eps/2) = {0}")]
    VacuousBound(f64),

    #[error("cannot construct perturbed distribution: {0}")]
    KlConstruction(String),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

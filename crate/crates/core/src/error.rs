use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid instrument configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid pulse shape: {0}")]
    InvalidPulse(String),

    #[error("invalid detection frame: {0}")]
    InvalidFrame(String),

    #[error("detection-time density undefined: zero signal and zero background")]
    UndefinedDensity,

    #[error("pixel ({row}, {col}) reached the {cap}-pulse cap before collecting enough detections")]
    NonTermination { row: usize, col: usize, cap: u64 },

    #[error("objective increased for {iters} consecutive iterations under a fixed step; use backtracking")]
    SolverDiverged { iters: usize },

    #[error("pulse is not log-concave at samples ({0}, {1}, {2})", .index - 1, .index, .index + 1)]
    NotLogConcave { index: usize },

    #[error("quadrature did not converge: achieved error {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("every pixel is missing; neighbor-mean imputation has nothing to propagate")]
    AllMissing,

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("unknown scene kind `{0}`")]
    UnknownSceneKind(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

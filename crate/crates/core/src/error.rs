use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library reports.
///
/// Variants map one-to-one onto the failure modes of the public operations so
/// that callers (the HTTP service, the CLI) can translate them into status
/// codes without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty request: {0}")]
    EmptyRequest(String),
    #[error("invalid task family: {0}")]
    InvalidFamily(String),
    #[error("point outside the search space: {0}")]
    Domain(String),
    #[error("regret unavailable: task {0} has no known optimum")]
    RegretUnavailable(String),
    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("training diverged at step {step}: {detail}")]
    TrainingDiverged { step: usize, detail: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("hypothesis unavailable: {0}")]
    HypothesisUnavailable(String),
    #[error("preference elicitation aborted after {} labels", partial.len())]
    ElicitationAborted { partial: Box<crate::preference::PreferenceDataset> },
    #[error("preference model fit failed: {0}")]
    Fit(String),
    #[error("preference model not fitted")]
    ModelNotFitted,

    #[error("invalid posterior: {0}")]
    InvalidPosterior(String),

    #[error("SHAP requires a nonempty background set")]
    BackgroundRequired,
    #[error("LIME fit failed: {0}")]
    LimeFit(String),

    #[error("operation not allowed in phase {phase}: {detail}")]
    Phase { phase: String, detail: String },
    #[error("session not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("run record error: {0}")]
    Record(String),
    #[error("nothing to report in {0}")]
    NothingToReport(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("cannot normalize column `{column}`: zero variance")]
    ZeroVariance { column: String },

    #[error("no yellow-light samples in trajectory (subject {subject_id}, lap {lap_id})")]
    EmptySupport { subject_id: usize, lap_id: usize },

    #[error("subject {subject_id} has no {missing} laps")]
    Coverage { subject_id: usize, missing: &'static str },

    /// `epoch` and `step` are 1-based; the losses are those of the failing step.
    #[error("training diverged at epoch {epoch}, step {step} (L1={l1}, L2={l2}, L3={l3}, total={total})")]
    Divergence {
        epoch: usize,
        step: usize,
        l1: f64,
        l2: f64,
        l3: f64,
        total: f64,
    },

    #[error("SVR solver did not converge after {iterations} iterations (KKT violation {violation:e})")]
    Convergence { iterations: usize, violation: f64 },

    #[error("insufficient support: {0}")]
    InsufficientSupport(String),

    #[error("undefined class: {0}")]
    UndefinedClass(String),

    #[error("empty series")]
    EmptySeries,

    #[error("fold {fold} (held-out subject {subject_id}, seed {seed}): {source}")]
    Fold {
        fold: usize,
        subject_id: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

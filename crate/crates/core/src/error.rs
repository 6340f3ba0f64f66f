use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("factorial of multi-index {0:?} overflows 64-bit accumulation")]
    FactorialOverflow(Vec<u32>),

    #[error("Jacobian is defective or its eigenbasis is ill-conditioned (condition number {condition:.3e})")]
    DefectiveJacobian { condition: f64 },

    #[error("equilibrium is not asymptotically stable: eigenvalue {index} = {re} + {im}i has non-negative real part")]
    UnstableEquilibrium { index: usize, re: f64, im: f64 },

    #[error(
        "resonance: k = ({}, {}) gives k.lambda within {gap:.3e} of eigenvalue {eigen_index}",
        k.0, k.1
    )]
    Resonance { k: (u32, u32), eigen_index: usize, gap: f64 },

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("point is not on the manifold: residual {residual:.3e} (target norm {target_norm:.3e})")]
    NotOnManifold { residual: f64, target_norm: f64 },

    #[error("expansion already exceeds the NMSE threshold at radius {radius:.3e} (NMSE {nmse:.3e}%)")]
    DivergentExpansion { radius: f64, nmse: f64 },

    #[error("step size underflow at t = {t:.6e} (h = {h:.3e})")]
    Stiffness { t: f64, h: f64 },

    #[error("reference trajectory has zero variance")]
    DegenerateReference,

    #[error("validation failed: {check} = {value:.6e} exceeds threshold {threshold:.6e}")]
    ValidationFailed { check: String, value: f64, threshold: f64 },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ValidationFailed { .. } => 2,
            Error::Resonance { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

use thiserror::Error;

pub type LabResult<T> = Result<T, LabError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid parameter `{name}` = {value}: {constraint}")]
    Parameter {
        name: &'static str,
        value: f64,
        constraint: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: result magnitude {magnitude:e} is not representable ({context})")]
    Range { magnitude: f64, context: String },

    #[error("characteristic diverged at s = {time} (|y| = {radius:e} exceeds blow-up radius {limit:e})")]
    Divergence { time: f64, radius: f64, limit: f64 },

    #[error("time-ordered exponential blew up on path {path} (norm {norm:e})")]
    ExponentialBlowup { path: usize, norm: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("amplitude {amplitude} in dangerous zone {zone} exceeds the admissible cap {cap}")]
    AmplitudeCap { zone: usize, amplitude: f64, cap: f64 },

    #[error("degenerate layout: {0}")]
    DegenerateLayout(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("oracle quadrature did not converge (achieved {achieved:e}, wanted {wanted:e})")]
    Oracle { achieved: f64, wanted: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl LabError {
    pub fn param(name: &'static str, value: f64, constraint: impl Into<String>) -> Self {
        LabError::Parameter {
            name,
            value,
            constraint: constraint.into(),
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub(crate) fn check_finite(name: &'static str, value: f64) -> LabResult<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(LabError::param(name, value, "must be finite"))
    }
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> LabResult<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(LabError::param(name, value, "must be finite and > 0"))
    }
}

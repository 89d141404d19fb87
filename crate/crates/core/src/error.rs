use thiserror::Error;

/// Errors surfaced by the model, coefficient, allocation, and policy layers.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum ModelError {
    /// The Riccati coefficient A1 blows up before the requested span.
    /// Carries the estimated blow-up time in years.
    #[error("affine coefficient A1 diverges near s = {blowup_time:.6} (gamma = {gamma})")]
    SingularityDetected { gamma: f64, blowup_time: f64 },

    /// A bracket expansion or evaluation left the representable range.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    /// An argument fell outside its documented domain.
    #[error("argument out of range: {context}")]
    OutOfRange { context: &'static str },

    /// A parameter set failed validation.
    #[error("invalid parameter: {context}")]
    InvalidParameter { context: &'static str },
}

pub type Result<T> = std::result::Result<T, ModelError>;

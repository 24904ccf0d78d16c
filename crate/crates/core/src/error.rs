use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// A model assumption is breached at run time (intensity bound, claim bound).
    #[error("model violation: {0}")]
    ModelViolation(String),

    #[error("linear algebra error: {0}")]
    LinearAlgebra(String),

    #[error("solver error at cell {cell}: {message}")]
    Solver { cell: usize, message: String },

    #[error("unsupported by the {backend} backend: {reason}")]
    Unsupported { backend: &'static str, reason: String },

    #[error("enumeration too large: {size} exceeds the limit {limit}")]
    TooLarge { size: u64, limit: u64 },

    #[error("competition weights have E[rho] = 1; the interaction term requires E[rho] != 1")]
    SingularInteraction,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<S: Into<String>>(msg: S) -> Error {
    Error::Config(msg.into())
}

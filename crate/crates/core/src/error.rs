//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid physical input (spin count, coupling, quantum numbers).
    #[error("domain error: {0}")]
    Domain(String),

    /// Two values that must describe the same sector or grid do not.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An iterative numerical routine failed to converge.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A fit could not be carried out on the given data.
    #[error("fit error: {0}")]
    Fit(String),

    /// Requested computation exceeds a documented size cap.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

use crate::hamiltonian::Trajectory;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
    /// The partial trajectory holds every sample up to and including `last_good_step`.
    #[error("integration diverged: non-finite state after step {last_good_step}")]
    Diverged {
        last_good_step: usize,
        partial: Box<Trajectory>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return input(format!("{what}: expected length {expected}, got {got}"));
    }
    Ok(())
}

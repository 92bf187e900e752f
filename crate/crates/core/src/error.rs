use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("field is not zero-mean (|f(0)| = {0:e})")]
    NotZeroMean(f64),
    #[error("mollifier undersampled: {0}")]
    Undersampled(String),
    #[error("species has no mass: {0}")]
    EmptySpecies(String),
    #[error("duplicate noise mode {0}")]
    DuplicateMode(String),
    #[error("non-finite state at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("advective CFL violated at step {step}: courant number {courant:.3} > 0.5, reduce dt")]
    Cfl { step: usize, courant: f64 },
    #[error("mesh and direct interaction disagree: median relative difference {0:e}")]
    MeshMismatch(f64),
    #[error("trajectory is not stored densely; {0}")]
    NotDense(String),
    #[error("snapshot format: {0}")]
    Format(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

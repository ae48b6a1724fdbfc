use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("time step {dt} exceeds the CFL limit {limit}")]
    StepSize { dt: f64, limit: f64 },

    #[error("step budget exhausted: {needed} steps needed, budget is {budget}")]
    Resource { needed: usize, budget: usize },

    #[error("operation supports dimension 1 only, got {0}")]
    UnsupportedDimension(usize),

    #[error("malformed snapshot file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

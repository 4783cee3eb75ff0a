use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("step-size error: {0}; refine the time grid")]
    StepSize(String),

    #[error(
        "Picard iteration did not converge at step {step}, node {node} \
         (residual {residual:e} after {iterations} iterations); refine the time grid"
    )]
    PicardDivergence {
        step: usize,
        node: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("singular normal equations at step {step}; use a positive ridge parameter")]
    SingularRegression { step: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

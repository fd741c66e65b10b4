use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("optimizer error: {0}")]
    Optimizer(String),
    #[error("observer error: {0}")]
    Observer(String),
    #[error("inversion error: augmented control matrix is singular (condition estimate {condition:e})")]
    Inversion { condition: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

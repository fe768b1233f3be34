use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Degenerate(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Degenerate(_) => 3,
            CliError::Solver(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

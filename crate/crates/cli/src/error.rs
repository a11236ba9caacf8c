use std::path::PathBuf;

use thiserror::Error;

/// Failure of a command, carrying its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("solver error in {context}: {source}")]
    Solver {
        context: String,
        #[source]
        source: frechet_svt::Error,
    },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Solver { .. } => 3,
            CliError::Verification(_) => 4,
            CliError::Output { .. } => 1,
        }
    }

    pub fn solver(context: impl Into<String>) -> impl FnOnce(frechet_svt::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Solver { context, source }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Input("x".into()).exit_code(), 2);
        let trial = frechet_svt::Error::Trial {
            trial: 4,
            source: Box::new(frechet_svt::Error::DegenerateWeights(0.0)),
        };
        let e = CliError::solver("cell 1")(trial);
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().contains("cell 1") && e.to_string().contains("trial 4"), "{e}");
        assert_eq!(CliError::Verification("x".into()).exit_code(), 4);
    }
}

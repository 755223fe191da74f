use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] sns_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: line {line}: {message}", path.display())]
    Csv { path: PathBuf, line: u64, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{0}")]
    Usage(String),
    #[error("{count} solve(s) did not converge; outputs were written")]
    NotConverged { count: usize },
    #[error("replay output {} differs from the recorded run", path.display())]
    ReplayMismatch { path: PathBuf },
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Io { .. } => "io",
            CliError::Csv { .. } => "csv",
            CliError::Manifest(_) => "manifest",
            CliError::Usage(_) => "usage",
            CliError::NotConverged { .. } => "not_converged",
            CliError::ReplayMismatch { .. } => "replay_mismatch",
        }
    }
}

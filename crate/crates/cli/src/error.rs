use std::path::PathBuf;

/// Errors surfaced by the pipeline stages and the command line.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] conceptsim::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot parse configuration {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("stage {stage} needs {missing}; run `conceptsim {needs}` first")]
    StageDependency {
        stage: &'static str,
        needs: &'static str,
        missing: String,
    },

    #[error("cannot build worker pool: {0}")]
    Pool(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Stable machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => "config",
            CliError::ConfigParse { .. } => "config_parse",
            CliError::StageDependency { .. } => "stage_dependency",
            CliError::Pool(_) => "worker_pool",
            CliError::File { .. } => "io",
        }
    }

    /// `{"kind": ..., "message": ...}` as printed on stderr.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "kind": self.kind(), "message": self.to_string() })
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

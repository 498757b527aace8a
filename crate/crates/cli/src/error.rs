use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pdichotomy::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("task '{task}' failed: {source}")]
    Task {
        task: String,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_configuration() => EXIT_CONFIG,
            CliError::Core(_) => EXIT_NUMERICAL,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Task { source, .. } => source.exit_code(),
        }
    }

    pub fn in_task(self, task: &str) -> Self {
        CliError::Task {
            task: task.to_string(),
            source: Box::new(self),
        }
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

pub type CliResult<T> = std::result::Result<T, CliError>;

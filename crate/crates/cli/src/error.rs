use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("cannot read configuration: {0}")]
    Config(String),

    #[error("{module}: {source}")]
    Core {
        module: &'static str,
        #[source]
        source: fdelay_core::Error,
    },

    #[error("acceptance criteria failed: {0:?}")]
    Verification(Vec<u32>),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for validation problems, 3 for numerical failures, 1 otherwise
    /// (I/O, failed verification).
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Config(_) => 2,
            CliError::Core { source, .. } if source.is_numerical() => 3,
            CliError::Core {
                source: fdelay_core::Error::Io(_),
                ..
            } => 1,
            CliError::Core { .. } => 2,
            CliError::Verification(_) | CliError::Io(_) => 1,
        }
    }
}

/// Tags a core error with the module it came from.
pub trait Tag<T> {
    fn tag(self, module: &'static str) -> Result<T, CliError>;
}

impl<T> Tag<T> for fdelay_core::Result<T> {
    fn tag(self, module: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { module, source })
    }
}

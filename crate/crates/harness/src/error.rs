use hcmarl_core::CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{key}: {msg}")]
    Config { key: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: integrity check failed: {msg}")]
    Integrity { path: String, msg: String },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version {
        path: String,
        found: String,
        expected: u32,
    },

    #[error("invalid argument: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl HarnessError {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        HarnessError::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Stable machine-readable class, printed by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            HarnessError::Config { .. } => "config_error",
            HarnessError::Io { .. } => "io_error",
            HarnessError::Integrity { .. } => "integrity_error",
            HarnessError::Version { .. } => "version_error",
            HarnessError::Usage(_) => "usage_error",
            HarnessError::Core(e) => {
                let mut e = e;
                while let CoreError::Context { source, .. } = e {
                    e = source;
                }
                match e {
                    CoreError::Config(_) | CoreError::Unknown { .. } => "config_error",
                    _ => "runtime_error",
                }
            }
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "usage_error" => 2,
            "config_error" => 3,
            "io_error" => 4,
            "integrity_error" => 5,
            "version_error" => 6,
            _ => 1,
        }
    }
}

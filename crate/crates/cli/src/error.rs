use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown configuration key '{0}'")]
    UnknownKey(String),
    #[error("{key}: unknown equation '{value}'")]
    Equation { key: String, value: String },
    #[error("{key}: unknown solver '{value}'")]
    Solver { key: String, value: String },
    #[error("{key}: cannot parse '{value}'")]
    Malformed { key: String, value: String },
    #[error("{key}: {msg}")]
    Range { key: String, msg: String },
    #[error("output directory {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config file {path}: {msg}")]
    ConfigFile { path: String, msg: String },
    #[error("solver failure: {0}")]
    Solve(#[from] rd_pdhg::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownKey(_) => 10,
            CliError::Equation { .. } => 11,
            CliError::Solver { .. } => 12,
            CliError::Malformed { .. } | CliError::ConfigFile { .. } => 13,
            CliError::Output { .. } => 14,
            CliError::Range { .. } => 15,
            CliError::Solve(_) => 20,
        }
    }

    pub fn range(key: &str, msg: impl Into<String>) -> Self {
        CliError::Range {
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    pub fn output(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Output {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

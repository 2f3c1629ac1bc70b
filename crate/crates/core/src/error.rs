use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An out-of-range numeric parameter (rates, shapes, duty cycles, ...).
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// Cost-model file failed validation; `path` is a JSON-style field path.
    #[error("cost model schema error at `{path}`: {reason}")]
    Schema { path: String, reason: String },

    /// A run or sweep config key is missing or inconsistent.
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    /// Requested batch exceeds the largest profiled size for the model.
    #[error("batch size {size} for model `{model}` exceeds profiled maximum {max_batch}")]
    OomBoundary { model: String, size: u32, max_batch: u32 },

    /// Input file could not be read or parsed.
    #[error("cannot read `{}`: {reason}", path.display())]
    Input { path: PathBuf, reason: String },

    /// Output file could not be written.
    #[error("cannot write `{}`: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A simulator invariant was violated at run time.
    #[error("runtime fault: {0}")]
    Runtime(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn input(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Input {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Output {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for bad input, 3 for faults while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter { .. }
            | Error::Schema { .. }
            | Error::Config { .. }
            | Error::UnknownModel(_)
            | Error::Input { .. } => 2,
            Error::OomBoundary { .. } | Error::Output { .. } | Error::Runtime(_) => 3,
        }
    }
}

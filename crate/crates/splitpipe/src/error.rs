use std::path::PathBuf;

use splitpipe_core::{GraphError, OnlineError, PlanError, QuantError, SimError};

/// Process exit statuses of the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INPUT: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
    pub const INTERNAL: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Online(#[from] OnlineError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn parse(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Plan(PlanError::NoFeasibleStrategy(_)) => exit::INFEASIBLE,
            Error::Internal(_) => exit::INTERNAL,
            _ => exit::INPUT,
        }
    }
}

/// Reads a whole file, naming the path on failure.
pub fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &std::path::Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

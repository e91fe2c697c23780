use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SIMULATION: i32 = 3;
pub const EXIT_LEVEL_CAP: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Simulation(exit_mlmc::Error),
    /// Some runs hit the level cap; their rows are still written.
    #[error("{0} run(s) reached the maximum level without bias convergence")]
    LevelCap(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Simulation(_) => EXIT_SIMULATION,
            Self::LevelCap(_) => EXIT_LEVEL_CAP,
            Self::Io { .. } => EXIT_IO,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<exit_mlmc::Error> for CliError {
    fn from(e: exit_mlmc::Error) -> Self {
        use exit_mlmc::Error as E;
        match e {
            E::InvalidConfig(_) | E::StartOutsideDomain | E::OutOfRange(_) => Self::Config(e.to_string()),
            E::LevelCap { .. } => Self::LevelCap(1),
            _ => Self::Simulation(e),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

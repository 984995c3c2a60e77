//! Scenario runner for reframing clock control: config parsing, trace CSV,
//! analysis reports, plot data, and the verification battery.

pub mod commands;
pub mod config;
pub mod plot;
pub mod trace;

pub use commands::{cmd_analyze, cmd_gen_topology, cmd_run, cmd_verify, AnalysisReport, RunOptions, RunOutput, RunSummary};
pub use config::{emit_config, parse_config, parse_config_str, ScenarioConfig};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// A check failed, a run aborted on a fault, or the simulation errored.
    pub const FAILED: i32 = 1;
    /// Bad config, bad input file, or bad usage.
    pub const USAGE: i32 = 2;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] reframe_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) | CliError::Usage(_) => exit::USAGE,
            CliError::Core(_) | CliError::Io { .. } => exit::FAILED,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }
}

//! Library backing the `trajmamba` binary: every subcommand is a callable
//! function so integration tests drive the exact code the CLI runs.

pub mod bench;
pub mod data;
pub mod eval_cmd;
pub mod gradcheck;
pub mod pretrain_cmd;

pub use bench::{cmd_bench_scan, BenchRow, BenchSummary};
pub use data::{cmd_synth, load_dataset, Dataset, SynthStats};
pub use eval_cmd::{cmd_eval, EvalMode, EvalTask};
pub use gradcheck::{cmd_gradcheck, standard_suite, CheckCase, SuiteOutcome};
pub use pretrain_cmd::{cmd_pretrain_kd, cmd_pretrain_purpose, KdOutcome, PurposeOutcome};

use trajmamba::TrajError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_CHECK: i32 = 5;

/// Command error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: msg.into(),
        }
    }

    pub fn check(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CHECK,
            message: msg.into(),
        }
    }
}

impl From<TrajError> for CliError {
    fn from(e: TrajError) -> Self {
        let code = match &e {
            TrajError::Config(_) => EXIT_USAGE,
            TrajError::Grad(g) => match g {
                gradcore::GradError::NonFinite { .. } => EXIT_NUMERIC,
                _ => EXIT_DATA,
            },
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: EXIT_DATA,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Hex SHA-256 of a file, the content hash echoed into reports.
pub fn file_sha256(path: &std::path::Path) -> CliResult<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    let out = h.finalize();
    Ok(out.iter().map(|b| format!("{b:02x}")).collect())
}

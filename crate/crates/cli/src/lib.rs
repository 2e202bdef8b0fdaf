//! Experiment harness binding the sadkit library: config-driven recipes
//! reproducing the geometry, sweep, alignment, theory, and impulse-probe
//! experiments at desk scale, with deterministic seeds and CSV/PGM/JSON
//! artifacts.

pub mod config;
pub mod pgm;
pub mod recipes;
pub mod report;

/// Harness error: configuration problems exit with code 1, runtime failures
/// with code 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] sadkit::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

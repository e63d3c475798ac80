//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}{}", context_suffix(.context))]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("state diverged (non-finite value) at t = {t}")]
    Diverged { t: f64 },

    #[error("coincident positions: |x - p| = {dist} below tolerance")]
    CoincidentPositions { dist: f64 },

    #[error("degenerate constraint row: {0}")]
    DegenerateRow(String),

    #[error("QP infeasible after fallback for pursuer {pursuer} at t = {t}: {dump}")]
    SafetyFault { pursuer: usize, t: f64, dump: String },

    #[error("scenario invalid: {0}")]
    InvalidScenario(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown preset '{0}' (valid presets: circle, figure8)")]
    UnknownPreset(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed log: {0}")]
    MalformedLog(String),
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

pub type Result<T> = std::result::Result<T, Error>;

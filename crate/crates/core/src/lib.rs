//! Offline, log-driven learning of rate control for real-time video.
//!
//! The crate covers the whole loop: bandwidth traces ([`trace`]), a
//! trace-driven call simulator ([`sim`]), a GCC-style heuristic that
//! produces the "production" telemetry ([`gcc`]), conversion of telemetry
//! into learning transitions ([`telemetry`]), a conservative distributional
//! actor-critic trained purely from those logs ([`learner`]), an
//! approximate oracle ([`oracle`]) and QoE evaluation ([`eval`]).

pub mod trace;
pub mod sim;
pub mod gcc;
pub mod telemetry;
pub mod learner;
pub mod oracle;
pub mod eval;
pub mod pipeline;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Trace(#[from] trace::TraceError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Telemetry(#[from] telemetry::TelemetryError),
    #[error(transparent)]
    Learner(#[from] learner::LearnerError),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
}

/// Short SHA-256 digest of a value's JSON form, embedded in every artifact
/// so outputs can be traced back to the configuration that produced them.
pub fn config_digest<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

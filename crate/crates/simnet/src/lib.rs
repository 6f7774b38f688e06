//! Discrete-event simulator for the withdrawal, transfer, redemption and
//! anchoring protocols. Actors exchange serialized messages over a seeded
//! network; a run is a pure function of its scenario script and seed.

pub mod actors;
pub mod artifact;
pub mod scenario;
pub mod transcript;
pub mod transport;
pub mod wire;
pub mod world;

pub use scenario::Scenario;
pub use world::{run, RunReport, World};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown actor: {0}")]
    UnknownActor(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("step {index} failed: {reason}")]
    StepFailure { index: usize, reason: String },
}

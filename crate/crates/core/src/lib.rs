//! Node failure prediction from device log events.
//!
//! An event-failure signature matrix plus a power-law assumption on failure
//! frequencies is turned into a Bayesian network over binary events. Events
//! extracted from device logs are then fed to the network as evidence and
//! the most probable completion is matched back against the failure
//! signatures.

pub mod augment;
pub mod graph;
pub mod infer;
pub mod model;
pub mod ingest;
pub mod modelfile;
pub mod predict;

pub use model::{parse_matrix, Assignment, EventFailureMatrix, EventId, FailureId};
pub use modelfile::{Model, Structure};

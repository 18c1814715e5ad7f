//! Memory-centric embodied question answering.
//!
//! A hierarchical multi-modal memory (local step entries and global
//! room/target annotations in a dense-vector store) feeds a frontier-based
//! planner, a confidence-based stop criterion and a retrieval-augmented
//! answerer. Everything runs end to end inside a deterministic gridworld
//! with a pluggable model oracle.

pub mod agent;
pub mod config;
pub mod eval;
pub mod error;
pub mod geometry;
pub mod mapping;
pub mod memory;
pub mod oracle;
pub mod retrieval;
pub mod simulator;
pub mod update_gate;

pub use config::HyperParams;
pub use error::{EqaError, Result};

//! Sampled-data state observers for LTI plants whose sensors report over a
//! lossy, round-robin scheduled network.
//!
//! The crate covers gain synthesis through switched-Lyapunov LMIs
//! ([`synth`]), the scheduling protocol ([`protocol`]), an exact
//! event-driven simulator of the closed loop ([`sim`]) and the experiment
//! drivers behind the command-line tool ([`experiments`]).

pub mod config;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod plant;
pub mod protocol;
pub mod sim;
pub mod synth;

pub use linalg::{Matrix, SymmetricMatrix, Vector};
pub use plant::PlantModel;
pub use protocol::{DropoutPlan, Protocol, SchedulerState, SchedulingMode};

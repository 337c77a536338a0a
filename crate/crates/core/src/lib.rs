//! Resilient consensus by credibility-weighted neighbor averaging.
//!
//! Normal nodes score each neighbor by how far its reported state sits from
//! their own, accumulate the scores into a credibility, and weight neighbors
//! by normalized credibility. Faulty nodes that keep injecting random inputs
//! lose credibility and end up with near-zero weight.
//!
//! * [`topology`]: digraphs, per-step random graphs, rootedness checks.
//! * [`fault`]: node classes and their random inputs.
//! * [`wla`]: reward schedule, credibility ledgers, weight rows.
//! * [`consensus`]: the scalar simulator, metrics and the fault-probability sweep.
//! * [`clock`]: logical clock synchronization with skew and offset ledgers.
//! * [`config`], [`export`], [`harness`]: config files, output files, presets.
//! * [`rng`]: keyed random substreams.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clock;
pub mod config;
pub mod consensus;
pub mod error;
pub mod export;
pub mod fault;
pub mod harness;
pub mod rng;
pub mod topology;
pub mod wla;

pub use error::{Error, Result};

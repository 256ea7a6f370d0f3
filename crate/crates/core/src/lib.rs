//! Trust-aware autonomous intersection management.
//!
//! Subjective-logic trust bookkeeping, a reservation-based intersection
//! simulator, the controllers that run on it, and a tabular Q-learning agent
//! that picks per-vehicle reservation buffers.

pub mod config;
pub mod controller;
pub mod episode;
pub mod error;
pub mod harness;
pub mod monitor;
pub mod rl;
pub mod sim;
pub mod sl;
pub mod store;

pub use error::{Error, Result};

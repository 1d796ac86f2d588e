//! Continuously measured two-level system: phi dynamics, Fokker-Planck
//! solver and stochastic entropy production.

pub mod entropy;
pub mod fpe;
pub mod model;
pub mod sde;
pub mod stats;

pub use model::{BlochState, ModelError, ModelParams, PhiState, Schedule, Strengths};

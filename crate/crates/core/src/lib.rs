//! Flow-level model of best-effort data networks.
//!
//! Documents arrive on fixed routes as Poisson processes with exponential
//! sizes and share link bandwidth under either the conservative *min*
//! policy or max-min fairness. The crate provides
//!
//! * topology generators and load computation ([`network`]),
//! * the two bandwidth allocation policies and their checkers ([`allocation`]),
//! * an exact event-driven fluid simulator, including a coupled run of both
//!   policies on one probability space ([`sim`]),
//! * a solver for the mean-field fixed-point equations of large symmetrical
//!   networks ([`meanfield`]),
//! * the heavy-traffic constant `A` from its ODE characterisation
//!   ([`heavy_traffic`]),
//! * the command-line harness ([`cli`]).

pub mod allocation;
pub mod cli;
mod error;
pub mod heavy_traffic;
pub mod meanfield;
pub mod network;
pub mod sim;

pub use error::{Error, Result};

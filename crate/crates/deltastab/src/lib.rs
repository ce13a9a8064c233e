//! deltastab: joint training and sampling-based certification of neural
//! incremental-stability certificates and controllers for black-box
//! continuous-time dynamics.
//!
//! The crate is organized around one pipeline:
//!
//! 1. [`sampling`] lays deterministic grid covers over the state and
//!    external-input boxes and checks their resolution.
//! 2. [`plant`] wraps the dynamics — built-in benchmarks, closures, or an
//!    external process spoken to over a line protocol — and estimates the
//!    bounds the certificate needs.
//! 3. [`net`] and [`tape`] provide the function approximators and the
//!    reverse-mode differentiation that trains them.
//! 4. [`lipcert`] certifies network Lipschitz constants with a semidefinite
//!    feasibility test and estimates dynamics constants from samples.
//! 5. [`synth`] ties everything together: sample-based residuals, the
//!    training loop, the validity condition, and the final certificate.
//! 6. [`barrier`] supplies the polynomial barrier that keeps closed-loop
//!    trajectories inside the analyzed region.
//!
//! The command-line entry points in [`cli`] expose each stage as a
//! subcommand; [`config`] holds the on-disk run description they share.

pub mod barrier;
pub mod cli;
pub mod config;
pub mod domain;
pub mod error;
pub mod lipcert;
pub mod net;
pub mod netio;
pub mod plant;
pub mod sampling;
pub mod synth;
pub mod tape;

pub use error::{Error, Result};

//! Seed-reproducible simulator for an autonomously operating multi-ion
//! optical clock.
//!
//! The crate is split along the clock's subsystems:
//!
//! * [`config`] holds the species, site, servo and simulation parameters and
//!   the calibrated preset for the four-site Yb+ trap.
//! * [`physics`] evaluates thermally dephased shelving probabilities, photon
//!   counting and the ion loss / dark-state processes.
//! * [`lo`] synthesizes the local-oscillator frequency error.
//! * [`servo`] runs the interleaved two-integrator clock protocol.
//! * [`ensemble`] is the loading and shuttling state machine.
//! * [`analysis`] covers Allan deviation, projection noise, Rabi-flop fitting
//!   and per-site shift diagnostics.
//!
//! Interchangeable algorithm variants (Allan estimators, side schedules,
//! shift groupings) implement a common trait and are looked up by name
//! through [`registry::Registry`]. LO noise terms are trait objects too, but
//! are assembled directly from the noise levels in the config.

// Negated float comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Small dense linear algebra reads better with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod config;
pub mod ensemble;
pub mod lo;
pub mod output;
pub mod physics;
pub mod registry;
pub mod rng;
pub mod servo;

pub use config::{default_preset, validate_config, ValidatedConfig};
pub use servo::{run_clock, RunOutput};

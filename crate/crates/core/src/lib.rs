//! Brownian reduction laboratory.
//!
//! Squared norms `p_j` of measurement channels evolve as a zero-mean diffusion
//! on the probability simplex, stopped when a channel reaches zero. Every run
//! ends on a vertex, and a vertex `j` is reached with probability `p_j(0)`.
//! The crate provides:
//!
//! - [`simplex`]: the Monte Carlo engine (norm vectors, correlation models,
//!   trajectories and ensembles with per-trajectory random streams);
//! - [`fokker_planck`]: the two-channel density equation on the unit interval
//!   with absorbing ends, absorbed-mass bookkeeping and spectral decay;
//! - [`quantum`]: a two-track system coupled to a collective coordinate,
//!   integrated with a unitary split-step scheme, plus an amplitude/phase
//!   diagnostic;
//! - [`series`]: norm time series and the windowed correlation estimator;
//! - [`mixture`]: weighted ensembles of norm trajectories;
//! - [`scenario`]: TOML scenarios, summary reports and CSV output;
//! - [`verify`]: the numbered acceptance checks, shared by the CLI and tests.
//!
//! Runnable walkthroughs live in `examples/`; `cargo run --example born_rule`
//! is a good starting point.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fokker_planck;
pub mod mixture;
pub mod quantum;
pub mod rng;
pub mod scenario;
pub mod series;
pub mod simplex;
pub mod verify;

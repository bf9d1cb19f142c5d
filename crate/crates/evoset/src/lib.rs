//! Random walks among time-varying edge conductances and their evolving-set
//! processes.
//!
//! A walk environment is a finite graph whose symmetric edge conductances
//! follow piecewise-constant integer-time schedules. On top of it this
//! crate builds, exactly where exactness is possible:
//!
//! * multi-step transition kernels and heat kernels ([`exact_chain`]);
//! * the evolving-set process: enumerated successor laws, subset-space
//!   dynamic programming, the size-biased conditioned chain, the walk/set
//!   coupling, and the one-step drift inequalities ([`evolving_set`]);
//! * isoperimetric constants and growth functions ([`isoperimetry`]);
//! * the continuous-time embedding of the set-mass martingale
//!   ([`embedding`]);
//! * constant-speed continuous-time walks by Poisson thinning ([`csrw`]);
//! * percolation clusters and growing-subgraph schedules ([`percolation`]);
//! * a seeded, machine-readable experiment harness ([`harness`]).
//!
//! Identity checks run in two scalar lanes sharing one implementation:
//! `f64` at 1e-12 tolerance and exact rationals where equality is exact.
//! See the book under `book/` for a guided tour; its code listings compile
//! and run as this crate's doc-tests.

// Negated comparisons on weights are deliberate: in the generic scalar
// lane `!(w > zero)` must treat incomparable values as failures.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod csrw;
pub mod doc;
pub mod dyn_graph;
pub mod embedding;
pub mod error;
pub mod evolving_set;
pub mod exact_chain;
pub mod fuzz;
pub mod harness;
pub mod isoperimetry;
pub mod normal;
pub mod percolation;
pub mod seeding;
pub mod stats;
pub mod weight;

pub mod guide;

pub use error::{Error, Result};
pub use weight::Weight;

/// The `f64` lane of an environment.
pub type DynEnvF = dyn_graph::DynEnv<f64>;
/// The exact-rational lane of an environment.
pub type DynEnvQ = dyn_graph::DynEnv<num_rational::BigRational>;

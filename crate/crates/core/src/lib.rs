//! Pooled infection testing.
//!
//! Samples from several subjects are combined and tested at once; a pool is
//! positive when any member is infected. This crate picks pool parameters
//! for a given prevalence, builds concrete pooling plans, and simulates two
//! identification strategies against perfect and noisy tests:
//!
//! * [`adaptive`]: round-based divide and conquer, re-pooling the members of
//!   positive pools with a shrinking pool size until pools hold one subject.
//! * [`groupcode`]: a single non-adaptive round in which every subject sits in
//!   `k` groups with a unique signature; a subject is called positive when all
//!   of its groups are positive, optionally followed by individual retests.
//!
//! [`theory`] holds the closed-form quantities, [`testbed`] the synthetic
//! populations and the pooled-test oracle, and [`harness`] the seeded
//! Monte Carlo runner.

pub mod adaptive;
pub mod error;
pub mod groupcode;
pub mod harness;
pub mod testbed;
pub mod theory;

pub use error::{Error, Result};
pub use theory::Prevalence;

//! Utility-optimal user-centric data obfuscation.
//!
//! The library constructs obfuscation mechanisms that minimize utility loss
//! subject to privacy guarantees (distortion privacy, metric differential
//! privacy, or both jointly), and evaluates them against optimal and
//! Bayesian inference attacks. Everything reduces to linear programs solved
//! by the built-in [`lp`] module.
//!
//! Module map:
//! - [`lp`]: sparse linear-program model and interior-point solver,
//! - [`model`]: label spaces, priors, mechanisms, attacks, distance tables,
//!   and the scalar privacy/utility metrics,
//! - [`attack`]: adversary strategies (optimal, Bayesian, prior-free),
//! - [`mechanism`]: utility-optimal mechanism construction,
//! - [`geo`]: grid-world instantiation (metric tables, traces, priors),
//! - [`harness`]: experiment scenarios emitting CSV.

pub mod attack;
pub mod geo;
pub mod harness;
pub mod lp;
pub mod mechanism;
pub mod model;

pub use model::{Attack, LabelSpace, Mechanism, MetricSet, Prior, PrivacyBounds};

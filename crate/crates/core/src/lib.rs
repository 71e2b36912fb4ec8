//! Alpha-fair uplink transmit power allocation.
//!
//! The crate covers the whole workflow:
//!
//! - [`net_model`]: topologies, Shannon rates under interference, alpha-fairness.
//! - [`oracle`]: exhaustive log-grid and multi-start projected-gradient solvers.
//! - [`reduction`]: maximum-independent-set to power-allocation construction and its check.
//! - [`kan`]: Kolmogorov-Arnold networks with B-spline activations, training,
//!   pruning, symbolic export and an inference cost model.
//! - [`pipeline`]: labelled dataset generation, per-base-station training, evaluation.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled (the default) and plain iterators otherwise. Results are
//! identical either way.

pub mod error;
pub mod kan;
pub mod net_model;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod reduction;
pub mod seed;

pub use error::{Error, Result};

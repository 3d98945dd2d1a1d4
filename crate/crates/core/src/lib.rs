//! Metric learning as a feasibility problem solved by alternating projections.
//!
//! An embedding `f(x; θ)` should map same-class samples within `ε⁺` of each
//! other and different-class samples at least `ε⁻` apart. The full constraint
//! set is the intersection of relaxed sets, each anchoring the constraints at
//! one representative sample per class. Training cycles through the relaxed
//! sets, approximating each projection by `M` regularized mini-batch steps on
//! batches built around the current representatives.

pub mod config;
pub mod datakit;
pub mod error;
pub mod evalmetrics;
pub mod feasibility;
pub mod gradcheck;
pub mod losses;
pub mod numcore;
pub mod optimizer;
pub mod sampling;
pub mod scheduler;

pub use error::{ProfsError, Result};

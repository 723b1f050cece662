//! Sequential hypothesis-testing laboratory.
//!
//! E-processes and stopping rules for anytime-valid tests of a mean, dual solvers
//! for KL_inf over bounded distributions, closed-form sample-complexity curves,
//! and a seeded parallel Monte-Carlo harness that checks them.
//!
//! Module layout:
//!
//! - [`distributions`]: Bernoulli/discrete and Gaussian models, seeded streams, KL.
//! - [`klinf`]: KL_inf and restricted-dual solvers, concentration constants.
//! - [`eprocess`]: per-trajectory e-process kernels.
//! - [`stopping`]: threshold stopping and the geometric-copies meta-algorithm.
//! - [`bounds`]: reference curves (expected-sample floors, gap complexity).
//! - [`simharness`]: Monte-Carlo experiments and CSV output.

pub mod bounds;
pub mod distributions;
pub mod eprocess;
pub mod error;
pub mod klinf;
pub mod simharness;
pub mod stopping;

pub use bounds::{f_delta, klinf_gaussian, lb_expected_samples, BoundCurve, BoundKind};
pub use distributions::{
    empirical, kl_divergence, DiscreteBoundedDist, Dist, GaussianDist, SeededStream,
};
pub use eprocess::{ConstraintSystem, EProcessState, KernelConfig, KernelKind, PreparedKernel};
pub use error::{Error, Result};
pub use klinf::{
    concentration_constants, dh_boundary, hoeffding_dev_bound, kl_bernoulli, klinf_bounded,
    klinf_tilde, ConcentrationConstants, DualSolution,
};
pub use simharness::{ExperimentConfig, ScalingResult, TauEstimate};
pub use stopping::{run_meta, run_threshold, MetaRecord, MetaSchedule, StoppingRecord};

//! Exact bounce-skeleton simulation of the Langevin process (integrated
//! Brownian motion) reflected at a partially elastic boundary, together with
//! the renewal machinery needed to start it from the origin with zero
//! velocity, and the Monte Carlo checks that verify every piece.
//!
//! Module map:
//!
//! * [`archlaw`]: densities, CDFs and exact samplers for one normalized arch.
//! * [`skeleton`]: bounce times and log-velocities, accumulation diagnostics.
//! * [`sde`]: a discretized integrator used as an independent oracle.
//! * [`renewal`]: ladder processes, the renewal function, conditioned walks,
//!   the stationary overshoot law and the undershoot/overshoot law.
//! * [`stationary`]: two-sided stationary windows, the level shift, the time
//!   functional and the entrance sampler.
//! * [`stats`]: ECDFs, Kolmogorov-Smirnov, chi-square, bootstrap.
//! * [`verify`]: the acceptance checks and the JSON report.

// NaN must fail the positivity tests on inputs, hence `!(x > 0.0)` throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archlaw;
pub mod error;
pub mod quad;
pub mod renewal;
pub mod rng;
pub mod sde;
pub mod skeleton;
pub mod stationary;
pub mod stats;
pub mod verify;

pub use archlaw::{ArchSample, Elasticity, Regime};
pub use error::{Error, Result};
pub use rng::{Stream, StreamFactory};
pub use skeleton::BounceSkeleton;
pub use stationary::{EntranceSample, StationaryWindow};

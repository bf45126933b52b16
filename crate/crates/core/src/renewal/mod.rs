//! Random-walk renewal machinery for an arbitrary step law: ladder processes,
//! the stationary overshoot law, the renewal function of the descending
//! ladder, walks conditioned to stay above a barrier, and the
//! undershoot/overshoot law used at the critical elasticity.

pub mod conditioned;
pub mod doob;
pub mod ensemble;
pub mod identities;
pub mod ladder;
pub mod nu;
pub mod overshoot;
pub mod renewal_fn;
pub mod step_law;

pub use ladder::{ascending_ladder, descending_ladder, estimate_mu_h, Direction, LadderSample};
pub use overshoot::{sample_overshoot_m, OvershootLaw};
pub use renewal_fn::{hbar, renewal_function_h, RenewalFunction};
pub use step_law::{GaussianStep, LogVelocityStep, PointMass, StepLaw};

//! Walks with positive drift conditioned to stay above 0 at all times `n ≥ 1`,
//! sampled exactly up to a residual ruin probability.
//!
//! A proposal runs the plain walk from `x` and is rejected as soon as it steps
//! to `(-∞, 0]`. It is accepted once it has made `horizon` steps and sits at or
//! above `escape_level`. The walk after acceptance is unconstrained, so the
//! accepted law differs from the exact conditioned law by at most the ruin
//! probability from `escape_level`, which a [`RuinCertificate`] bounds.

use super::step_law::StepLaw;
use crate::error::{domain, Error, Result};
use crate::rng::{fork, par_chunks};
use rand::Rng;

/// Proposals tried before giving up on one conditioned path.
pub const DEFAULT_ATTEMPT_BUDGET: u64 = 10_000_000;

/// Largest residual ruin probability tolerated at the escape level.
pub const MAX_RUIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConditionedPath {
    /// `S_0 = x, S_1, ..., S_n` with `n ≥ horizon`.
    pub positions: Vec<f64>,
    /// Proposals used, including the accepted one.
    pub attempts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Attempt {
    Accepted,
    /// Stepped to `(-∞, 0]` at this index.
    Rejected(usize),
}

fn check_drift<L: StepLaw>(law: &L) -> Result<()> {
    if !(law.mean() > 0.0) {
        return domain(format!("conditioning by rejection needs a positive drift, {} has mean {}", law.name(), law.mean()));
    }
    Ok(())
}

/// One proposal from `x`. `path` is cleared and refilled.
fn propose<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    x: f64,
    horizon: usize,
    escape_level: f64,
    max_len: usize,
    path: &mut Vec<f64>,
) -> Attempt {
    path.clear();
    path.push(x);
    let mut s = x;
    let mut n = 0usize;
    while n < horizon || s < escape_level {
        if n >= max_len {
            // A drifting walk that lingers this long below the escape level
            // counts as rejected; the caller sizes max_len far beyond need.
            return Attempt::Rejected(n);
        }
        s += law.sample(rng);
        n += 1;
        path.push(s);
        if s <= 0.0 {
            return Attempt::Rejected(n);
        }
    }
    Attempt::Accepted
}

/// A path of the walk from `x` conditioned on `S_n > 0` for `1 ≤ n ≤ horizon`
/// and on reaching `escape_level` no earlier than step `horizon`.
pub fn conditioned_walk_rejection<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    x: f64,
    horizon: usize,
    escape_level: f64,
) -> Result<ConditionedPath> {
    conditioned_walk_rejection_with_budget(rng, law, x, horizon, escape_level, DEFAULT_ATTEMPT_BUDGET)
}

pub fn conditioned_walk_rejection_with_budget<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    x: f64,
    horizon: usize,
    escape_level: f64,
    budget: u64,
) -> Result<ConditionedPath> {
    check_drift(law)?;
    if !x.is_finite() || !(escape_level > 0.0) {
        return domain("start must be finite and the escape level positive");
    }
    let max_len = max_walk_length(law, x, horizon, escape_level);
    let mut path = Vec::with_capacity(horizon + 1);
    for attempt in 1..=budget {
        if propose(rng, law, x, horizon, escape_level, max_len, &mut path) == Attempt::Accepted {
            return Ok(ConditionedPath { positions: path, attempts: attempt });
        }
    }
    Err(Error::BudgetExceeded { what: format!("conditioned walk from {x} under {}", law.name()), budget: budget as usize, partial: None })
}

fn max_walk_length<L: StepLaw>(law: &L, x: f64, horizon: usize, escape_level: f64) -> usize {
    let need = ((escape_level - x).max(0.0) / law.mean()).ceil() as usize;
    horizon.max(100 * need + 10_000)
}

/// Monte Carlo acceptance probability `P_x(S_n > 0 for 1 ≤ n ≤ N*)`, where
/// `N*` is the first time at or after `horizon` the walk is above the escape level.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AcceptanceEstimate {
    pub estimate: f64,
    pub se: f64,
    pub n: usize,
}

pub fn acceptance_probability<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    x: f64,
    horizon: usize,
    escape_level: f64,
    n: usize,
) -> Result<AcceptanceEstimate> {
    check_drift(law)?;
    if n < 2 {
        return domain("acceptance estimate needs at least two proposals");
    }
    let max_len = max_walk_length(law, x, horizon, escape_level);
    let factory = fork(rng);
    let hits: Vec<u64> = par_chunks(&factory, "acceptance", n, 8192, |s, len| {
        let mut path = Vec::new();
        let k = (0..len).filter(|_| propose(s, law, x, horizon, escape_level, max_len, &mut path) == Attempt::Accepted).count();
        vec![k as u64]
    });
    let p = hits.iter().sum::<u64>() as f64 / n as f64;
    Ok(AcceptanceEstimate { estimate: p, se: (p * (1.0 - p) / n as f64).sqrt(), n })
}

/// Monte Carlo bound on the probability that the walk started at
/// `escape_level` ever enters `(-∞, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RuinCertificate {
    pub escape_level: f64,
    pub ruined: usize,
    pub n: usize,
    pub estimate: f64,
    /// `estimate + 3 SE + 3/n`; the `3/n` term keeps the bound honest when no
    /// ruin is observed.
    pub upper_bound: f64,
}

impl RuinCertificate {
    pub fn holds(&self) -> bool {
        self.upper_bound < MAX_RUIN
    }
}

/// Paths start at `escape_level` and stop at ruin or once they pass
/// `escape_level + safe_margin`, from where ruin is treated as impossible.
/// With the log-velocity step the Lundberg exponent is at least 1/2 for
/// `c ≥ 1/2`, so a margin of 60 leaves less than `e^{-30}` unaccounted.
pub fn ruin_certificate<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    escape_level: f64,
    n: usize,
    safe_margin: f64,
) -> Result<RuinCertificate> {
    check_drift(law)?;
    if n < 100 || !(safe_margin > 0.0) {
        return domain("ruin certificate needs n >= 100 and a positive margin");
    }
    let top = escape_level + safe_margin;
    let cap = (100.0 * top / law.mean()).ceil() as usize + 10_000;
    let factory = fork(rng);
    let ruined: Vec<u64> = par_chunks(&factory, "ruin", n, 8192, |s, len| {
        let mut k = 0u64;
        for _ in 0..len {
            let mut x = escape_level;
            for _ in 0..cap {
                x += law.sample(s);
                if x <= 0.0 {
                    k += 1;
                    break;
                }
                if x >= top {
                    break;
                }
            }
        }
        vec![k]
    });
    let ruined = ruined.iter().sum::<u64>() as usize;
    let nf = n as f64;
    let p = ruined as f64 / nf;
    Ok(RuinCertificate { escape_level, ruined, n, estimate: p, upper_bound: p + 3.0 * (p * (1.0 - p) / nf).sqrt() + 3.0 / nf })
}

/// Draws conditioned paths once a ruin certificate has been obtained.
#[derive(Debug, Clone)]
pub struct ConditionedWalkSampler<L: StepLaw> {
    pub law: L,
    pub horizon: usize,
    pub escape_level: f64,
    pub certificate: RuinCertificate,
    pub budget: u64,
}

impl<L: StepLaw> ConditionedWalkSampler<L> {
    /// Certifies `escape_level` with `n_certify` auxiliary paths; fails if the
    /// ruin bound is not below [`MAX_RUIN`].
    pub fn new<R: Rng + ?Sized>(rng: &mut R, law: L, horizon: usize, escape_level: f64, n_certify: usize) -> Result<Self> {
        let certificate = ruin_certificate(rng, &law, escape_level, n_certify, 60.0)?;
        if !certificate.holds() {
            return domain(format!(
                "escape level {escape_level} leaves ruin probability up to {:.2e} (limit {MAX_RUIN:.0e})",
                certificate.upper_bound
            ));
        }
        Ok(Self { law, horizon, escape_level, certificate, budget: DEFAULT_ATTEMPT_BUDGET })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, x: f64) -> Result<ConditionedPath> {
        conditioned_walk_rejection_with_budget(rng, &self.law, x, self.horizon, self.escape_level, self.budget)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archlaw::Elasticity;
    use crate::renewal::step_law::{GaussianStep, LogVelocityStep, PointMass};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn rejects_non_positive_drift() {
        let crit = LogVelocityStep::new(Elasticity::critical());
        assert!(matches!(conditioned_walk_rejection(&mut rng(1), &crit, 1.0, 10, 5.0), Err(Error::Domain(_))));
        assert!(ruin_certificate(&mut rng(1), &GaussianStep { mean: -0.1, sd: 1.0 }, 5.0, 1000, 10.0).is_err());
    }

    #[test]
    fn point_mass_always_accepted() {
        let p = conditioned_walk_rejection(&mut rng(2), &PointMass { at: 1.0 }, -0.5, 3, 2.0).unwrap();
        assert_eq!(p.positions, vec![-0.5, 0.5, 1.5, 2.5]);
        assert_eq!(p.attempts, 1);
    }

    #[test]
    fn far_start_accepts_almost_always() {
        // From x = 40 with escape level 20 the walk essentially never comes back.
        let law = LogVelocityStep::new(Elasticity::new(1.0).unwrap());
        let a = acceptance_probability(&mut rng(3), &law, 40.0, 50, 20.0, 20_000).unwrap();
        let cert = ruin_certificate(&mut rng(4), &law, 40.0, 20_000, 60.0).unwrap();
        assert!(a.estimate >= 1.0 - cert.upper_bound, "{a:?} {cert:?}");
    }

    #[test]
    fn certificate_at_escape_level_15() {
        for c in [0.5, 1.0] {
            let law = LogVelocityStep::new(Elasticity::new(c).unwrap());
            let cert = ruin_certificate(&mut rng(5), &law, 15.0, 100_000, 60.0).unwrap();
            assert!(cert.holds(), "c = {c}: {cert:?}");
        }
        // A weakly drifting Gaussian walk is ruined from 15 with probability e^{-2·0.05·15} ≈ 0.22.
        let weak = ruin_certificate(&mut rng(6), &GaussianStep { mean: 0.05, sd: 1.0 }, 15.0, 2000, 60.0).unwrap();
        assert!(!weak.holds() && (weak.estimate - 0.22).abs() < 0.05, "{weak:?}");
    }

    #[test]
    fn gaussian_acceptance_matches_ruin_formula() {
        // For a Gaussian walk with drift m and unit variance started at x, the
        // probability of staying positive is close to 1 - e^{-2mx} for large x.
        let law = GaussianStep { mean: 0.2, sd: 1.0 };
        let a = acceptance_probability(&mut rng(7), &law, 8.0, 1, 60.0, 20_000).unwrap();
        let approx = 1.0 - (-2.0f64 * 0.2 * (8.0 + 0.583)).exp();
        assert!((a.estimate - approx).abs() < 0.02, "{a:?} vs {approx}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn accepted_paths_stay_positive(seed in 0u64..1000, x in -3.0f64..3.0, c in 0.4f64..2.0) {
            let law = LogVelocityStep::new(Elasticity::new(c).unwrap());
            let p = conditioned_walk_rejection(&mut rng(seed), &law, x, 20, 10.0).unwrap();
            prop_assert!(p.positions.len() >= 21);
            prop_assert!(p.positions[1..].iter().all(|s| *s > 0.0));
            prop_assert!(*p.positions.last().unwrap() >= 10.0);
            prop_assert_eq!(p.positions[0], x);
        }
    }
}

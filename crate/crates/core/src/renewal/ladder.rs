//! Strict ladder processes of a random walk started at 0.
//!
//! At a zero-mean step law the ladder epochs have infinite mean (their tails
//! decay like `n^{-1/2}`), so every ladder step runs under a step budget. Single
//! ladder samples report exhaustion as an error; pools redraw the exhausted
//! ladder step, count the redraws and fail if they exceed 1%.

use super::step_law::StepLaw;
use crate::error::{Error, Result};
use crate::rng::{fork, par_chunks};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Direction {
    Ascending,
    Descending,
}

/// Record values `H_k` (or `D_k`) and their epochs `n_k`, with `H_0 = 0`, `n_0 = 0`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LadderSample {
    pub direction: Direction,
    pub heights: Vec<f64>,
    pub epochs: Vec<u64>,
}

/// Default number of walk steps allowed for one ladder step.
pub const DEFAULT_LADDER_BUDGET: u64 = 1_000_000;

/// Largest fraction of redrawn ladder steps a pool tolerates.
pub const MAX_TRUNCATED_FRACTION: f64 = 0.01;

/// First strict ladder height of a fresh walk, with its epoch, or `None` if the
/// budget runs out. Descending heights are returned as negative numbers.
pub fn first_ladder_height<L: StepLaw, R: Rng + ?Sized>(rng: &mut R, law: &L, dir: Direction, budget: u64) -> Option<(f64, u64)> {
    let possible = match dir {
        Direction::Ascending => law.prob_positive() > 0.0,
        Direction::Descending => law.prob_negative() > 0.0,
    };
    if !possible {
        return None;
    }
    let mut s = 0.0;
    for n in 1..=budget {
        s += law.sample(rng);
        let crossed = match dir {
            Direction::Ascending => s > 0.0,
            Direction::Descending => s < 0.0,
        };
        if crossed {
            return Some((s, n));
        }
    }
    None
}

fn ladder<L: StepLaw, R: Rng + ?Sized>(rng: &mut R, law: &L, k: usize, budget: u64, dir: Direction) -> Result<LadderSample> {
    if k == 0 {
        return crate::error::domain("a ladder sample needs k >= 1");
    }
    let mut sample = LadderSample { direction: dir, heights: vec![0.0], epochs: vec![0] };
    for _ in 0..k {
        match first_ladder_height(rng, law, dir, budget) {
            Some((h, n)) => {
                let (last_h, last_n) = (*sample.heights.last().unwrap(), *sample.epochs.last().unwrap());
                sample.heights.push(last_h + h);
                sample.epochs.push(last_n + n);
            }
            None => {
                return Err(Error::BudgetExceeded {
                    what: format!("{dir:?} ladder of {}", law.name()),
                    budget: budget as usize,
                    partial: Some(Box::new(sample)),
                })
            }
        }
    }
    Ok(sample)
}

/// `k` strict ascending ladder points of the walk from 0.
pub fn ascending_ladder<L: StepLaw, R: Rng + ?Sized>(rng: &mut R, law: &L, k: usize, budget: u64) -> Result<LadderSample> {
    ladder(rng, law, k, budget, Direction::Ascending)
}

/// `k` strict descending ladder points of the walk from 0.
pub fn descending_ladder<L: StepLaw, R: Rng + ?Sized>(rng: &mut R, law: &L, k: usize, budget: u64) -> Result<LadderSample> {
    ladder(rng, law, k, budget, Direction::Descending)
}

/// Independent first ladder heights, as absolute values.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LadderPool {
    pub direction: Direction,
    pub heights: Vec<f64>,
    pub epochs: Vec<u64>,
    /// Number of ladder steps that exhausted the budget and were redrawn.
    pub truncated: usize,
}

impl LadderPool {
    pub fn mean_se(&self) -> (f64, f64) {
        crate::stats::mean_se(&self.heights)
    }
}

/// Draws `n` independent first ladder heights, in parallel chunks.
pub fn ladder_pool<L: StepLaw, R: Rng + ?Sized>(rng: &mut R, law: &L, n: usize, dir: Direction, budget: u64) -> Result<LadderPool> {
    let factory = fork(rng);
    let draws: Vec<Option<(f64, u64, usize)>> = par_chunks(&factory, "ladder-pool", n, 4096, |s, len| {
        (0..len)
            .map(|_| {
                let mut redraws = 0;
                loop {
                    match first_ladder_height(s, law, dir, budget) {
                        Some((h, e)) => return Some((h.abs(), e, redraws)),
                        None => {
                            redraws += 1;
                            // An impossible direction never succeeds; give up at once.
                            if redraws as f64 > MAX_TRUNCATED_FRACTION * n as f64 + 1.0 {
                                return None;
                            }
                        }
                    }
                }
            })
            .collect()
    });
    let mut pool = LadderPool { direction: dir, heights: Vec::with_capacity(n), epochs: Vec::with_capacity(n), truncated: 0 };
    let mut failed = false;
    for d in draws {
        match d {
            Some((h, e, r)) => {
                pool.heights.push(h);
                pool.epochs.push(e);
                pool.truncated += r;
            }
            None => failed = true,
        }
    }
    if failed || pool.truncated as f64 > MAX_TRUNCATED_FRACTION * n as f64 {
        return Err(Error::BudgetExceeded {
            what: format!("{dir:?} ladder pool of {} ({} redraws for {n} heights)", law.name(), pool.truncated),
            budget: budget as usize,
            partial: None,
        });
    }
    Ok(pool)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MuEstimate {
    pub estimate: f64,
    pub se: f64,
    pub n: usize,
    pub truncated: usize,
}

/// Mean first ascending ladder height `μ_H` with its standard error.
pub fn estimate_mu_h<L: StepLaw, R: Rng + ?Sized>(rng: &mut R, law: &L, n: usize) -> Result<MuEstimate> {
    if n < 100 {
        return crate::error::domain("estimating the mean ladder height needs n >= 100");
    }
    let pool = ladder_pool(rng, law, n, Direction::Ascending, DEFAULT_LADDER_BUDGET)?;
    let (estimate, se) = pool.mean_se();
    Ok(MuEstimate { estimate, se, n, truncated: pool.truncated })
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
    fn point_mass_ladder_is_deterministic() {
        let l = ascending_ladder(&mut rng(1), &PointMass { at: 1.0 }, 4, 10).unwrap();
        assert_eq!(l.heights, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(l.epochs, vec![0, 1, 2, 3, 4]);
        let mu = estimate_mu_h(&mut rng(1), &PointMass { at: 1.0 }, 100).unwrap();
        assert_eq!((mu.estimate, mu.se), (1.0, 0.0));
        match descending_ladder(&mut rng(1), &PointMass { at: 1.0 }, 2, 10) {
            Err(Error::BudgetExceeded { partial: Some(p), .. }) => assert_eq!(p.heights, vec![0.0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn budget_exhaustion_carries_partial_sample() {
        let law = GaussianStep { mean: -3.0, sd: 0.5 };
        match ascending_ladder(&mut rng(2), &law, 5, 50) {
            Err(Error::BudgetExceeded { partial: Some(p), .. }) => assert!(p.heights.len() < 6),
            other => panic!("{other:?}"),
        }
        assert!(ladder_pool(&mut rng(2), &law, 1000, Direction::Ascending, 50).is_err());
    }

    #[test]
    fn mu_h_positive_and_reproducible() {
        let law = LogVelocityStep::new(Elasticity::new(1.0).unwrap());
        let a = estimate_mu_h(&mut rng(3), &law, 100_000).unwrap();
        let b = estimate_mu_h(&mut rng(4), &law, 100_000).unwrap();
        assert!(a.estimate - 2.576 * a.se > 0.0);
        assert!((a.estimate - b.estimate).abs() < 4.0 * (a.se * a.se + b.se * b.se).sqrt());
        let crit = estimate_mu_h(&mut rng(5), &LogVelocityStep::new(Elasticity::critical()), 20_000).unwrap();
        assert!(crit.estimate.is_finite() && crit.estimate - 2.576 * crit.se > 0.0);
        assert!(crit.truncated as f64 <= 0.01 * 20_000.0);
    }

    #[test]
    fn gaussian_ladder_mean_matches_spitzer() {
        // For a centred Gaussian walk, E[H₁] = σ/√2.
        let law = GaussianStep { mean: 0.0, sd: 1.0 };
        let mu = estimate_mu_h(&mut rng(6), &law, 50_000).unwrap();
        assert!((mu.estimate - 1.0 / 2f64.sqrt()).abs() < 4.0 * mu.se, "{mu:?}");
    }

    proptest! {
        #[test]
        fn heights_and_epochs_strictly_monotone(seed in 0u64..300, c in 0.2f64..2.0) {
            let law = LogVelocityStep::new(Elasticity::new(c).unwrap());
            if let Ok(l) = ascending_ladder(&mut rng(seed), &law, 8, 100_000) {
                prop_assert!(l.heights.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(l.epochs.windows(2).all(|w| w[0] < w[1]));
            }
            if let Ok(l) = descending_ladder(&mut rng(seed), &law, 3, 100_000) {
                prop_assert!(l.heights.windows(2).all(|w| w[0] > w[1]));
            }
        }
    }
}

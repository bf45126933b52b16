//! The stationary overshoot law `m(dy) = P(H₁ > y) dy / μ_H` on `[0, ∞)`.
//!
//! Sampled as `U · Ĥ` with `Ĥ` a size-biased pick from a pool of first ladder
//! heights and `U` uniform: if `Ĥ` has law `y P(H₁ ∈ dy)/μ_H`, then `U Ĥ` has
//! density `P(H₁ > y)/μ_H`.

use super::ladder::{ladder_pool, Direction, LadderPool, DEFAULT_LADDER_BUDGET};
use super::step_law::StepLaw;
use crate::error::{domain, Result};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct OvershootLaw {
    /// Pool heights, sorted.
    heights: Vec<f64>,
    cumulative: Vec<f64>,
    pub mu_h: f64,
    pub mu_h_se: f64,
    pub truncated: usize,
}

impl OvershootLaw {
    pub fn from_pool(pool: &LadderPool) -> Result<Self> {
        if pool.heights.is_empty() {
            return domain("overshoot law needs a non-empty ladder pool");
        }
        if pool.heights.iter().any(|h| !(*h > 0.0)) {
            return domain("ladder heights must be positive");
        }
        let mut heights = pool.heights.clone();
        heights.sort_by(f64::total_cmp);
        let mut acc = 0.0;
        let cumulative = heights
            .iter()
            .map(|h| {
                acc += h;
                acc
            })
            .collect();
        let (mu_h, mu_h_se) = crate::stats::mean_se(&heights);
        Ok(Self { heights, cumulative, mu_h, mu_h_se: if mu_h_se.is_nan() { 0.0 } else { mu_h_se }, truncated: pool.truncated })
    }

    /// Builds the law from `n` fresh ascending ladder heights.
    pub fn estimate<L: StepLaw, R: Rng + ?Sized>(rng: &mut R, law: &L, n: usize) -> Result<Self> {
        Self::from_pool(&ladder_pool(rng, law, n, Direction::Ascending, DEFAULT_LADDER_BUDGET)?)
    }

    pub fn pool_size(&self) -> usize {
        self.heights.len()
    }

    /// Empirical `P(H₁ > y)` and its standard error.
    pub fn tail(&self, y: f64) -> (f64, f64) {
        let n = self.heights.len() as f64;
        let k = self.heights.len() - self.heights.partition_point(|h| *h <= y);
        let p = k as f64 / n;
        (p, (p * (1.0 - p) / n).sqrt())
    }

    pub fn density(&self, y: f64) -> f64 {
        if y < 0.0 {
            0.0
        } else {
            self.tail(y).0 / self.mu_h
        }
    }

    /// CDF of the pool version of `m`: `Σ min(H_i, y) / Σ H_i`.
    pub fn cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let k = self.heights.partition_point(|h| *h <= y);
        let below = if k == 0 { 0.0 } else { self.cumulative[k - 1] };
        let total = *self.cumulative.last().unwrap();
        ((below + (self.heights.len() - k) as f64 * y) / total).min(1.0)
    }

    /// One draw from `m`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = *self.cumulative.last().unwrap();
        let t = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|c| *c <= t).min(self.heights.len() - 1);
        rng.random::<f64>() * self.heights[i]
    }
}

/// One draw from `m`, given a pool-backed law.
pub fn sample_overshoot_m<R: Rng + ?Sized>(rng: &mut R, law: &OvershootLaw) -> f64 {
    law.sample(rng)
}

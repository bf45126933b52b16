//! Monte Carlo checks of the ladder and renewal identities for a generic step
//! law. Every check compares confidence intervals, never bare point estimates.

use super::conditioned::{acceptance_probability, ruin_certificate};
use super::doob::{guided_ensemble, DoobKernel};
use super::ensemble::{conditioned_walk_ensemble, Constraint, EnsembleConfig};
use super::ladder::{ladder_pool, Direction, LadderPool, DEFAULT_LADDER_BUDGET};
use super::overshoot::OvershootLaw;
use super::renewal_fn::{hbar, RenewalFunction};
use super::step_law::StepLaw;
use crate::error::{domain, Result};
use crate::rng::{fork, par_chunks};
use crate::stats::{ks_two_sample, normal_two_sided, EmpiricalSample, KsResult};
use rand::Rng;
use serde::Serialize;

/// Confidence level used by every interval comparison.
pub const LEVEL: f64 = 0.99;

/// Two estimates with standard errors and whether their intervals overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub left: f64,
    pub left_se: f64,
    pub right: f64,
    pub right_se: f64,
    pub pass: bool,
}

impl Comparison {
    /// Overlap of the two individual intervals at [`LEVEL`].
    pub fn overlap(left: f64, left_se: f64, right: f64, right_se: f64) -> Self {
        let z = normal_two_sided(LEVEL);
        let pass = (left - right).abs() <= z * (left_se + right_se);
        Self { left, left_se, right, right_se, pass }
    }
}

/// `P_0(H_1 > y)` from a pool, with its binomial error.
fn pool_tail(pool: &LadderPool, y: f64) -> (f64, f64) {
    let n = pool.heights.len() as f64;
    let p = pool.heights.iter().filter(|h| **h > y).count() as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WoodroofeGutReport {
    pub y: Vec<f64>,
    pub comparisons: Vec<Comparison>,
    pub mu: f64,
    pub mu_h: f64,
    pub mu_h_se: f64,
    pub escape_level: f64,
    pub ruin_bound: f64,
    pub pass: bool,
}

/// For a positive drift `μ`: `(μ/μ_H) P_0(H_1 > y)` against
/// `P_0(inf_{n≥1} S_n > y)`, the latter from `n` walks started at `-y` that
/// must stay above 0 until they pass `escape_level`.
pub fn woodroofe_gut_check<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    ys: &[f64],
    n: usize,
    escape_level: f64,
) -> Result<WoodroofeGutReport> {
    let mu = law.mean();
    if !(mu > 0.0) {
        return domain("the Woodroofe-Gut identity needs a positive drift");
    }
    let cert = ruin_certificate(rng, law, escape_level, 100_000.max(n / 10), 60.0)?;
    let pool = ladder_pool(rng, law, n, Direction::Ascending, DEFAULT_LADDER_BUDGET)?;
    let (mu_h, mu_h_se) = pool.mean_se();
    let mut comparisons = Vec::new();
    for &y in ys {
        let (t, t_se) = pool_tail(&pool, y);
        let left = mu / mu_h * t;
        // Delta method for the ratio; tail and mean come from the same pool,
        // and ignoring their positive correlation only widens the interval.
        let left_se = left * ((t_se / t).powi(2) + (mu_h_se / mu_h).powi(2)).sqrt();
        let acc = acceptance_probability(rng, law, -y, 1, escape_level, n)?;
        // Accepted walks can still be ruined later, with probability at most the certificate bound.
        let right_se = acc.se + cert.upper_bound;
        comparisons.push(Comparison::overlap(left, left_se, acc.estimate, right_se));
    }
    let pass = cert.holds() && comparisons.iter().all(|c| c.pass);
    Ok(WoodroofeGutReport { y: ys.to_vec(), comparisons, mu, mu_h, mu_h_se, escape_level, ruin_bound: cert.upper_bound, pass })
}

/// Replicated ensemble estimate of `P(inf ≥ level)` under the conditioned law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicatedEstimate {
    pub estimate: f64,
    pub se: f64,
    pub replicates: usize,
    /// Smallest final ESS over the replicates.
    pub min_ess: f64,
}

/// Runs `replicates` independent ensembles and averages the self-normalized
/// probability of `inf ≥ level`. With resampling the particles of one
/// ensemble are dependent, so the error comes from the spread across replicates.
#[allow(clippy::too_many_arguments)]
pub fn replicated_probability<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    h: &RenewalFunction,
    x: f64,
    barrier: f64,
    constraint: Constraint,
    level: f64,
    config: &EnsembleConfig,
    replicates: usize,
) -> Result<ReplicatedEstimate> {
    if replicates < 2 {
        return domain("replicated estimates need at least two replicates");
    }
    let mut ps = Vec::with_capacity(replicates);
    let mut min_ess = f64::INFINITY;
    for _ in 0..replicates {
        let ens = conditioned_walk_ensemble(rng, law, h, x, barrier, constraint, config)?;
        ps.push(ens.weighted_mean(|i| (ens.minima[i] >= level) as u8 as f64));
        min_ess = min_ess.min(ens.ess);
    }
    let (estimate, se) = crate::stats::mean_se(&ps);
    Ok(ReplicatedEstimate { estimate, se, replicates, min_ess })
}

/// `P_x(S_k ≥ level` for all constrained `k ≤ n)` for the plain walk.
pub fn plain_survival_probability<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    x: f64,
    level: f64,
    constraint: Constraint,
    n_steps: usize,
    n: usize,
) -> f64 {
    if constraint == Constraint::FromZero && x < level {
        return 0.0;
    }
    let factory = fork(rng);
    let alive: Vec<u64> = par_chunks(&factory, "plain-survival", n, 4096, |s, len| {
        let mut k = 0u64;
        'path: for _ in 0..len {
            let mut p = x;
            for _ in 0..n_steps {
                p += law.sample(s);
                if p < level {
                    continue 'path;
                }
            }
            k += 1;
        }
        vec![k]
    });
    alive.iter().sum::<u64>() as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioCheck {
    pub start: f64,
    /// Barrier of the conditioned walk.
    pub barrier: f64,
    pub level: f64,
    /// Weighted probability that the infimum up to the horizon stays at or above `level`.
    pub ensemble: ReplicatedEstimate,
    /// The h-ratio it should converge to.
    pub ratio: f64,
    pub ratio_se: f64,
    /// Upper bound on how much the finite-horizon probability exceeds its limit.
    pub horizon_bias_bound: f64,
    /// Half-width of the combined confidence band around `[0, bias]`.
    pub slack: f64,
    pub pass: bool,
}

/// Accepts `estimate - ratio` in `[-slack, bias + slack]`; returns the verdict and `slack`.
fn ratio_pass(est: &ReplicatedEstimate, ratio: f64, ratio_se: f64, bias: f64) -> (bool, f64) {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let t = StudentsT::new(0.0, 1.0, (est.replicates - 1) as f64).unwrap().inverse_cdf(0.5 + LEVEL / 2.0);
    let z = normal_two_sided(LEVEL);
    let slack = ((t * est.se).powi(2) + (z * ratio_se).powi(2)).sqrt();
    let d = est.estimate - ratio;
    (d >= -slack && d <= bias + slack, slack)
}

/// Number of plain walks used to bound the finite-horizon bias.
const SURVIVAL_PATHS: usize = 200_000;

/// `P_x^{↑0}(inf_{n≥0} S_n ≥ a) = h(x - a)/h(x)` for `0 ≤ a ≤ x`.
///
/// The ensemble reads the infimum at a finite horizon `n`, which overstates
/// the probability by at most `h(a)/h(x) · P_x(inf_{k≤n} S_k ≥ a)`; the check
/// accepts a difference inside that band widened by the confidence intervals.
pub fn infimum_ratio_check<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    h: &RenewalFunction,
    x: f64,
    a: f64,
    config: &EnsembleConfig,
    replicates: usize,
) -> Result<RatioCheck> {
    if !(0.0 <= a && a <= x) {
        return domain("the h-ratio identity needs 0 <= a <= x");
    }
    let est = replicated_probability(rng, law, h, x, 0.0, Constraint::FromZero, a, config, replicates)?;
    let (hx, hxa) = (h.eval(x), h.eval(x - a));
    let ratio = hxa / hx;
    let ratio_se = ratio * ((h.se_at(x) / hx).powi(2) + (h.se_at(x - a) / hxa).powi(2)).sqrt();
    let survive = plain_survival_probability(rng, law, x, a, Constraint::FromZero, config.n_steps, SURVIVAL_PATHS);
    let bias = h.eval(a) / hx * survive;
    let (pass, slack) = ratio_pass(&est, ratio, ratio_se, bias);
    Ok(RatioCheck { start: x, barrier: 0.0, level: a, ensemble: est, ratio, ratio_se, horizon_bias_bound: bias, slack, pass })
}

/// `P_x^{↑y}(inf_{n≥1} S_n ≥ a) = h̄(x - a)/h̄(x - y)` for `y ≤ a`.
#[allow(clippy::too_many_arguments)]
pub fn strict_infimum_ratio_check<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    h: &RenewalFunction,
    x: f64,
    y: f64,
    a: f64,
    config: &EnsembleConfig,
    replicates: usize,
) -> Result<RatioCheck> {
    if y > a {
        return domain("the h-bar ratio identity needs y <= a");
    }
    let est = replicated_probability(rng, law, h, x, y, Constraint::FromOne, a, config, replicates)?;
    let num = hbar(rng, law, h, x - a, config.hbar_draws)?;
    let den = hbar(rng, law, h, x - y, config.hbar_draws)?;
    let ratio = num.estimate / den.estimate;
    let ratio_se = ratio * ((num.se / num.estimate).powi(2) + (den.se / den.estimate).powi(2)).sqrt();
    let survive = plain_survival_probability(rng, law, x, a, Constraint::FromOne, config.n_steps, SURVIVAL_PATHS);
    let bias = h.eval(a - y) / den.estimate * survive;
    let (pass, slack) = ratio_pass(&est, ratio, ratio_se, bias);
    Ok(RatioCheck { start: x, barrier: y, level: a, ensemble: est, ratio, ratio_se, horizon_bias_bound: bias, slack, pass })
}

/// `h̄(-y)` against `P_0(H_1 ≥ y)`.
pub fn hbar_ladder_check<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    h: &RenewalFunction,
    pool: &LadderPool,
    ys: &[f64],
    draws: usize,
) -> Result<Vec<Comparison>> {
    ys.iter()
        .map(|&y| {
            let hb = hbar(rng, law, h, -y, draws)?;
            let (t, t_se) = pool_tail(pool, y);
            Ok(Comparison::overlap(hb.estimate, hb.se, t, t_se))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DualityStatus {
    Checked,
    /// The walk never moves down, so the conditioned side is degenerate.
    SkippedNoDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub status: DualityStatus,
    pub ks: Option<KsResult>,
    /// Weighted share of particles whose infimum moved in the second half of the horizon.
    pub late_moves: f64,
    /// Upper bound on the probability that the infimum moves after the horizon.
    pub horizon_bias_bound: f64,
    pub ess: f64,
    pub n_ladder: usize,
    pub n_particles: usize,
}

/// Ladder height `H_1` of the plain walk against `inf_{n≥1} S_n` of the walk
/// from 0 conditioned to stay nonnegative, compared by weighted two-sample KS.
/// The conditioned paths come from the Doob kernel, so their weights stay
/// near 1 over the whole horizon.
pub fn duality_check<L: StepLaw + Sync, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    h: &RenewalFunction,
    n_ladder: usize,
    n_steps: usize,
    n_particles: usize,
) -> Result<DualityReport> {
    if !(law.prob_negative() > 0.0) {
        return Ok(DualityReport {
            status: DualityStatus::SkippedNoDescent,
            ks: None,
            late_moves: 0.0,
            horizon_bias_bound: 0.0,
            ess: 0.0,
            n_ladder: 0,
            n_particles: 0,
        });
    }
    let kernel = DoobKernel::new(law, h)?;
    let pool = ladder_pool(rng, law, n_ladder, Direction::Ascending, DEFAULT_LADDER_BUDGET)?;
    let ens = guided_ensemble(rng, &kernel, 0.0, Constraint::FromOne, n_steps, n_particles)?;
    let ladder = EmpiricalSample::new(pool.heights.clone())?;
    let inf = EmpiricalSample::weighted(ens.minima.clone(), ens.weights.clone())?;
    let ks = ks_two_sample(&ladder, &inf);
    let late_moves = ens.weighted_mean(|i| (ens.minima[i] < ens.minima_half[i]) as u8 as f64);
    // Returning below the running minimum m from S_n has probability
    // 1 - h(S_n - m)/h(S_n) ≤ h(m)/h(S_n) by subadditivity.
    let bias = ens.weighted_mean(|i| (h.eval(ens.minima[i]) / h.eval(ens.positions[i])).min(1.0));
    Ok(DualityReport {
        status: DualityStatus::Checked,
        ks: Some(ks),
        late_moves,
        horizon_bias_bound: bias,
        ess: ens.ess,
        n_ladder,
        n_particles,
    })
}

/// Overshoot over 0 of the walk launched from `start < 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaunchedOvershoot {
    pub overshoots: Vec<f64>,
    /// Walks that had not crossed within the step budget.
    pub unfinished: usize,
}

pub fn launched_overshoots<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    start: f64,
    n: usize,
    budget: u64,
) -> Result<LaunchedOvershoot> {
    if !(start < 0.0) {
        return domain("launch point must be below the level");
    }
    let factory = fork(rng);
    let draws: Vec<Option<f64>> = par_chunks(&factory, "launched-overshoot", n, 1024, |s, len| {
        (0..len)
            .map(|_| {
                let mut x = start;
                for _ in 0..budget {
                    x += law.sample(s);
                    if x > 0.0 {
                        return Some(x);
                    }
                }
                None
            })
            .collect()
    });
    let unfinished = draws.iter().filter(|d| d.is_none()).count();
    Ok(LaunchedOvershoot { overshoots: draws.into_iter().flatten().collect(), unfinished })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OvershootReport {
    pub ks: KsResult,
    pub unfinished: usize,
    pub n: usize,
}

/// Overshoot of the walk from `start` over 0 against independent draws from `m`.
pub fn overshoot_convergence_check<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    m: &OvershootLaw,
    start: f64,
    n: usize,
    budget: u64,
) -> Result<OvershootReport> {
    let launched = launched_overshoots(rng, law, start, n, budget)?;
    let sampled: Vec<f64> = (0..n).map(|_| m.sample(rng)).collect();
    let ks = ks_two_sample(&EmpiricalSample::new(launched.overshoots)?, &EmpiricalSample::new(sampled)?);
    Ok(OvershootReport { ks, unfinished: launched.unfinished, n })
}

/// Renewal-function shape checks: monotone and subadditive within `2 SE`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeReport {
    pub h0: f64,
    pub h_negative: f64,
    pub monotone_violations: usize,
    pub subadditive_violations: usize,
    pub pairs: usize,
    pub pass: bool,
}

pub fn renewal_shape_check(h: &RenewalFunction) -> ShapeReport {
    let g = &h.grid;
    let mut monotone_violations = 0;
    for i in 1..g.len() {
        if h.values[i] < h.values[i - 1] - 2.0 * h.se[i].max(h.se[i - 1]) {
            monotone_violations += 1;
        }
    }
    let (mut pairs, mut subadditive_violations) = (0, 0);
    for i in 1..g.len() {
        for j in 1..g.len() {
            let s = g[i] + g[j];
            if s > h.x_max() + 1e-12 {
                continue;
            }
            pairs += 1;
            let lhs = h.eval(s) - h.values[i];
            let se = (h.se_at(s).powi(2) + h.se[i].powi(2) + h.se[j].powi(2)).sqrt();
            if lhs > h.values[j] + 2.0 * se {
                subadditive_violations += 1;
            }
        }
    }
    let (h0, h_negative) = (h.eval(0.0), h.eval(-1e-9));
    ShapeReport {
        h0,
        h_negative,
        monotone_violations,
        subadditive_violations,
        pairs,
        pass: h0 == 1.0 && h_negative == 0.0 && monotone_violations == 0 && subadditive_violations == 0,
    }
}

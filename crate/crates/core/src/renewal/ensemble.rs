//! Weighted particle ensembles for the walk conditioned to stay above a
//! barrier `a` through the renewal function `h`.
//!
//! Particles move under the plain step law and die when they break the
//! barrier. A particle alive after `n` steps carries the weight
//! `h(S_n - a) / h(x - a)` (or `/ h̄(x - a)` when the barrier only applies from
//! index 1). Two drivers are provided:
//!
//! * without resampling, particles are independent and run one at a time until
//!   they die or reach the horizon; this is the cheap route for functionals of
//!   single paths such as the running infimum;
//! * with resampling every `r` steps (systematic scheme), all particles advance
//!   together, and full paths are recovered from ancestry arrays.

use super::renewal_fn::{hbar, RenewalFunction};
use super::step_law::StepLaw;
use crate::error::{domain, Error, Result};
use crate::rng::{fork, par_chunks};
use rand::Rng;

/// Which indices the barrier constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Constraint {
    /// `S_k ≥ a` for `0 ≤ k ≤ n`, normalized by `h(x - a)`.
    FromZero,
    /// `S_k ≥ a` for `1 ≤ k ≤ n`, normalized by `h̄(x - a)`.
    FromOne,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnsembleConfig {
    pub n_steps: usize,
    pub n_particles: usize,
    /// Resampling cadence; `None` runs independent particles.
    pub resample_every: Option<usize>,
    /// Keep full paths (only with resampling).
    pub record_paths: bool,
    /// Fraction of `n_particles` below which the ESS is declared degenerate.
    pub ess_floor: f64,
    /// Draws used to estimate `h̄` when the constraint starts at index 1.
    pub hbar_draws: usize,
}

impl EnsembleConfig {
    pub fn independent(n_steps: usize, n_particles: usize) -> Self {
        Self { n_steps, n_particles, resample_every: None, record_paths: false, ess_floor: 0.01, hbar_draws: 200_000 }
    }

    pub fn resampled(n_steps: usize, n_particles: usize, every: usize) -> Self {
        Self { resample_every: Some(every), record_paths: true, ..Self::independent(n_steps, n_particles) }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Ensemble {
    pub start: f64,
    pub barrier: f64,
    pub constraint: Constraint,
    pub n_steps: usize,
    /// `S_n` per particle (last position reached for dead particles).
    pub positions: Vec<f64>,
    /// Running minimum over the constrained indices up to `n`.
    pub minima: Vec<f64>,
    /// Running minimum up to `n / 2`, for the stabilization check.
    pub minima_half: Vec<f64>,
    /// Unnormalized importance weights; their mean estimates 1 when `h` is harmonic.
    pub weights: Vec<f64>,
    /// Normalizer `h(x - a)` or the estimate of `h̄(x - a)`.
    pub normalizer: f64,
    /// Particles alive at the horizon under the plain walk (independent driver).
    pub survivors: usize,
    pub ess: f64,
    pub resamplings: usize,
    /// Full paths `S_0..S_n` when recorded.
    pub paths: Option<Vec<Vec<f64>>>,
    /// Distinct starting particles among the final ones (resampled driver).
    pub distinct_roots: usize,
}

impl Ensemble {
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Self-normalized weighted mean of `f(particle index)`.
    pub fn weighted_mean<F: Fn(usize) -> f64>(&self, f: F) -> f64 {
        let t = self.total_weight();
        self.weights.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(i, w)| w * f(i)).sum::<f64>() / t
    }

    /// Weighted probability and a delta-method standard error for a ratio of means.
    pub fn weighted_probability<F: Fn(usize) -> bool>(&self, event: F) -> (f64, f64) {
        let n = self.weights.len() as f64;
        let wbar = self.total_weight() / n;
        let p = self.weighted_mean(|i| event(i) as u8 as f64);
        // Var of the ratio estimator: mean over particles of (w (1{A} - p))² / (n wbar²).
        let v: f64 = self
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let d = w * ((event(i) as u8 as f64) - p);
                d * d
            })
            .sum::<f64>()
            / n;
        (p, (v / (n * wbar * wbar)).sqrt())
    }
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Systematic resampling: `n` offspring indices for normalized `weights`.
pub fn systematic_resample<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let step = total / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut acc = weights[0];
    let mut j = 0;
    for _ in 0..n {
        while u >= acc && j + 1 < n {
            j += 1;
            acc += weights[j];
        }
        out.push(j);
        u += step;
    }
    out
}

fn normalizer<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    h: &RenewalFunction,
    x: f64,
    a: f64,
    c: Constraint,
    draws: usize,
) -> Result<f64> {
    let z = match c {
        Constraint::FromZero => h.eval(x - a),
        Constraint::FromOne => hbar(rng, law, h, x - a, draws)?.estimate,
    };
    if !(z > 0.0) {
        return domain(format!("start {x} has zero conditioning mass above barrier {a}"));
    }
    Ok(z)
}

/// Runs the ensemble for the walk from `x` conditioned to stay above `a`.
pub fn conditioned_walk_ensemble<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    h: &RenewalFunction,
    x: f64,
    a: f64,
    constraint: Constraint,
    config: &EnsembleConfig,
) -> Result<Ensemble> {
    if config.n_particles < 100 {
        return domain("an ensemble needs at least 100 particles");
    }
    if constraint == Constraint::FromZero && x < a {
        return domain("a start below the barrier needs the barrier to apply from index 1");
    }
    let z = normalizer(rng, law, h, x, a, constraint, config.hbar_draws)?;
    let ens = match config.resample_every {
        None => run_independent(rng, law, h, x, a, constraint, z, config),
        Some(r) => run_resampled(rng, law, h, &[x], a, constraint, &[z], r, config)?,
    };
    check_ess(ens, config)
}

fn check_ess(ens: Ensemble, config: &EnsembleConfig) -> Result<Ensemble> {
    let threshold = config.ess_floor * config.n_particles as f64;
    if !(ens.ess >= threshold) {
        return Err(Error::DegenerateEnsemble { ess: ens.ess, threshold, partial: Some(Box::new(ens)) });
    }
    Ok(ens)
}

struct Particle {
    pos: f64,
    min: f64,
    min_half: f64,
    alive: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_independent<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    h: &RenewalFunction,
    x: f64,
    a: f64,
    constraint: Constraint,
    z: f64,
    config: &EnsembleConfig,
) -> Ensemble {
    let n = config.n_steps;
    let half = n / 2;
    let factory = fork(rng);
    let particles: Vec<Particle> = par_chunks(&factory, "ensemble", config.n_particles, 1024, |s, len| {
        (0..len)
            .map(|_| {
                let mut p = Particle { pos: x, min: f64::INFINITY, min_half: f64::INFINITY, alive: true };
                if constraint == Constraint::FromZero {
                    p.min = x;
                    p.min_half = x;
                }
                for k in 1..=n {
                    p.pos += law.sample(s);
                    if p.pos < a {
                        p.alive = false;
                        break;
                    }
                    p.min = p.min.min(p.pos);
                    if k <= half {
                        p.min_half = p.min;
                    }
                }
                if n == 0 {
                    p.min = p.min.min(x);
                    p.min_half = p.min;
                }
                p
            })
            .collect()
    });
    let weights: Vec<f64> = particles.iter().map(|p| if p.alive { h.eval(p.pos - a) / z } else { 0.0 }).collect();
    Ensemble {
        start: x,
        barrier: a,
        constraint,
        n_steps: n,
        survivors: particles.iter().filter(|p| p.alive).count(),
        ess: effective_sample_size(&weights),
        positions: particles.iter().map(|p| p.pos).collect(),
        minima: particles.iter().map(|p| p.min).collect(),
        minima_half: particles.iter().map(|p| p.min_half).collect(),
        weights,
        normalizer: z,
        resamplings: 0,
        paths: None,
        distinct_roots: config.n_particles,
    }
}

/// Resampled driver. Particle `i` starts at `starts[i % starts.len()]` with
/// normalizer `norms[i % norms.len()]`, which lets a batch of different starts
/// share one population.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_resampled<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    h: &RenewalFunction,
    starts: &[f64],
    a: f64,
    constraint: Constraint,
    norms: &[f64],
    every: usize,
    config: &EnsembleConfig,
) -> Result<Ensemble> {
    if every == 0 {
        return domain("resampling cadence must be positive");
    }
    let (n, np) = (config.n_steps, config.n_particles);
    let half = n / 2;
    let mut pos: Vec<f64> = (0..np).map(|i| starts[i % starts.len()]).collect();
    let mut min: Vec<f64> = match constraint {
        Constraint::FromZero => pos.clone(),
        Constraint::FromOne => vec![f64::INFINITY; np],
    };
    let mut min_half = min.clone();
    // Weight = base * h(S_k - a) / anchor, with anchor reset at each resampling.
    let mut base = vec![1.0; np];
    let mut anchor: Vec<f64> = (0..np).map(|i| norms[i % norms.len()]).collect();
    let mut alive = vec![true; np];
    let mut roots: Vec<usize> = (0..np).collect();
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut parents: Vec<(usize, Vec<usize>)> = Vec::new();
    if config.record_paths {
        history.reserve(n + 1);
        history.push(pos.clone());
    }
    let mut log_z = 0.0;
    let mut resamplings = 0;
    let current = |pos: &[f64], base: &[f64], anchor: &[f64], alive: &[bool]| -> Vec<f64> {
        (0..np).map(|i| if alive[i] { base[i] * h.eval(pos[i] - a) / anchor[i] } else { 0.0 }).collect::<Vec<f64>>()
    };
    for k in 1..=n {
        for i in 0..np {
            if !alive[i] {
                continue;
            }
            pos[i] += law.sample(rng);
            if pos[i] < a {
                alive[i] = false;
                continue;
            }
            min[i] = min[i].min(pos[i]);
            if k <= half {
                min_half[i] = min[i];
            }
        }
        if config.record_paths {
            history.push(pos.clone());
        }
        if k % every == 0 && k < n {
            let w = current(&pos, &base, &anchor, &alive);
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                let ens = Ensemble {
                    start: starts[0],
                    barrier: a,
                    constraint,
                    n_steps: k,
                    positions: pos,
                    minima: min,
                    minima_half: min_half,
                    weights: w,
                    normalizer: norms[0],
                    survivors: 0,
                    ess: 0.0,
                    resamplings,
                    paths: None,
                    distinct_roots: 0,
                };
                return Err(Error::DegenerateEnsemble { ess: 0.0, threshold: config.ess_floor * np as f64, partial: Some(Box::new(ens)) });
            }
            log_z += (total / np as f64).ln();
            let idx = systematic_resample(rng, &w);
            pos = idx.iter().map(|&j| pos[j]).collect();
            min = idx.iter().map(|&j| min[j]).collect();
            min_half = idx.iter().map(|&j| min_half[j]).collect();
            roots = idx.iter().map(|&j| roots[j]).collect();
            alive = vec![true; np];
            base = vec![1.0; np];
            anchor = pos.iter().map(|p| h.eval(p - a)).collect();
            if config.record_paths {
                parents.push((k, idx));
            }
            resamplings += 1;
        }
    }
    let scale = log_z.exp();
    let weights: Vec<f64> = current(&pos, &base, &anchor, &alive).iter().map(|w| w * scale).collect();
    let paths = config.record_paths.then(|| trace_paths(&history, &parents, np));
    let mut distinct = roots.clone();
    distinct.sort_unstable();
    distinct.dedup();
    Ok(Ensemble {
        start: starts[0],
        barrier: a,
        constraint,
        n_steps: n,
        survivors: alive.iter().filter(|a| **a).count(),
        ess: effective_sample_size(&weights),
        positions: pos,
        minima: min,
        minima_half: min_half,
        weights,
        normalizer: norms[0],
        resamplings,
        paths,
        distinct_roots: distinct.len(),
    })
}

/// Rebuilds each final particle's path from per-step positions and the
/// resampling parent maps.
fn trace_paths(history: &[Vec<f64>], parents: &[(usize, Vec<usize>)], np: usize) -> Vec<Vec<f64>> {
    let n = history.len() - 1;
    let mut out = vec![vec![0.0; n + 1]; np];
    for (i, path) in out.iter_mut().enumerate() {
        let mut idx = i;
        let mut p = parents.len();
        for k in (0..=n).rev() {
            // history[k] was stored before the resampling at step k, so it is
            // indexed by the parents of that resampling.
            if p > 0 && parents[p - 1].0 == k {
                idx = parents[p - 1].1[idx];
                p -= 1;
            }
            path[k] = history[k][idx];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archlaw::Elasticity;
    use crate::renewal::renewal_fn::{renewal_function_h, uniform_grid};
    use crate::renewal::step_law::{GaussianStep, LogVelocityStep, PointMass};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn point_mass_weights_constant() {
        let law = PointMass { at: 1.0 };
        let h = renewal_function_h(&mut rng(1), &law, &uniform_grid(30.0, 31), 100).unwrap();
        for cfg in [EnsembleConfig::independent(10, 200), EnsembleConfig::resampled(10, 200, 3)] {
            let e = conditioned_walk_ensemble(&mut rng(2), &law, &h, 2.0, 0.0, Constraint::FromZero, &cfg).unwrap();
            assert!(e.weights.iter().all(|w| *w == 1.0));
            assert!(e.positions.iter().all(|p| *p == 12.0));
            assert_eq!(e.ess, 200.0);
        }
    }

    #[test]
    fn systematic_resampling_counts() {
        let idx = systematic_resample(&mut rng(3), &[0.0, 3.0, 1.0, 0.0]);
        assert_eq!(idx.len(), 4);
        assert_eq!(idx.iter().filter(|i| **i == 1).count(), 3);
        assert_eq!(idx.iter().filter(|i| **i == 2).count(), 1);
    }

    #[test]
    fn weights_average_to_one_and_drivers_agree() {
        let law = LogVelocityStep::new(Elasticity::critical());
        let h = renewal_function_h(&mut rng(4), &law, &uniform_grid(30.0, 121), 20_000).unwrap();
        let ind =
            conditioned_walk_ensemble(&mut rng(5), &law, &h, 3.0, 0.0, Constraint::FromZero, &EnsembleConfig::independent(100, 100_000))
                .unwrap();
        let mean_w = ind.total_weight() / 100_000.0;
        assert!((mean_w - 1.0).abs() < 0.03, "{mean_w}");
        let res =
            conditioned_walk_ensemble(&mut rng(6), &law, &h, 3.0, 0.0, Constraint::FromZero, &EnsembleConfig::resampled(100, 20_000, 8))
                .unwrap();
        assert!((res.total_weight() / 20_000.0 - 1.0).abs() < 0.03);
        assert!(res.ess > 0.5 * 20_000.0);
        let p_ind = ind.weighted_probability(|i| ind.minima[i] >= 1.0);
        let p_res = res.weighted_mean(|i| (res.minima[i] >= 1.0) as u8 as f64);
        assert!((p_ind.0 - p_res).abs() < 0.03, "{p_ind:?} vs {p_res}");
    }

    #[test]
    fn traced_paths_respect_barrier_and_end_points() {
        let law = GaussianStep { mean: 0.0, sd: 1.0 };
        let h = renewal_function_h(&mut rng(7), &law, &uniform_grid(30.0, 61), 5000).unwrap();
        let e = conditioned_walk_ensemble(&mut rng(8), &law, &h, -0.5, 0.0, Constraint::FromOne, &EnsembleConfig::resampled(50, 500, 8))
            .unwrap();
        let paths = e.paths.as_ref().unwrap();
        for (i, p) in paths.iter().enumerate() {
            assert_eq!(p.len(), 51);
            assert_eq!(p[0], -0.5);
            if e.weights[i] > 0.0 {
                assert!(p[1..].iter().all(|s| *s >= 0.0));
                let m = p[1..].iter().cloned().fold(f64::INFINITY, f64::min);
                assert_eq!(m, e.minima[i]);
            }
            assert_eq!(p[50], e.positions[i]);
        }
        assert!(e.distinct_roots <= 500);
    }

    #[test]
    fn degenerate_ensemble_reported() {
        // An h that ignores the drift: a walk with strong negative drift dies fast.
        let law = GaussianStep { mean: -2.0, sd: 0.5 };
        let h = RenewalFunction { grid: vec![0.0, 1.0], values: vec![1.0, 2.0], se: vec![0.0, 0.0], n_paths: 2, truncated: 0, slope: 1.0 };
        let r = conditioned_walk_ensemble(&mut rng(9), &law, &h, 1.0, 0.0, Constraint::FromZero, &EnsembleConfig::independent(20, 1000));
        assert!(matches!(r, Err(Error::DegenerateEnsemble { .. })));
        let r = conditioned_walk_ensemble(&mut rng(9), &law, &h, 1.0, 0.0, Constraint::FromZero, &EnsembleConfig::resampled(20, 1000, 4));
        assert!(matches!(r, Err(Error::DegenerateEnsemble { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn resampling_preserves_length_and_indices(ws in proptest::collection::vec(0.0f64..5.0, 1..50), seed in 0u64..100) {
            prop_assume!(ws.iter().sum::<f64>() > 0.0);
            let idx = systematic_resample(&mut rng(seed), &ws);
            prop_assert_eq!(idx.len(), ws.len());
            prop_assert!(idx.iter().all(|&i| ws[i] > 0.0));
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

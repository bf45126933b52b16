//! Exact one-step sampling from the Doob kernel `p(y - x) h(y) / h̄(x)` on
//! `y ≥ 0`, used as a guided proposal for the walk conditioned to stay
//! nonnegative.
//!
//! With the estimated `h`, the kernel normalizer `c(x) = h̄(x)/h(x)` differs
//! slightly from 1. A path drawn step by step from the kernel and weighted by
//! `Π c(x_k)` has exactly the law of the plain walk reweighted by
//! `h(S_n) 1{min ≥ 0} / h(x)`, which is the h-transform target, while the
//! weights stay close to 1 at any depth.

use super::ensemble::{effective_sample_size, Constraint, Ensemble};
use super::renewal_fn::RenewalFunction;
use super::step_law::StepLaw;
use crate::error::{domain, Error, Result};
use crate::quad::{integrate, integrate_to_inf, Tolerance};
use crate::rng::{fork, par_chunks};
use rand::Rng;
use rand_distr::Exp1;

/// Spacing of the tabulated `ln c(x)`.
const TABLE_STEP: f64 = 0.02;
/// Beyond `h.x_max() + TABLE_MARGIN` the estimate is linear over the whole
/// reach of a step, where it is exactly harmonic for a centred step.
const TABLE_MARGIN: f64 = 40.0;

fn tol() -> Tolerance {
    Tolerance { abs: 1e-14, rel: 1e-11, max_intervals: 200 }
}

/// `h̄(x) = ∫_{y ≥ 0} p(y - x) h(y) dy` by quadrature, split at the knots.
pub fn hbar_quadrature<L: StepLaw>(law: &L, h: &RenewalFunction, x: f64) -> f64 {
    let f = |y: f64| law.density(y - x) * h.eval(y);
    let mut v: f64 = h.grid.windows(2).map(|w| integrate(f, w[0], w[1], tol()).value).sum();
    v += integrate_to_inf(f, h.x_max(), tol()).value;
    v
}

#[derive(Debug, Clone)]
pub struct DoobKernel<'a, L: StepLaw> {
    law: &'a L,
    h: &'a RenewalFunction,
    /// Largest slope of the estimated `h`.
    lambda: f64,
    /// Largest drop of the estimated `h` below an earlier value.
    dip: f64,
    ez_plus: f64,
    env: (f64, f64),
    log_c: Vec<f64>,
    /// `ln c` at the last tabulated point.
    pub edge_defect: f64,
}

impl<'a, L: StepLaw> DoobKernel<'a, L> {
    pub fn new(law: &'a L, h: &'a RenewalFunction) -> Result<Self> {
        let Some(env) = law.exponential_tail() else {
            return domain(format!("{} has no exponential tail bound for the size-biased proposal", law.name()));
        };
        if law.mean().abs() > 1e-9 {
            return domain("the Doob kernel table assumes a centred step");
        }
        let mut lambda = h.slope.max(0.0);
        let mut dip = 0.0f64;
        let mut running = f64::NEG_INFINITY;
        for i in 0..h.grid.len() {
            if i > 0 {
                lambda = lambda.max((h.values[i] - h.values[i - 1]) / (h.grid[i] - h.grid[i - 1]));
            }
            running = running.max(h.values[i]);
            dip = dip.max(running - h.values[i]);
        }
        let ez_plus = integrate_to_inf(|z| z * law.density(z), 0.0, tol()).value;
        let n = ((h.x_max() + TABLE_MARGIN) / TABLE_STEP).ceil() as usize + 1;
        let log_c: Vec<f64> = (0..n)
            .map(|i| {
                let x = i as f64 * TABLE_STEP;
                (hbar_quadrature(law, h, x) / h.eval(x)).ln()
            })
            .collect();
        let edge_defect = *log_c.last().unwrap();
        Ok(Self { law, h, lambda, dip, ez_plus, env, log_c, edge_defect })
    }

    /// `ln c(x)` by linear interpolation in the table, zero beyond it.
    pub fn log_c(&self, x: f64) -> f64 {
        let t = x / TABLE_STEP;
        let i = t.floor() as usize;
        if i + 1 >= self.log_c.len() {
            return 0.0;
        }
        let f = t - i as f64;
        self.log_c[i] + f * (self.log_c[i + 1] - self.log_c[i])
    }

    /// `Z` with density proportional to `z p(z)` on `z > 0`, by rejection
    /// from Gamma(2, β).
    fn size_biased_positive<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let (a, beta) = self.env;
        loop {
            let e1: f64 = rng.sample(Exp1);
            let e2: f64 = rng.sample(Exp1);
            let w = (e1 + e2) / beta;
            let bound = a * (-beta * w).exp();
            let p = self.law.density(w);
            if p > bound * (1.0 + 1e-12) {
                return Err(Error::Invariant(format!("step density {p} exceeds its exponential envelope {bound} at {w}")));
            }
            if rng.random::<f64>() * bound < p {
                return Ok(w);
            }
        }
    }

    /// One step from `x ≥ 0`; returns the new position and `ln c(x)`.
    ///
    /// Proposal `p(z) (h(x) + dip + λ z⁺)`, a mixture of the step law and its
    /// size-biased positive part; it dominates `p(z) h(x + z)` because no
    /// slope of `h` exceeds `λ` and no dip exceeds `dip`.
    pub fn step<R: Rng + ?Sized>(&self, rng: &mut R, x: f64) -> Result<(f64, f64)> {
        if !(x >= 0.0) {
            return domain(format!("the Doob kernel starts at x >= 0, got {x}"));
        }
        let base = self.h.eval(x) + self.dip;
        let pick_plain = base / (base + self.lambda * self.ez_plus);
        loop {
            let z = if rng.random::<f64>() < pick_plain { self.law.sample(rng) } else { self.size_biased_positive(rng)? };
            let y = x + z;
            if y < 0.0 {
                continue;
            }
            let ratio = self.h.eval(y) / (base + self.lambda * z.max(0.0));
            if ratio > 1.0 + 1e-12 {
                return Err(Error::Invariant(format!("Doob kernel envelope ratio {ratio} at x = {x}, z = {z}")));
            }
            if rng.random::<f64>() < ratio {
                return Ok((y, self.log_c(x)));
            }
        }
    }

    /// Path of `n` steps from `x` and its log-weight `Σ ln c(x_k)`.
    pub fn path<R: Rng + ?Sized>(&self, rng: &mut R, x: f64, n: usize) -> Result<(Vec<f64>, f64)> {
        let mut out = Vec::with_capacity(n + 1);
        out.push(x);
        let mut log_w = 0.0;
        let mut s = x;
        for _ in 0..n {
            let (y, lc) = self.step(rng, s)?;
            log_w += lc;
            s = y;
            out.push(s);
        }
        Ok((out, log_w))
    }
}

/// `n_particles` independent kernel paths of `n_steps` from `x ≥ 0`,
/// packaged as an ensemble. Running minima cover indices from 0 or from 1
/// according to `constraint`; from `x ≥ 0` both constraints condition alike.
pub fn guided_ensemble<L: StepLaw + Sync, R: Rng + ?Sized>(
    rng: &mut R,
    kernel: &DoobKernel<'_, L>,
    x: f64,
    constraint: Constraint,
    n_steps: usize,
    n_particles: usize,
) -> Result<Ensemble> {
    if n_particles < 100 {
        return domain("an ensemble needs at least 100 particles");
    }
    let factory = fork(rng);
    let half = n_steps / 2;
    let runs: Vec<Result<(f64, f64, f64, f64)>> = par_chunks(&factory, "guided-ensemble", n_particles, 256, |s, len| {
        (0..len)
            .map(|_| {
                let mut pos = x;
                let mut log_w = 0.0;
                let mut min = if constraint == Constraint::FromZero { x } else { f64::INFINITY };
                let mut min_half = min;
                for k in 1..=n_steps {
                    let (y, lc) = kernel.step(s, pos)?;
                    log_w += lc;
                    pos = y;
                    min = min.min(y);
                    if k == half {
                        min_half = min;
                    }
                }
                Ok((pos, min, min_half, log_w.exp()))
            })
            .collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = runs.iter().map(|r| r.3).collect();
    let ess = effective_sample_size(&weights);
    Ok(Ensemble {
        start: x,
        barrier: 0.0,
        constraint,
        n_steps,
        positions: runs.iter().map(|r| r.0).collect(),
        minima: runs.iter().map(|r| r.1).collect(),
        minima_half: runs.iter().map(|r| if half == 0 { r.1 } else { r.2 }).collect(),
        weights,
        normalizer: 1.0,
        survivors: n_particles,
        ess,
        resamplings: 0,
        paths: None,
        distinct_roots: n_particles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archlaw::Elasticity;
    use crate::renewal::ensemble::{conditioned_walk_ensemble, Constraint, EnsembleConfig};
    use crate::renewal::renewal_fn::{renewal_function_h, uniform_grid};
    use crate::renewal::step_law::{GaussianStep, LogVelocityStep};
    use crate::stats::{ks_two_sample, EmpiricalSample};
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn needs_an_exponential_tail() {
        let law = GaussianStep { mean: 0.0, sd: 1.0 };
        let h = renewal_function_h(&mut rng(1), &law, &uniform_grid(5.0, 11), 500).unwrap();
        assert!(DoobKernel::new(&law, &h).is_err());
    }

    #[test]
    fn weights_near_one_and_law_matches_weighted_plain_walk() {
        let law = LogVelocityStep::new(Elasticity::critical());
        let h = renewal_function_h(&mut rng(2), &law, &uniform_grid(30.0, 121), 20_000).unwrap();
        let k = DoobKernel::new(&law, &h).unwrap();
        assert!(k.edge_defect.abs() < 1e-6, "{}", k.edge_defect);
        assert!(k.log_c(0.0).abs() < 0.05 && k.log_c(10.0).abs() < 0.02, "{} {}", k.log_c(0.0), k.log_c(10.0));

        let (n, x) = (40, 0.7);
        let mut r = rng(3);
        let mut ends = Vec::new();
        let mut ws = Vec::new();
        for _ in 0..20_000 {
            let (p, lw) = k.path(&mut r, x, n).unwrap();
            assert!(p.iter().all(|s| *s >= 0.0));
            ends.push(p[n]);
            ws.push(lw.exp());
        }
        let ess = crate::renewal::ensemble::effective_sample_size(&ws);
        assert!(ess > 0.95 * ws.len() as f64, "ess {ess}");
        let cfg = EnsembleConfig::independent(n, 200_000);
        let ens = conditioned_walk_ensemble(&mut rng(4), &law, &h, x, 0.0, Constraint::FromZero, &cfg).unwrap();
        let a = EmpiricalSample::weighted(ends, ws).unwrap();
        let b = EmpiricalSample::weighted(ens.positions.clone(), ens.weights.clone()).unwrap();
        let ks = ks_two_sample(&a, &b);
        assert!(ks.p_value > 1e-3, "{ks:?}");
    }

    #[test]
    fn rejects_negative_start() {
        let law = LogVelocityStep::new(Elasticity::critical());
        let h = renewal_function_h(&mut rng(5), &law, &uniform_grid(10.0, 41), 2000).unwrap();
        let k = DoobKernel::new(&law, &h).unwrap();
        assert!(k.step(&mut rng(6), -0.1).is_err());
    }
}

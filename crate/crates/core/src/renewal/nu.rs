//! The joint law `ν(dx dy) = p(x + y) h(x) dx dy / μ_H` of the undershoot `x`
//! and the overshoot `y` around a level, for a zero-mean walk.

use super::renewal_fn::RenewalFunction;
use super::step_law::StepLaw;
use crate::error::{domain, Error, Result};
use crate::quad::{integrate, Tolerance};
use rand::Rng;
use std::io::Write;

/// Smallest share of the estimated mass the sampling box must hold.
pub const MIN_BOX_MASS: f64 = 0.999;

#[derive(Debug, Clone)]
pub struct NuLaw<'a, L: StepLaw> {
    law: &'a L,
    h: &'a RenewalFunction,
    pub mu_h: f64,
    pub mu_h_se: f64,
    /// Side of the sampling box `[0, side]²`.
    pub side: f64,
    /// `∫₀^∞ h(x) P(Z ≥ x) dx`, i.e. `μ_H` times the total mass.
    integral: f64,
    integral_se: f64,
    box_integral: f64,
    env: (f64, f64),
    h_max: f64,
    /// CDF of `ν₋` restricted to the box, tabulated on a uniform grid.
    minus_cdf_table: Vec<f64>,
}

fn tol() -> Tolerance {
    Tolerance { abs: 1e-12, rel: 1e-10, max_intervals: 4000 }
}

impl<'a, L: StepLaw> NuLaw<'a, L> {
    pub fn new(law: &'a L, h: &'a RenewalFunction, mu_h: f64, mu_h_se: f64, side: f64) -> Result<Self> {
        if !(mu_h > 0.0) || !(side > 0.0) {
            return domain("nu needs a positive mean ladder height and box side");
        }
        let Some(env) = law.exponential_tail() else {
            return domain(format!("{} has no exponential tail bound for the sampling envelope", law.name()));
        };
        // Split at the knots of h so the quadrature sees a smooth integrand.
        let piecewise = |f: &dyn Fn(f64) -> f64, upper: f64| -> f64 {
            let mut cuts: Vec<f64> = h.grid.iter().cloned().filter(|g| *g < upper).collect();
            cuts.push(upper);
            cuts.windows(2).map(|w| integrate(f, w[0], w[1], tol()).value).sum()
        };
        let integrand = |x: f64| h.eval(x) * law.sf(x);
        let box_integral = piecewise(&integrand, side);
        let integral = box_integral + crate::quad::integrate_to_inf(integrand, side, tol()).value;
        let integral_se = piecewise(&|x: f64| h.se_at(x) * law.sf(x), side)
            + crate::quad::integrate_to_inf(|x| h.se_at(x) * law.sf(x), side, tol()).value;
        // The y-direction of the box also loses the mass with y > side.
        let box_joint = box_integral - piecewise(&|x: f64| h.eval(x) * law.sf(x + side), side);
        if box_joint < MIN_BOX_MASS * integral {
            return Err(Error::Truncation { captured: box_joint / mu_h, total: integral / mu_h });
        }
        let h_max = (0..=400).map(|i| h.eval(side * i as f64 / 400.0)).fold(h.eval(side), f64::max);
        let knots = 3001;
        let mut minus_cdf_table = vec![0.0; knots];
        let dx = side / (knots - 1) as f64;
        for i in 1..knots {
            let (a, b) = ((i - 1) as f64 * dx, i as f64 * dx);
            minus_cdf_table[i] = minus_cdf_table[i - 1] + integrate(integrand, a, b, tol()).value;
        }
        let total = minus_cdf_table[knots - 1];
        minus_cdf_table.iter_mut().for_each(|v| *v /= total);
        Ok(Self { law, h, mu_h, mu_h_se, side, integral, integral_se, box_integral, env, h_max, minus_cdf_table })
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        if x < 0.0 || y < 0.0 {
            return 0.0;
        }
        self.law.density(x + y) * self.h.eval(x) / self.mu_h
    }

    /// Total mass with a standard error from `h` and `μ_H`.
    pub fn mass(&self) -> (f64, f64) {
        let m = self.integral / self.mu_h;
        let rel = ((self.integral_se / self.integral).powi(2) + (self.mu_h_se / self.mu_h).powi(2)).sqrt();
        (m, m * rel)
    }

    pub fn box_mass(&self) -> f64 {
        self.box_integral / self.mu_h
    }

    /// `ν₋(x) = h(x) P(Z ≥ x) / μ_H`.
    pub fn minus_density(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            self.h.eval(x) * self.law.sf(x) / self.mu_h
        }
    }

    /// Second marginal by integrating out `x`: `∫ p(x + y) h(x) dx / μ_H`,
    /// with the error propagated from `h`.
    pub fn plus_density(&self, y: f64) -> (f64, f64) {
        if y < 0.0 {
            return (0.0, 0.0);
        }
        let mut cuts: Vec<f64> = self.h.grid.clone();
        let top = *cuts.last().unwrap();
        let mut v = 0.0;
        let mut se = 0.0;
        cuts.dedup();
        for w in cuts.windows(2) {
            v += integrate(|x| self.law.density(x + y) * self.h.eval(x), w[0], w[1], tol()).value;
            se += integrate(|x| self.law.density(x + y) * self.h.se_at(x), w[0], w[1], tol()).value;
        }
        v += crate::quad::integrate_to_inf(|x| self.law.density(x + y) * self.h.eval(x), top, tol()).value;
        se += crate::quad::integrate_to_inf(|x| self.law.density(x + y) * self.h.se_at(x), top, tol()).value;
        (v / self.mu_h, se / self.mu_h)
    }

    /// CDF of `ν₋` conditioned on the box.
    pub fn minus_cdf_in_box(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= self.side {
            return 1.0;
        }
        let t = x / self.side * (self.minus_cdf_table.len() - 1) as f64;
        let i = (t.floor() as usize).min(self.minus_cdf_table.len() - 2);
        let f = t - i as f64;
        self.minus_cdf_table[i] + f * (self.minus_cdf_table[i + 1] - self.minus_cdf_table[i])
    }

    /// One draw from `ν` restricted to the box, by rejection against
    /// `A e^{-β(x+y)} max h` with truncated exponential proposals.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let (a, beta) = self.env;
        let trunc_exp = |rng: &mut R| -> f64 {
            let u: f64 = rng.random();
            -(1.0 - u * (1.0 - (-beta * self.side).exp())).ln() / beta
        };
        loop {
            let x = trunc_exp(rng);
            let y = trunc_exp(rng);
            let bound = a * (-beta * (x + y)).exp() * self.h_max;
            let target = self.law.density(x + y) * self.h.eval(x);
            if rng.random::<f64>() * bound < target {
                return (x, y);
            }
        }
    }

    pub fn write_samples_csv<W: Write>(&self, w: &mut W, samples: &[(f64, f64)]) -> Result<()> {
        writeln!(w, "x,y,weight")?;
        for (x, y) in samples {
            writeln!(w, "{x:.16e},{y:.16e},{:.16e}", 1.0)?;
        }
        Ok(())
    }
}

/// Draws from `ν`.
pub fn nu_sampler<L: StepLaw, R: Rng + ?Sized>(rng: &mut R, nu: &NuLaw<'_, L>) -> (f64, f64) {
    nu.sample(rng)
}

pub fn nu_density<L: StepLaw>(x: f64, y: f64, nu: &NuLaw<'_, L>) -> f64 {
    nu.density(x, y)
}

//! Law of a single normalized arch.
//!
//! Started from the boundary at unit speed, the process leaves, returns after a
//! time `s` (the arch duration) and bounces with outgoing speed `V₁`. With
//! `u = V₁ / c` (the incoming speed) the pair `(s, u)` has the joint density
//!
//! ```text
//! g(s, u) = 3u / (π √2 s²) · exp(-2(u² - u + 1)/s) · J(4u/s),
//! J(x)    = ∫₀ˣ exp(-3θ/2) dθ / √(πθ) = √(2/3) · erf(√(3x/2)).
//! ```
//!
//! The log-step `w = ln V₁` then has density
//! `f(w) = (3/2π) e^{5z/2} / (1 + e^{3z})` with `z = w - ln c`.
//!
//! Two facts make the samplers exact and cheap:
//!
//! * With `x = logistic(3z)`, `x ~ Beta(5/6, 1/6)`, so the step CDF is the
//!   regularized incomplete beta function `I_x(5/6, 1/6)`.
//! * Given the incoming and outgoing speeds `(u, v)` the duration has an
//!   inverse-gamma(3/2) envelope with constant `(u+v)/√(u²-uv+v²) ≤ 2`, so
//!   rejection accepts at least half the proposals.

use crate::error::{domain, Error, Result};
use libm::{erf, erfc};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::gamma;
use std::f64::consts::PI;
use std::sync::OnceLock;

/// π/√3, the drift of the log-velocity walk at `c = 1`.
pub const PI_OVER_SQRT3: f64 = 1.813_799_364_234_217_9;

/// Relative tolerance used when deciding whether `c` is the critical value.
pub const CRITICAL_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Regime {
    /// `c < c_crit`: infinitely many bounces in finite time.
    Subcritical,
    Critical,
    /// `c > c_crit`: bounce times go to infinity.
    Supercritical,
}

/// Velocity restitution coefficient and the quantities derived from it.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Elasticity {
    c: f64,
    log_c: f64,
    mu: f64,
    regime: Regime,
}

impl Elasticity {
    pub fn new(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return domain(format!("elasticity must be positive and finite, got {c}"));
        }
        let log_c = c.ln();
        let rel = c / critical_coefficient() - 1.0;
        let regime = if rel.abs() <= CRITICAL_REL_TOL {
            Regime::Critical
        } else if rel < 0.0 {
            Regime::Subcritical
        } else {
            Regime::Supercritical
        };
        Ok(Self { c, log_c, mu: log_c + PI_OVER_SQRT3, regime })
    }

    /// The critical coefficient, with `ln c = -π/√3` and zero drift exactly.
    pub fn critical() -> Self {
        Self { c: critical_coefficient(), log_c: -PI_OVER_SQRT3, mu: 0.0, regime: Regime::Critical }
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn log_c(&self) -> f64 {
        self.log_c
    }

    /// Mean of the log-velocity step.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }
}

/// `exp(-π/√3) ≈ 0.163034`.
pub fn critical_coefficient() -> f64 {
    (-PI_OVER_SQRT3).exp()
}

/// Regime of `e` relative to the critical coefficient.
pub fn classify_regime(e: &Elasticity) -> Regime {
    e.regime
}

/// Variance of the log-velocity step, `4π²/9` for every `c`.
pub fn step_variance() -> f64 {
    4.0 * PI * PI / 9.0
}

/// `J(x) = ∫₀ˣ e^{-3θ/2} dθ / √(πθ)` for `x ≥ 0`.
pub fn inner_integral(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < 1e-6 {
        // (2/√π) Σ (-3/2)^k x^{k+1/2} / (k! (2k+1)), three terms suffice.
        let s = 1.0 - 0.5 * x + 0.225 * x * x;
        return 2.0 * (x / PI).sqrt() * s;
    }
    (2.0f64 / 3.0).sqrt() * erf((1.5 * x).sqrt())
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn check_finite(w: f64) -> Result<()> {
    if w.is_finite() {
        Ok(())
    } else {
        domain(format!("argument must be finite, got {w}"))
    }
}

/// Density of the standardized step `z = w - ln c`.
pub fn std_step_density(z: f64) -> f64 {
    let k = 1.5 / PI;
    if z > 0.0 {
        k * (-0.5 * z).exp() / (1.0 + (-3.0 * z).exp())
    } else {
        k * (2.5 * z).exp() / (1.0 + (3.0 * z).exp())
    }
}

/// CDF of the standardized step.
pub fn std_step_cdf(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if z == f64::INFINITY {
        return 1.0;
    }
    if z <= 0.0 {
        beta_reg(5.0 / 6.0, 1.0 / 6.0, logistic(3.0 * z))
    } else {
        1.0 - std_step_sf(z)
    }
}

/// Survival function of the standardized step.
pub fn std_step_sf(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 1.0;
    }
    if z == f64::INFINITY {
        return 0.0;
    }
    if z > 0.0 {
        beta_reg(1.0 / 6.0, 5.0 / 6.0, logistic(-3.0 * z))
    } else {
        1.0 - std_step_cdf(z)
    }
}

/// Density of `w = ln(V₁/V₀)`.
pub fn step_density(w: f64, e: &Elasticity) -> Result<f64> {
    check_finite(w)?;
    Ok(std_step_density(w - e.log_c))
}

/// CDF of the log-step. Infinite arguments give the limits 0 and 1.
pub fn step_cdf(w: f64, e: &Elasticity) -> f64 {
    std_step_cdf(w - e.log_c)
}

pub fn step_sf(w: f64, e: &Elasticity) -> f64 {
    std_step_sf(w - e.log_c)
}

// Asymptotic tails: F(z) ≈ (3/5π) e^{5z/2} as z → -∞, S(z) ≈ (3/π) e^{-z/2} as z → +∞.
fn lower_tail_inverse(p: f64) -> f64 {
    0.4 * (p * 5.0 * PI / 3.0).ln()
}

fn upper_tail_inverse(q: f64) -> f64 {
    -2.0 * (q * PI / 3.0).ln()
}

/// Newton iteration on `ln F` (lower half) or `ln S` (upper half), safeguarded
/// by bisection. Accurate to a few ulps in `z`.
fn std_quantile_refined(p: f64, guess: f64) -> f64 {
    let lower = p <= 0.5;
    let target = if lower { p.ln() } else { (1.0 - p).ln() };
    // g is increasing in z in both branches.
    let g = |z: f64| {
        if lower {
            std_step_cdf(z).ln() - target
        } else {
            target - std_step_sf(z).ln()
        }
    };
    let (mut lo, mut hi) = (guess - 1.0, guess + 1.0);
    while g(lo) > 0.0 {
        lo -= 2.0 * (hi - lo);
    }
    while g(hi) < 0.0 {
        hi += 2.0 * (hi - lo);
    }
    let mut z = guess.clamp(lo, hi);
    for _ in 0..100 {
        let gz = g(z);
        if gz == 0.0 {
            return z;
        }
        if gz < 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let f = std_step_density(z);
        let deriv = if lower { f / std_step_cdf(z) } else { f / std_step_sf(z) };
        let mut next = z - gz / deriv;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - z).abs() <= 1e-15 * (1.0 + z.abs()) || hi - lo <= 1e-15 * (1.0 + z.abs()) {
            return next;
        }
        z = next;
    }
    z
}

const TABLE_P_MIN: f64 = 1e-8;
const TABLE_KNOTS: usize = 4096;

/// Cubic Hermite table of the standardized quantile in logit(p) coordinates.
struct QuantileTable {
    l0: f64,
    dl: f64,
    z: Vec<f64>,
    dz: Vec<f64>,
}

impl QuantileTable {
    fn build() -> Self {
        let l0 = (TABLE_P_MIN / (1.0 - TABLE_P_MIN)).ln();
        let dl = -2.0 * l0 / (TABLE_KNOTS - 1) as f64;
        let mut z = Vec::with_capacity(TABLE_KNOTS);
        let mut dz = Vec::with_capacity(TABLE_KNOTS);
        let mut guess = lower_tail_inverse(TABLE_P_MIN);
        for i in 0..TABLE_KNOTS {
            let p = logistic(l0 + i as f64 * dl);
            let zi = std_quantile_refined(p, guess);
            // dz/dl = p(1-p)/f(z)
            dz.push(p * (1.0 - p) / std_step_density(zi));
            z.push(zi);
            guess = zi;
        }
        Self { l0, dl, z, dz }
    }

    fn eval(&self, l: f64) -> f64 {
        let t = ((l - self.l0) / self.dl).clamp(0.0, (TABLE_KNOTS - 1) as f64);
        let i = (t as usize).min(TABLE_KNOTS - 2);
        let s = t - i as f64;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.z[i] + h10 * self.dl * self.dz[i] + h01 * self.z[i + 1] + h11 * self.dl * self.dz[i + 1]
    }
}

fn table() -> &'static QuantileTable {
    static TABLE: OnceLock<QuantileTable> = OnceLock::new();
    TABLE.get_or_init(QuantileTable::build)
}

/// Quantile of the standardized step from a uniform `p`, using the table in
/// the bulk and the closed-form tail inverses outside `(1e-8, 1 - 1e-8)`.
fn std_quantile_fast(p: f64) -> f64 {
    if p < TABLE_P_MIN {
        lower_tail_inverse(p)
    } else if p > 1.0 - TABLE_P_MIN {
        upper_tail_inverse(1.0 - p)
    } else {
        table().eval((p / (1.0 - p)).ln())
    }
}

/// Exact inverse of [`step_cdf`].
pub fn step_quantile(p: f64, e: &Elasticity) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("quantile level must lie in (0, 1), got {p}"));
    }
    Ok(std_quantile_refined(p, std_quantile_fast(p)) + e.log_c)
}

fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// One draw of the standardized step.
pub fn sample_std_step<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    std_quantile_fast(open_uniform(rng))
}

/// One draw of the log-velocity step `ln(V₁/V₀)`.
pub fn sample_step<R: Rng + ?Sized>(rng: &mut R, e: &Elasticity) -> f64 {
    sample_std_step(rng) + e.log_c
}

/// Joint density of the arch duration `s` and the incoming speed `u = V₁/c`
/// for an arch started at unit speed. It does not depend on `c`.
pub fn joint_density(s: f64, u: f64) -> Result<f64> {
    if !(s > 0.0 && u > 0.0) || !s.is_finite() || !u.is_finite() {
        return domain(format!("joint density needs s, u > 0, got ({s}, {u})"));
    }
    let b = 2.0 * (u * u - u + 1.0);
    let v = 3.0 * u / (PI * std::f64::consts::SQRT_2 * s * s) * (-b / s).exp() * inner_integral(4.0 * u / s);
    Ok(if v.is_finite() { v } else { 0.0 })
}

fn check_speeds(u: f64, v: f64) -> Result<()> {
    if u > 0.0 && v > 0.0 && u.is_finite() && v.is_finite() {
        Ok(())
    } else {
        domain(format!("speeds must be positive and finite, got ({u}, {v})"))
    }
}

/// Density of the arch duration given start speed `u` and incoming speed `v`
/// (so the outgoing speed after the bounce is `c·v`).
pub fn conditional_duration_density(s: f64, u: f64, v: f64) -> Result<f64> {
    check_speeds(u, v)?;
    if !(s > 0.0) || !s.is_finite() {
        return domain(format!("duration must be positive and finite, got {s}"));
    }
    let b = 2.0 * (v * v - u * v + u * u);
    let k = std::f64::consts::SQRT_2 * (u.powi(3) + v.powi(3)) / (u * v).sqrt();
    let d = k / (s * s) * (-b / s).exp() * inner_integral(4.0 * u * v / s);
    Ok(if d.is_finite() { d } else { 0.0 })
}

/// `P(ζ₁ > t | u, v)`.
///
/// Closed form `erf(√2 (u+v)/√t) - (k/b) e^{-b/t} J(4uv/t)` while the two terms
/// are not close; for large `t` the difference cancels catastrophically and the
/// survival is integrated directly in `r = 1/t` instead.
pub fn conditional_duration_sf(t: f64, u: f64, v: f64) -> Result<f64> {
    check_speeds(u, v)?;
    if !(t > 0.0) {
        return domain(format!("duration must be positive, got {t}"));
    }
    if t == f64::INFINITY {
        return Ok(0.0);
    }
    let b = 2.0 * (v * v - u * v + u * u);
    let k = std::f64::consts::SQRT_2 * (u.powi(3) + v.powi(3)) / (u * v).sqrt();
    let q = std::f64::consts::SQRT_2 * (u + v) / t.sqrt();
    if q > 0.5 {
        let first = if q > 3.0 { 1.0 - erfc(q) } else { erf(q) };
        return Ok((first - k / b * (-b / t).exp() * inner_integral(4.0 * u * v / t)).clamp(0.0, 1.0));
    }
    // ∫₀^{1/t} k e^{-b r} J(4uv r) dr with r = ρ².
    let rmax = (1.0 / t).sqrt();
    let r = crate::quad::integrate(
        |rho: f64| {
            let r = rho * rho;
            2.0 * rho * k * (-b * r).exp() * inner_integral(4.0 * u * v * r)
        },
        0.0,
        rmax,
        crate::quad::Tolerance { abs: 0.0, rel: 1e-12, max_intervals: 200 },
    );
    Ok(r.value.clamp(0.0, 1.0))
}

/// Draws the arch duration given start speed `u` and incoming speed `v` by
/// rejection from an inverse-gamma(3/2, b) proposal, `b = 2(u² - uv + v²)`.
///
/// The ratio of target to proposal is `M · erf(y)√π/(2y)` with
/// `y² = 6uv/s` and `M = (u+v)/√(u² - uv + v²) ∈ [1, 2]`, so each proposal is
/// accepted with probability `erf(y)√π/(2y) ≤ 1`.
pub fn sample_duration_given_velocities<R: Rng + ?Sized>(rng: &mut R, u: f64, v: f64) -> Result<f64> {
    check_speeds(u, v)?;
    let b = 2.0 * (u * u - u * v + v * v);
    let k = 4.0 * u * v;
    loop {
        // Gamma(3/2) = Exp(1) + N(0,1)²/2.
        let e: f64 = rng.sample(Exp1);
        let n: f64 = rng.sample(StandardNormal);
        let g = e + 0.5 * n * n;
        if g <= 0.0 {
            continue;
        }
        let s = b / g;
        let y = (1.5 * k / s).sqrt();
        let ratio = if y < 1e-4 { 1.0 - y * y / 3.0 } else { erf(y) * PI.sqrt() / (2.0 * y) };
        if ratio > 1.0 + 1e-12 || !ratio.is_finite() {
            return Err(Error::Invariant(format!("duration rejection ratio {ratio} exceeds one at (u, v, s) = ({u}, {v}, {s})")));
        }
        if rng.random::<f64>() < ratio {
            return Ok(s);
        }
    }
}

/// Acceptance probability of [`sample_duration_given_velocities`].
pub fn duration_acceptance_rate(u: f64, v: f64) -> f64 {
    (u * u - u * v + v * v).sqrt() / (u + v)
}

/// One normalized arch: duration at unit start speed and the log-step.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ArchSample {
    pub duration: f64,
    pub log_step: f64,
}

pub fn sample_arch<R: Rng + ?Sized>(rng: &mut R, e: &Elasticity) -> ArchSample {
    let z = sample_std_step(rng);
    let duration = sample_duration_given_velocities(rng, 1.0, z.exp()).expect("unit start speed and a finite step give valid speeds");
    ArchSample { duration, log_step: z + e.log_c }
}

/// `c′ = 3Γ(1/4) / (2^{3/4} π^{3/2})`, the constant in `P(ζ₁ > t) ~ c′ t^{-1/4}`.
pub fn duration_tail_constant() -> f64 {
    3.0 * gamma(0.25) / (2f64.powf(0.75) * PI.powf(1.5))
}

/// `(16√2 / (3√π)) t^{-3/2}`, bounding `P(ζ₁ > t a² | u, v)` for `u, v ≤ a`.
pub fn conditional_tail_bound(t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("t must be positive, got {t}"));
    }
    Ok(16.0 * std::f64::consts::SQRT_2 / (3.0 * PI.sqrt()) * t.powf(-1.5))
}

/// `P(ζ₁ > t)` for an arch started at unit speed, by quadrature over the step.
pub fn duration_sf(t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("t must be positive, got {t}"));
    }
    let tol = crate::quad::Tolerance { abs: 1e-14, rel: 1e-10, max_intervals: 500 };
    let f = |z: f64| std_step_density(z) * conditional_duration_sf(t, 1.0, z.exp()).unwrap_or(0.0);
    let r = crate::quad::integrate(f, -40.0, 0.0, tol).value + crate::quad::integrate(f, 0.0, 80.0, tol).value;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate, integrate_to_inf, Tolerance};
    use crate::stats::{ks_one_sample, EmpiricalSample};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn constants() {
        assert!((PI_OVER_SQRT3 - PI / 3f64.sqrt()).abs() < 1e-15);
        assert!((critical_coefficient() - 0.163_034).abs() < 1e-6);
        assert!((duration_tail_constant() - 1.16150).abs() < 1e-4);
        assert!((conditional_tail_bound(1.0).unwrap() - 4.25539).abs() < 1e-5);
        assert!(conditional_tail_bound(2.0).unwrap() < conditional_tail_bound(1.0).unwrap());
        assert!(conditional_tail_bound(0.0).is_err());
    }

    #[test]
    fn regimes() {
        assert_eq!(Elasticity::new(0.5).unwrap().regime(), Regime::Supercritical);
        assert_eq!(Elasticity::new(0.05).unwrap().regime(), Regime::Subcritical);
        assert_eq!(Elasticity::new((-PI / 3f64.sqrt()).exp()).unwrap().regime(), Regime::Critical);
        let e = Elasticity::critical();
        assert_eq!(e.mu(), 0.0);
        assert_eq!(classify_regime(&e), Regime::Critical);
        assert!(Elasticity::new(0.0).is_err());
        assert!(Elasticity::new(f64::NAN).is_err());
        let e = Elasticity::new(1.0).unwrap();
        assert!((e.mu() - PI_OVER_SQRT3).abs() < 1e-15);
    }

    #[test]
    fn inner_integral_matches_quadrature() {
        for x in [1e-9f64, 5e-7, 2e-6, 1e-3, 0.1, 1.0, 7.0, 50.0] {
            // θ = t² removes the endpoint singularity.
            let q = integrate(
                |t: f64| 2.0 * (-1.5 * t * t).exp() / PI.sqrt(),
                0.0,
                x.sqrt(),
                Tolerance { abs: 0.0, rel: 1e-15, max_intervals: 100 },
            )
            .value;
            assert!((inner_integral(x) - q).abs() <= 1e-12 * q.max(1e-300) + 1e-15, "x = {x}: {} vs {q}", inner_integral(x));
        }
        assert_eq!(inner_integral(0.0), 0.0);
    }

    #[test]
    fn step_density_values_and_normalization() {
        for c in [0.05, critical_coefficient(), 0.5, 1.0] {
            let e = Elasticity::new(c).unwrap();
            assert!((step_density(e.log_c(), &e).unwrap() - 3.0 / (4.0 * PI)).abs() < 1e-15);
            let tol = Tolerance::default();
            let f = |w: f64| step_density(w, &e).unwrap();
            let lc = e.log_c();
            let mass = integrate(f, -40.0 + lc, lc, tol).value + integrate(f, lc, 40.0 + lc, tol).value;
            // The window [-40, 40] around ln c misses about 2e-9 of upper-tail mass.
            let outside = std_step_cdf(-40.0) + std_step_sf(40.0);
            assert!((mass + outside - 1.0).abs() < 1e-10, "c = {c}: mass {mass}");
            let full = integrate(f, -80.0 + lc, lc, tol).value + integrate(f, lc, 120.0 + lc, tol).value;
            assert!((full - 1.0).abs() < 1e-10, "c = {c}: full mass {full}");
            let mean = integrate(|w| w * f(w), -120.0 + lc, lc, tol).value + integrate(|w| w * f(w), lc, 200.0 + lc, tol).value;
            assert!((mean - e.mu()).abs() < 1e-8, "c = {c}: mean {mean}");
            let var = |r: f64| {
                integrate(|w| (w - e.mu()).powi(2) * f(w), lc - r, lc, tol).value
                    + integrate(|w| (w - e.mu()).powi(2) * f(w), lc, lc + 2.0 * r, tol).value
            };
            let (v1, v2) = (var(120.0), var(240.0));
            assert!((v1 - step_variance()).abs() < 1e-7 && (v1 - v2).abs() < 1e-9);
        }
        let e = Elasticity::new(1.0).unwrap();
        assert!(step_density(f64::NAN, &e).is_err());
        assert_eq!(step_density(-1e6, &e).unwrap(), 0.0);
        assert_eq!(step_density(1e6, &e).unwrap(), 0.0);
    }

    #[test]
    fn step_cdf_matches_quadrature() {
        let tol = Tolerance::default();
        for z in [-30.0, -8.0, -2.0, -0.3, 0.0, 0.4, 3.0, 12.0, 60.0] {
            let lower = integrate(std_step_density, -80.0, z, tol).value;
            let upper = integrate(std_step_density, z, 400.0, tol).value;
            assert!((std_step_cdf(z) - lower).abs() <= 1e-10 * lower.max(1e-3), "cdf at {z}");
            assert!((std_step_sf(z) - upper).abs() <= 1e-10 * upper.max(1e-3), "sf at {z}");
        }
        assert_eq!(std_step_cdf(f64::NEG_INFINITY), 0.0);
        assert_eq!(std_step_cdf(f64::INFINITY), 1.0);
        let e = Elasticity::new(0.5).unwrap();
        assert!(step_cdf(-1e3, &e) < 1e-300 && step_cdf(1e3, &e) == 1.0);
    }

    #[test]
    fn quantile_round_trips() {
        let e = Elasticity::new(0.7).unwrap();
        for i in 0..=200 {
            let w = -30.0 + 0.3 * i as f64;
            let p = step_cdf(w, &e);
            if p > 0.0 && p < 1.0 {
                let back = step_quantile(p, &e).unwrap();
                assert!((back - w).abs() < 1e-8, "w = {w}, back = {back}");
            }
        }
        for p in [1e-300, 1e-12, 1e-8, 0.01, 0.5, 0.93, 1.0 - 1e-9, 1.0 - 1e-15] {
            let w = step_quantile(p, &e).unwrap();
            let got = if p <= 0.5 { step_cdf(w, &e) } else { 1.0 - step_sf(w, &e) };
            assert!((got - p).abs() < 1e-10 * p.clamp(1e-290, 1.0) + 1e-16, "p = {p}");
        }
        assert!(step_quantile(0.0, &e).is_err());
        assert!(step_quantile(1.0, &e).is_err());
    }

    #[test]
    fn table_is_accurate() {
        // The fast path (table plus closed-form tails) against the exact inverse.
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let fast = std_quantile_fast(p);
            let exact = std_quantile_refined(p, fast);
            assert!((fast - exact).abs() < 1e-9, "p = {p}");
        }
        // Closed-form tails are asymptotic: their error at the switch point is small.
        let p = 0.99e-8;
        assert!((lower_tail_inverse(p) - std_quantile_refined(p, lower_tail_inverse(p))).abs() < 1e-7);
        assert!((upper_tail_inverse(p) - std_quantile_refined(1.0 - p, upper_tail_inverse(p))).abs() < 1e-7);
    }

    #[test]
    fn sampled_step_matches_cdf_and_mean() {
        let e = Elasticity::new(0.5).unwrap();
        let mut r = rng(11);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_step(&mut r, &e)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = step_variance().sqrt();
        assert!((mean - e.mu()).abs() < 3.0 * sd / (n as f64).sqrt(), "mean {mean}");
        let s = EmpiricalSample::new(draws[..100_000].to_vec()).unwrap();
        let ks = ks_one_sample(&s, |w| step_cdf(w, &e));
        assert!(ks.statistic < 1.95 / (1e5f64).sqrt(), "{ks:?}");
        // Independent oracle: z = logit(B)/3 with B ~ Beta(5/6, 1/6).
        use rand_distr::{Beta, Distribution};
        let beta = Beta::new(5.0 / 6.0, 1.0 / 6.0).unwrap();
        let oracle: Vec<f64> = (0..100_000)
            .map(|_| {
                let b: f64 = beta.sample(&mut r);
                (b / (1.0 - b)).ln() / 3.0 + e.log_c()
            })
            .filter(|x| x.is_finite())
            .collect();
        let ks2 = crate::stats::ks_two_sample(&s, &EmpiricalSample::new(oracle).unwrap());
        assert!(ks2.p_value > 1e-3, "{ks2:?}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let e = Elasticity::new(0.3).unwrap();
        let (mut a, mut b) = (rng(5), rng(5));
        for _ in 0..100 {
            assert_eq!(sample_arch(&mut a, &e), sample_arch(&mut b, &e));
        }
        assert_eq!(
            sample_duration_given_velocities(&mut rng(9), 1.0, 1.0).unwrap(),
            sample_duration_given_velocities(&mut rng(9), 1.0, 1.0).unwrap()
        );
    }

    #[test]
    fn joint_density_normalizes_and_marginalizes() {
        let tol = Tolerance { abs: 1e-13, rel: 1e-10, max_intervals: 2000 };
        // Marginal in u through r = 1/s.
        // s = b/x with b = 2(u² - u + 1) puts the mass at x of order one.
        let marginal = |u: f64| {
            let b = 2.0 * (u * u - u + 1.0);
            integrate_to_inf(
                |x| {
                    let r = x / b;
                    joint_density(1.0 / r, u).unwrap() / (r * r * b)
                },
                0.0,
                tol,
            )
            .value
        };
        for i in 0..10 {
            let u = 0.05 * 2.2f64.powi(i);
            let e = Elasticity::new(0.4).unwrap();
            let expected = step_density((e.c() * u).ln(), &e).unwrap() / u;
            let got = marginal(u);
            assert!((got / expected - 1.0).abs() < 1e-5, "u = {u}: {got} vs {expected}");
        }
        // Total mass over (log s, log u).
        let coarse = Tolerance { abs: 1e-9, rel: 1e-6, max_intervals: 200 };
        let total = integrate(
            |lu: f64| {
                let u = lu.exp();
                integrate(
                    |ls: f64| {
                        let s = ls.exp();
                        joint_density(s, u).unwrap() * s * u
                    },
                    -12.0,
                    80.0,
                    coarse,
                )
                .value
            },
            -12.0,
            30.0,
            coarse,
        )
        .value;
        assert!((total - 1.0).abs() < 1e-3, "total {total}");
        assert_eq!(joint_density(1e-8, 1.0).unwrap(), 0.0);
        assert!(joint_density(0.0, 1.0).is_err() && joint_density(1.0, -1.0).is_err());
    }

    #[test]
    fn conditional_density_normalizes_and_is_bounded() {
        let tol = Tolerance::default();
        for (u, v) in [(1.0, 1.0), (1.0, 0.2), (0.2, 1.0)] {
            let mass = integrate_to_inf(|r| conditional_duration_density(1.0 / r, u, v).unwrap() / (r * r), 0.0, tol).value;
            assert!((mass - 1.0).abs() < 1e-4, "({u},{v}): {mass}");
        }
        let c0 = 8.0 * std::f64::consts::SQRT_2 / PI.sqrt();
        for i in 1..=20 {
            for j in 1..=20 {
                let (u, v) = (0.1 * i as f64, 0.1 * j as f64);
                let a = u.max(v);
                for k in 0..40 {
                    let s = 1e-3 * 1.4f64.powi(k);
                    let d = conditional_duration_density(s, u, v).unwrap();
                    assert!(d <= c0 * a.powi(3) * s.powf(-2.5) * (1.0 + 1e-12));
                }
            }
        }
        assert!(conditional_duration_density(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn conditional_sf_matches_quadrature_and_tail_bound() {
        let tol = Tolerance { abs: 0.0, rel: 1e-13, max_intervals: 2000 };
        for (u, v) in [(1.0, 1.0), (1.0, 0.2), (0.2, 1.0), (0.5, 3.0)] {
            for t in [0.01, 0.3, 1.0, 4.0, 30.0, 1e3, 1e5] {
                let q = integrate(|r| conditional_duration_density(1.0 / r, u, v).unwrap() / (r * r), 0.0, 1.0 / t, tol).value;
                let got = conditional_duration_sf(t, u, v).unwrap();
                assert!((got - q).abs() < 1e-9 * q.max(1e-6), "({u},{v},{t}): {got} vs {q}");
                let a = u.max(v);
                assert!(got <= conditional_tail_bound(t / (a * a)).unwrap());
            }
        }
    }

    #[test]
    fn envelope_dominates_on_grid() {
        // Target ≤ M · inverse-gamma(3/2, b) pointwise.
        for i in 0..100 {
            for j in 0..100 {
                let u = 0.02 * 1.09f64.powi(i);
                let v = 0.02 * 1.09f64.powi(j);
                let b = 2.0 * (u * u - u * v + v * v);
                let m = 1.0 / duration_acceptance_rate(u, v);
                assert!((1.0..=2.0 + 1e-12).contains(&m));
                for k in 0..100 {
                    let s = 1e-3 * b * 1.2f64.powi(k);
                    let proposal = b.powf(1.5) / gamma(1.5) * s.powf(-2.5) * (-b / s).exp();
                    let target = conditional_duration_density(s, u, v).unwrap();
                    assert!(target <= m * proposal * (1.0 + 1e-10) + 1e-300);
                }
            }
        }
    }

    #[test]
    fn duration_sampler_matches_cdf() {
        let mut r = rng(21);
        for (u, v) in [(1.0, 1.0), (1.0, 0.2), (0.2, 1.0)] {
            let mut draws = Vec::with_capacity(100_000);
            for _ in 0..100_000 {
                draws.push(sample_duration_given_velocities(&mut r, u, v).unwrap());
            }
            let s = EmpiricalSample::new(draws).unwrap();
            let ks = ks_one_sample(&s, |t| 1.0 - conditional_duration_sf(t, u, v).unwrap());
            assert!(ks.statistic < 0.01, "({u},{v}): {ks:?}");
        }
        assert!(duration_acceptance_rate(1.0, 1.0) > 0.05);
    }

    #[test]
    fn arch_marginals() {
        let e = Elasticity::new(1.0).unwrap();
        let mut r = rng(8);
        let arches: Vec<ArchSample> = (0..100_000).map(|_| sample_arch(&mut r, &e)).collect();
        let steps = EmpiricalSample::new(arches.iter().map(|a| a.log_step).collect()).unwrap();
        assert!(ks_one_sample(&steps, |w| step_cdf(w, &e)).statistic < 0.01);
        let durations = EmpiricalSample::new(arches.iter().map(|a| a.duration).collect()).unwrap();
        let ks = ks_one_sample(&durations, |t| 1.0 - duration_sf(t).unwrap());
        assert!(ks.p_value > 1e-3, "{ks:?}");
    }

    #[test]
    fn exact_duration_tail_approaches_constant() {
        let c = duration_tail_constant();
        for t in [1e2, 1e3, 1e4] {
            let ratio = duration_sf(t).unwrap() * t.powf(0.25) / c;
            assert!((ratio - 1.0).abs() < 0.05, "t = {t}: ratio {ratio}");
        }
    }

    proptest! {
        #[test]
        fn cdf_monotone_and_consistent(z in -50.0f64..50.0, dz in 1e-6f64..5.0) {
            let (a, b) = (std_step_cdf(z), std_step_cdf(z + dz));
            prop_assert!(a < b || (a == 1.0 && b == 1.0));
            prop_assert!((std_step_cdf(z) + std_step_sf(z) - 1.0).abs() < 1e-14);
        }

        #[test]
        fn duration_scaling(s in 1e-3f64..1e3, u in 0.05f64..5.0, v in 0.05f64..5.0, lam in 0.1f64..10.0) {
            let a = conditional_duration_density(s, u, v).unwrap();
            let b = conditional_duration_density(lam * lam * s, lam * u, lam * v).unwrap();
            prop_assert!((a - lam * lam * b).abs() <= 1e-9 * a.max(1e-300));
        }

        #[test]
        fn arch_samples_valid(seed in 0u64..1000, c in 0.01f64..3.0) {
            let e = Elasticity::new(c).unwrap();
            let a = sample_arch(&mut rng(seed), &e);
            prop_assert!(a.duration > 0.0 && a.duration.is_finite() && a.log_step.is_finite());
        }
    }
}

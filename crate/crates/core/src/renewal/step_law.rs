use crate::archlaw::{self, Elasticity};
use rand::Rng;
use rand_distr::StandardNormal;

/// Law of the increments of a real random walk.
pub trait StepLaw: Send + Sync {
    /// Density, or 0 for laws without one.
    fn density(&self, z: f64) -> f64;
    fn cdf(&self, z: f64) -> f64;
    fn sf(&self, z: f64) -> f64 {
        1.0 - self.cdf(z)
    }
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;
    fn mean(&self) -> f64;
    fn variance(&self) -> f64;
    /// `P(Z < 0)`; zero means the walk can never move down.
    fn prob_negative(&self) -> f64 {
        self.cdf(-f64::MIN_POSITIVE)
    }
    /// `P(Z > 0)`.
    fn prob_positive(&self) -> f64 {
        self.sf(0.0)
    }
    /// Upper bound `(A, β)` with `density(z) ≤ A e^{-βz}` for `z ≥ 0`, if known.
    fn exponential_tail(&self) -> Option<(f64, f64)> {
        None
    }
    fn name(&self) -> String;
}

/// Increments of the log-velocity walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogVelocityStep {
    pub elasticity: Elasticity,
}

impl LogVelocityStep {
    pub fn new(e: Elasticity) -> Self {
        Self { elasticity: e }
    }
}

impl StepLaw for LogVelocityStep {
    fn density(&self, z: f64) -> f64 {
        archlaw::std_step_density(z - self.elasticity.log_c())
    }

    fn cdf(&self, z: f64) -> f64 {
        archlaw::step_cdf(z, &self.elasticity)
    }

    fn sf(&self, z: f64) -> f64 {
        archlaw::step_sf(z, &self.elasticity)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        archlaw::sample_step(rng, &self.elasticity)
    }

    fn mean(&self) -> f64 {
        self.elasticity.mu()
    }

    fn variance(&self) -> f64 {
        archlaw::step_variance()
    }

    fn prob_negative(&self) -> f64 {
        self.cdf(0.0)
    }

    fn exponential_tail(&self) -> Option<(f64, f64)> {
        // f(z) ≤ (3/2π) e^{-(z - ln c)/2}
        Some((1.5 / std::f64::consts::PI * (0.5 * self.elasticity.log_c()).exp(), 0.5))
    }

    fn name(&self) -> String {
        format!("log-velocity step (c = {})", self.elasticity.c())
    }
}

/// Deterministic step, for degenerate test cases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMass {
    pub at: f64,
}

impl StepLaw for PointMass {
    fn density(&self, _z: f64) -> f64 {
        0.0
    }

    fn cdf(&self, z: f64) -> f64 {
        if z >= self.at {
            1.0
        } else {
            0.0
        }
    }

    fn sample<R: Rng + ?Sized>(&self, _rng: &mut R) -> f64 {
        self.at
    }

    fn mean(&self) -> f64 {
        self.at
    }

    fn variance(&self) -> f64 {
        0.0
    }

    fn name(&self) -> String {
        format!("point mass at {}", self.at)
    }
}

/// Gaussian step, a second continuous law for cross-checking the identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianStep {
    pub mean: f64,
    pub sd: f64,
}

impl StepLaw for GaussianStep {
    fn density(&self, z: f64) -> f64 {
        let t = (z - self.mean) / self.sd;
        (-0.5 * t * t).exp() / (self.sd * (2.0 * std::f64::consts::PI).sqrt())
    }

    fn cdf(&self, z: f64) -> f64 {
        0.5 * libm::erfc(-(z - self.mean) / (self.sd * std::f64::consts::SQRT_2))
    }

    fn sf(&self, z: f64) -> f64 {
        0.5 * libm::erfc((z - self.mean) / (self.sd * std::f64::consts::SQRT_2))
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g: f64 = rng.sample(StandardNormal);
        self.mean + self.sd * g
    }

    fn mean(&self) -> f64 {
        self.mean
    }

    fn variance(&self) -> f64 {
        self.sd * self.sd
    }

    fn prob_negative(&self) -> f64 {
        self.cdf(0.0)
    }

    fn name(&self) -> String {
        format!("gaussian step (mean {}, sd {})", self.mean, self.sd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate, Tolerance};
    use crate::stats::{ks_one_sample, EmpiricalSample};
    use rand::SeedableRng;

    fn check_continuous<L: StepLaw>(law: &L) {
        let (m, sd) = (law.mean(), law.variance().sqrt());
        let tol = Tolerance::default();
        let mass = integrate(|z| law.density(z), m - 40.0 * sd, m + 80.0 * sd, tol).value;
        assert!((mass - 1.0).abs() < 1e-8, "{}: mass {mass}", law.name());
        for z in [m - 2.0 * sd, m, m + 3.0 * sd] {
            let lower = integrate(|t| law.density(t), m - 40.0 * sd, z, tol).value;
            assert!((law.cdf(z) - lower).abs() < 1e-8);
            assert!((law.cdf(z) + law.sf(z) - 1.0).abs() < 1e-14);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let s = EmpiricalSample::new((0..100_000).map(|_| law.sample(&mut rng)).collect()).unwrap();
        assert!(ks_one_sample(&s, |z| law.cdf(z)).p_value > 1e-3, "{}", law.name());
        if let Some((a, b)) = law.exponential_tail() {
            for i in 0..200 {
                let z = 0.25 * i as f64;
                assert!(law.density(z) <= a * (-b * z).exp() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn laws_are_consistent() {
        check_continuous(&LogVelocityStep::new(Elasticity::critical()));
        check_continuous(&LogVelocityStep::new(Elasticity::new(0.5).unwrap()));
        check_continuous(&GaussianStep { mean: 0.0, sd: 1.3 });
        let p = PointMass { at: 1.0 };
        assert_eq!(p.cdf(0.999), 0.0);
        assert_eq!(p.cdf(1.0), 1.0);
        assert_eq!(p.prob_negative(), 0.0);
        assert_eq!(p.prob_positive(), 1.0);
    }
}

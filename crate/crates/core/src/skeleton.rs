//! The bounce skeleton `(ζ_n, S_n)`: bounce times and log outgoing speeds.
//!
//! Successive arches are independent once normalized, so
//! `ζ_{k+1} - ζ_k = e^{2 S_k} d_k` and `S_{k+1} = S_k + w_k` with `(d_k, w_k)`
//! i.i.d. [`ArchSample`]s.
//!
//! Bounce times leave the range of `f64` quickly: they grow like `e^{2μk}` in
//! the supercritical regime and shrink towards a finite limit through terms
//! that underflow in the subcritical one. Every time is therefore also kept as
//! a logarithm, and all diagnostics work on the logarithms.

use crate::archlaw::{sample_arch, ArchSample, Elasticity, Regime};
use crate::error::{domain, Error, Result};
use rand::Rng;
use std::io::Write;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BounceSkeleton {
    pub elasticity: Elasticity,
    pub start_velocity: f64,
    /// `ζ_n`, starting at `ζ_0 = 0`. May saturate to `+inf`.
    pub times: Vec<f64>,
    /// `ln ζ_n`; the first entry is `-inf`.
    pub log_times: Vec<f64>,
    /// `S_n = ln V_n`.
    pub log_velocities: Vec<f64>,
    /// Normalized durations `d_k` of the arches between entries `k` and `k+1`.
    pub arch_durations: Vec<f64>,
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl BounceSkeleton {
    /// Builds a skeleton from a start speed and a list of arches.
    pub fn from_arches(e: Elasticity, u0: f64, arches: &[ArchSample]) -> Result<Self> {
        if !(u0 > 0.0 && u0.is_finite()) {
            return domain(format!("start velocity must be positive and finite, got {u0}"));
        }
        let n = arches.len() + 1;
        let mut sk = BounceSkeleton {
            elasticity: e,
            start_velocity: u0,
            times: Vec::with_capacity(n),
            log_times: Vec::with_capacity(n),
            log_velocities: Vec::with_capacity(n),
            arch_durations: Vec::with_capacity(n - 1),
        };
        sk.times.push(0.0);
        sk.log_times.push(f64::NEG_INFINITY);
        sk.log_velocities.push(u0.ln());
        for a in arches {
            sk.push_arch(*a);
        }
        Ok(sk)
    }

    fn push_arch(&mut self, a: ArchSample) {
        let k = self.log_velocities.len() - 1;
        let s = self.log_velocities[k];
        let log_dt = 2.0 * s + a.duration.ln();
        self.times.push(self.times[k] + log_dt.exp());
        self.log_times.push(log_add_exp(self.log_times[k], log_dt));
        self.log_velocities.push(s + a.log_step);
        self.arch_durations.push(a.duration);
    }

    /// Number of entries (bounces including the start).
    pub fn len(&self) -> usize {
        self.log_velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_velocities.is_empty()
    }

    /// `ln(ζ_j - ζ_i)` for `i < j`, without forming the times.
    pub fn log_time_between(&self, i: usize, j: usize) -> f64 {
        let mut acc = f64::NEG_INFINITY;
        for k in i..j {
            acc = log_add_exp(acc, 2.0 * self.log_velocities[k] + self.arch_durations[k].ln());
        }
        acc
    }
}

/// Simulates `n` entries of the skeleton started at a bounce with outgoing speed `u0`.
pub fn simulate_skeleton<R: Rng + ?Sized>(rng: &mut R, e: &Elasticity, u0: f64, n: usize) -> Result<BounceSkeleton> {
    if n == 0 {
        return domain("a skeleton needs at least one entry");
    }
    let arches: Vec<ArchSample> = (1..n).map(|_| sample_arch(rng, e)).collect();
    BounceSkeleton::from_arches(*e, u0, &arches)
}

pub use crate::archlaw::classify_regime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Verdict {
    Convergent,
    Divergent,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AccumulationReport {
    /// `(N, ln ζ_N)` at N = n/1000, n/100, n/10, n/2 and n (where positive).
    pub log_partial_sums: Vec<(usize, f64)>,
    /// `(ζ_N - ζ_{N/2}) / ζ_{N/2}` at the last index `N`.
    pub tail_ratio: f64,
    /// `ln(ζ_N / ζ_{N/10})`.
    pub log_growth: f64,
    pub verdict: Verdict,
}

/// Tail ratio below which the bounce times are reported as converging.
pub const CONVERGENT_TAIL_RATIO: f64 = 1e-3;
/// Growth factor of `ζ_N` over `ζ_{N/10}` above which they are reported as diverging.
pub const DIVERGENT_GROWTH: f64 = 10.0;

/// Heuristic verdict on whether the bounce times accumulate.
pub fn accumulation_diagnostics(sk: &BounceSkeleton) -> Result<AccumulationReport> {
    if sk.len() < 100 {
        return domain(format!("accumulation diagnostics need at least 100 entries, got {}", sk.len()));
    }
    let last = sk.len() - 1;
    let half = last / 2;
    let tenth = last / 10;
    let tail_ratio = (sk.log_time_between(half, last) - sk.log_times[half]).exp();
    let log_growth = sk.log_times[last] - sk.log_times[tenth];
    let verdict = if tail_ratio < CONVERGENT_TAIL_RATIO {
        Verdict::Convergent
    } else if log_growth > DIVERGENT_GROWTH.ln() {
        Verdict::Divergent
    } else {
        Verdict::Inconclusive
    };
    let mut log_partial_sums = Vec::new();
    for d in [1000, 100, 10, 2, 1] {
        let k = last / d;
        if k > 0 && log_partial_sums.last().is_none_or(|p: &(usize, f64)| p.0 != k) {
            log_partial_sums.push((k, sk.log_times[k]));
        }
    }
    Ok(AccumulationReport { log_partial_sums, tail_ratio, log_growth, verdict })
}

/// Convenience: whether the regime predicts accumulation.
pub fn accumulates(e: &Elasticity) -> bool {
    e.regime() == Regime::Subcritical
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CrossingRecord {
    pub level: f64,
    /// `T_x`, the first index with `S_n > x`.
    pub index: usize,
    /// `S_{T_x} - x`.
    pub overshoot: f64,
    /// `ζ_{T_x}`.
    pub time: f64,
    pub log_time: f64,
}

/// First entry of the skeleton whose log-velocity exceeds `x`.
pub fn first_crossing(sk: &BounceSkeleton, x: f64) -> Result<CrossingRecord> {
    match sk.log_velocities.iter().position(|s| *s > x) {
        Some(index) => Ok(CrossingRecord {
            level: x,
            index,
            overshoot: sk.log_velocities[index] - x,
            time: sk.times[index],
            log_time: sk.log_times[index],
        }),
        None => Err(Error::NotReached { level: x, max_seen: sk.log_velocities.iter().copied().fold(f64::NEG_INFINITY, f64::max) }),
    }
}

/// Writes `n,zeta_n,S_n` rows with 17 significant digits.
pub fn write_csv<W: Write>(w: &mut W, sk: &BounceSkeleton) -> Result<()> {
    writeln!(w, "n,zeta_n,S_n")?;
    for (n, (t, s)) in sk.times.iter().zip(&sk.log_velocities).enumerate() {
        writeln!(w, "{n},{t:.16e},{s:.16e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archlaw::{critical_coefficient, step_variance};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn mean_step_matches_drift() {
        let sd = step_variance().sqrt();
        for e in [Elasticity::new(1.0).unwrap(), Elasticity::critical()] {
            let n = 1_000_000;
            let sk = simulate_skeleton(&mut rng(2), &e, 1.0, n + 1).unwrap();
            let mean = sk.log_velocities[n] / n as f64;
            assert!((mean - e.mu()).abs() < 3.0 * sd / (n as f64).sqrt(), "c = {}: {mean}", e.c());
        }
    }

    #[test]
    fn lln_supercritical() {
        let e = Elasticity::new(0.5).unwrap();
        let n = 100_000;
        let sk = simulate_skeleton(&mut rng(4), &e, 1.0, n + 1).unwrap();
        let sd = step_variance().sqrt();
        assert!((sk.log_velocities[n] / n as f64 - e.mu()).abs() < 3.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn scaling_under_shared_stream() {
        let e = Elasticity::new(0.8).unwrap();
        let base = simulate_skeleton(&mut rng(3), &e, 1.0, 500).unwrap();
        let lam: f64 = 3.7;
        let scaled = simulate_skeleton(&mut rng(3), &e, lam, 500).unwrap();
        for k in 0..500 {
            let dt = scaled.times[k] - lam * lam * base.times[k];
            // Equal up to rounding accumulated over the running sum.
            if scaled.times[k].is_finite() {
                assert!(dt.abs() <= 1e-10 * scaled.times[k].max(1e-300), "k = {k}: {} vs {}", scaled.times[k], lam * lam * base.times[k]);
            }
            assert!((scaled.log_velocities[k] - base.log_velocities[k] - lam.ln()).abs() < 1e-9);
            if k > 0 {
                assert!((scaled.log_times[k] - base.log_times[k] - 2.0 * lam.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invariants_hold() {
        let e = Elasticity::new(0.3).unwrap();
        let sk = simulate_skeleton(&mut rng(1), &e, 0.5, 200).unwrap();
        assert_eq!(sk.times.len(), sk.log_velocities.len());
        assert_eq!(sk.times[0], 0.0);
        assert!(sk.log_times.windows(2).all(|w| w[0] < w[1]));
        assert!(simulate_skeleton(&mut rng(1), &e, 0.0, 10).is_err());
        assert!(simulate_skeleton(&mut rng(1), &e, 1.0, 0).is_err());
    }

    #[test]
    fn regime_classification() {
        assert_eq!(classify_regime(&Elasticity::new(0.5).unwrap()), Regime::Supercritical);
        assert_eq!(classify_regime(&Elasticity::new(0.05).unwrap()), Regime::Subcritical);
        assert_eq!(classify_regime(&Elasticity::new(critical_coefficient()).unwrap()), Regime::Critical);
        assert!(accumulates(&Elasticity::new(0.05).unwrap()));
    }

    #[test]
    fn verdicts_separate_regimes() {
        let count = |c: f64, want: Verdict| {
            let e = Elasticity::new(c).unwrap();
            (0..50u64)
                .filter(|s| {
                    let sk = simulate_skeleton(&mut rng(100 + s), &e, 1.0, 2000).unwrap();
                    accumulation_diagnostics(&sk).unwrap().verdict == want
                })
                .count()
        };
        assert!(count(0.05, Verdict::Convergent) >= 48);
        assert!(count(0.5, Verdict::Divergent) >= 48);
        let short = simulate_skeleton(&mut rng(1), &Elasticity::new(0.5).unwrap(), 1.0, 99).unwrap();
        assert!(accumulation_diagnostics(&short).is_err());
    }

    #[test]
    fn diagnostics_are_deterministic() {
        let sk = simulate_skeleton(&mut rng(9), &Elasticity::new(0.2).unwrap(), 1.0, 300).unwrap();
        assert_eq!(accumulation_diagnostics(&sk).unwrap(), accumulation_diagnostics(&sk).unwrap());
    }

    #[test]
    fn crossing_basics() {
        let e = Elasticity::new(1.0).unwrap();
        let sk = simulate_skeleton(&mut rng(5), &e, 2.0, 50).unwrap();
        let r = first_crossing(&sk, 0.1).unwrap();
        assert_eq!(r.index, 0);
        assert!((r.overshoot - (2f64.ln() - 0.1)).abs() < 1e-15);
        match first_crossing(&sk, 1e6) {
            Err(Error::NotReached { max_seen, .. }) => assert!(max_seen < 1e6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let sk = simulate_skeleton(&mut rng(5), &Elasticity::new(1.0).unwrap(), 1.0, 3).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &sk).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,zeta_n,S_n");
        assert_eq!(lines.len(), 4);
        let parsed: f64 = lines[2].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(parsed, sk.log_velocities[1]);
    }

    proptest! {
        #[test]
        fn crossing_index_monotone(seed in 0u64..500, x in -5.0f64..5.0, dx in 0.0f64..3.0) {
            let sk = simulate_skeleton(&mut rng(seed), &Elasticity::new(0.6).unwrap(), 1.0, 400).unwrap();
            if let (Ok(a), Ok(b)) = (first_crossing(&sk, x), first_crossing(&sk, x + dx)) {
                prop_assert!(a.index <= b.index);
                prop_assert!(a.overshoot >= 0.0);
                prop_assert!(sk.log_velocities[..a.index].iter().all(|s| *s <= x));
            }
        }

        #[test]
        fn log_times_consistent(seed in 0u64..500, c in 0.2f64..1.5) {
            let sk = simulate_skeleton(&mut rng(seed), &Elasticity::new(c).unwrap(), 1.0, 60).unwrap();
            for k in 1..sk.len() {
                if sk.times[k].is_finite() && sk.times[k] > 1e-300 {
                    prop_assert!((sk.times[k].ln() - sk.log_times[k]).abs() < 1e-9);
                }
            }
        }
    }
}

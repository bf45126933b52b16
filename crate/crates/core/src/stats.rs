//! Empirical distributions and goodness-of-fit statistics.
//!
//! Weighted samples use the effective sample size `(sum w)^2 / sum w^2` in
//! place of `n` wherever an asymptotic p-value is formed.

use crate::error::{domain, Result};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, Clone)]
pub struct EmpiricalSample {
    /// Sorted values.
    values: Vec<f64>,
    /// Normalized weights aligned with `values`; `None` means equal weights.
    weights: Option<Vec<f64>>,
}

impl EmpiricalSample {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return domain("empirical sample is empty");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return domain("empirical sample contains a non-finite value");
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values, weights: None })
    }

    /// Weighted sample. Zero-weight entries are dropped.
    pub fn weighted(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.len() != weights.len() {
            return domain("values and weights differ in length");
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return domain("weights must be finite and non-negative");
        }
        let mut pairs: Vec<(f64, f64)> = values.into_iter().zip(weights).filter(|p| p.1 > 0.0).collect();
        if pairs.is_empty() {
            return domain("all weights are zero");
        }
        if pairs.iter().any(|p| !p.0.is_finite()) {
            return domain("empirical sample contains a non-finite value");
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let (values, weights) = pairs.into_iter().map(|(v, w)| (v, w / total)).unzip();
        Ok(Self { values, weights: Some(weights) })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.values.len() as f64,
        }
    }

    pub fn effective_size(&self) -> f64 {
        match &self.weights {
            None => self.values.len() as f64,
            Some(w) => 1.0 / w.iter().map(|x| x * x).sum::<f64>(),
        }
    }

    pub fn mean(&self) -> f64 {
        (0..self.len()).map(|i| self.weight(i) * self.values[i]).sum()
    }

    /// Empirical CDF `P(X <= x)`.
    pub fn ecdf(&self, x: f64) -> f64 {
        let k = self.values.partition_point(|v| *v <= x);
        match &self.weights {
            None => k as f64 / self.len() as f64,
            Some(w) => w[..k].iter().sum(),
        }
    }

    /// Distinct values with the CDF just below and at each of them.
    fn steps(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        let mut acc = 0.0;
        let mut i = 0;
        while i < self.len() {
            let x = self.values[i];
            let before = acc;
            while i < self.len() && self.values[i] == x {
                acc += self.weight(i);
                i += 1;
            }
            out.push((x, before, acc.min(1.0)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub effective_n: f64,
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        kolmogorov_sf_small(lambda)
    } else {
        kolmogorov_sf_large(lambda)
    }
}

// Theta-function form, fast for small lambda.
fn kolmogorov_sf_small(lambda: f64) -> f64 {
    let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
    let mut s = 0.0;
    let mut k = 1.0f64;
    loop {
        let term = y.powf(k * k);
        s += term;
        if term < 1e-17 {
            break;
        }
        k += 2.0;
    }
    (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
}

fn kolmogorov_sf_large(lambda: f64) -> f64 {
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, ne: f64) -> f64 {
    let sq = ne.sqrt();
    kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(s: &EmpiricalSample, cdf: F) -> KsResult {
    let mut d: f64 = 0.0;
    for (x, before, at) in s.steps() {
        let f = cdf(x);
        d = d.max((f - before).abs()).max((at - f).abs());
    }
    let ne = s.effective_size();
    KsResult { statistic: d, p_value: ks_p_value(d, ne), effective_n: ne }
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &EmpiricalSample, b: &EmpiricalSample) -> KsResult {
    let (sa, sb) = (a.steps(), b.steps());
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0, 0.0);
    let mut d: f64 = 0.0;
    while i < sa.len() || j < sb.len() {
        let xa = sa.get(i).map_or(f64::INFINITY, |s| s.0);
        let xb = sb.get(j).map_or(f64::INFINITY, |s| s.0);
        let x = xa.min(xb);
        if xa == x {
            fa = sa[i].2;
            i += 1;
        }
        if xb == x {
            fb = sb[j].2;
            j += 1;
        }
        d = d.max((fa - fb).abs());
    }
    let (na, nb) = (a.effective_size(), b.effective_size());
    let ne = na * nb / (na + nb);
    KsResult { statistic: d, p_value: ks_p_value(d, ne), effective_n: ne }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square of observed counts against cell probabilities.
///
/// `probs` must sum to one over the cells (include an overflow cell if the
/// binning does not cover the support). Cells with expected count below 5 are
/// pooled into their right neighbour before the statistic is formed.
pub fn chi_square_binned(counts: &[u64], probs: &[f64]) -> Result<ChiSquareResult> {
    if counts.len() != probs.len() || counts.is_empty() {
        return domain("counts and probabilities must be non-empty and aligned");
    }
    let total_p: f64 = probs.iter().sum();
    if (total_p - 1.0).abs() > 1e-6 {
        return domain(format!("cell probabilities sum to {total_p}, not 1"));
    }
    let n: u64 = counts.iter().sum();
    let nf = n as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (c, p) in counts.iter().zip(probs) {
        o += *c as f64;
        e += p * nf;
        if e >= 5.0 {
            cells.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => cells.push((o, e)),
        }
    }
    if cells.len() < 2 {
        return domain("too few populated cells for a chi-square test");
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = cells.len() - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    Ok(ChiSquareResult { statistic, dof, p_value: dist.sf(statistic) })
}

/// Counts of `values` in the cells `(-inf, e0], (e0, e1], ..., (e_last, inf)`.
pub fn bin_counts(values: &[f64], edges: &[f64]) -> Vec<u64> {
    let mut counts = vec![0u64; edges.len() + 1];
    for v in values {
        counts[edges.partition_point(|e| e < v)] += 1;
    }
    counts
}

/// Percentile bootstrap confidence interval for `stat` at the given level.
pub fn bootstrap_ci<R, F>(rng: &mut R, data: &[f64], stat: F, level: f64, n_boot: usize) -> Result<(f64, f64)>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64,
{
    if data.is_empty() || n_boot < 10 || !(0.0 < level && level < 1.0) {
        return domain("bootstrap needs data, at least 10 resamples and a level in (0, 1)");
    }
    let mut buf = vec![0.0; data.len()];
    let mut stats: Vec<f64> = (0..n_boot)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = data[rng.random_range(0..data.len())];
            }
            stat(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let q = |p: f64| stats[((p * (n_boot - 1) as f64).round() as usize).min(n_boot - 1)];
    let alpha = 1.0 - level;
    Ok((q(alpha / 2.0), q(1.0 - alpha / 2.0)))
}

/// Mean and standard error of the mean.
pub fn mean_se(data: &[f64]) -> (f64, f64) {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    if data.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Two-sided standard normal quantile for a confidence level, e.g. 2.5758 at 0.99.
pub fn normal_two_sided(level: f64) -> f64 {
    use statrs::distribution::Normal;
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn kolmogorov_matches_tabulated_values() {
        // Classical critical values: P(K > 1.3581) = 0.05, P(K > 1.6276) = 0.01.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-4);
        // Both series agree where they meet.
        for lambda in [0.9, 1.18, 1.5] {
            assert!((kolmogorov_sf_small(lambda) - kolmogorov_sf_large(lambda)).abs() < 1e-12);
        }
    }

    #[test]
    fn ks_uniform_sample_passes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let r = ks_one_sample(&EmpiricalSample::new(v).unwrap(), |x| x.clamp(0.0, 1.0));
        assert!(r.p_value > 0.001, "{r:?}");
        assert!(r.statistic < 0.03);
    }

    #[test]
    fn ks_detects_shift() {
        let a = EmpiricalSample::new((0..1000).map(|i| i as f64 / 1000.0).collect()).unwrap();
        let b = EmpiricalSample::new((0..1000).map(|i| 0.1 + i as f64 / 1000.0).collect()).unwrap();
        let r = ks_two_sample(&a, &b);
        assert!((r.statistic - 0.1).abs() < 2e-3);
        assert!(r.p_value < 1e-3);
    }

    #[test]
    fn weighted_ecdf_and_ess() {
        let s = EmpiricalSample::weighted(vec![1.0, 2.0, 3.0], vec![1.0, 0.0, 3.0]).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.ecdf(1.5) - 0.25).abs() < 1e-15);
        assert!((s.effective_size() - 1.0 / (0.0625 + 0.5625)).abs() < 1e-12);
        assert!((s.mean() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn chi_square_on_fair_die() {
        let counts = [1001u64, 980, 1012, 995, 1020, 992];
        let r = chi_square_binned(&counts, &[1.0 / 6.0; 6]).unwrap();
        assert_eq!(r.dof, 5);
        assert!(r.p_value > 0.5);
        assert!(chi_square_binned(&[10, 5000], &[0.5, 0.5]).unwrap().p_value < 1e-10);
        assert_eq!(bin_counts(&[0.0, 0.5, 1.0, 2.0], &[0.5, 1.5]), vec![2, 1, 1]);
    }

    #[test]
    fn bootstrap_brackets_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..400).map(|_| rng.random::<f64>()).collect();
        let (lo, hi) = bootstrap_ci(&mut rng, &data, |d| d.iter().sum::<f64>() / d.len() as f64, 0.95, 400).unwrap();
        assert!(lo < 0.5 && 0.5 < hi && hi - lo < 0.1);
    }

    proptest! {
        #[test]
        fn ks_invariant_under_monotone_maps(v in prop::collection::vec(-5.0f64..5.0, 5..60),
                                            w in prop::collection::vec(-5.0f64..5.0, 5..60)) {
            let a = EmpiricalSample::new(v.clone()).unwrap();
            let b = EmpiricalSample::new(w.clone()).unwrap();
            let ta = EmpiricalSample::new(v.iter().map(|x| x.exp()).collect()).unwrap();
            let tb = EmpiricalSample::new(w.iter().map(|x| x.exp()).collect()).unwrap();
            let d1 = ks_two_sample(&a, &b).statistic;
            let d2 = ks_two_sample(&ta, &tb).statistic;
            prop_assert!((d1 - d2).abs() < 1e-12);
            let o1 = ks_one_sample(&a, |x| 1.0 / (1.0 + (-x).exp())).statistic;
            let o2 = ks_one_sample(&ta, |y| 1.0 / (1.0 + 1.0 / y)).statistic;
            prop_assert!((o1 - o2).abs() < 1e-9);
        }

        #[test]
        fn ecdf_is_monotone_in_unit_interval(v in prop::collection::vec(-1e3f64..1e3, 1..50), x in -2e3f64..2e3, dx in 0.0f64..10.0) {
            let s = EmpiricalSample::new(v).unwrap();
            let (a, b) = (s.ecdf(x), s.ecdf(x + dx));
            prop_assert!((0.0..=1.0).contains(&a) && a <= b);
        }
    }
}

//! Adaptive Gauss-Kronrod (7/15) quadrature.
//!
//! Small and self-contained; used for the deterministic oracles (bin
//! probabilities, marginals, normalizations) that the Monte Carlo samplers are
//! checked against.

// Nodes and weights as tabulated, beyond f64 precision.
#![allow(clippy::excessive_precision)]

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-13, rel: 1e-11, max_intervals: 2000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Estimate {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Estimate { value: kron * h, error: ((kron - gauss) * h).abs() }
}

/// Integrates `f` over the finite interval `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Estimate {
    if a == b {
        return Estimate { value: 0.0, error: 0.0 };
    }
    let mut pieces = vec![(a, b, gk15(&f, a, b))];
    loop {
        let value: f64 = pieces.iter().map(|p| p.2.value).sum();
        let error: f64 = pieces.iter().map(|p| p.2.error).sum();
        if error <= tol.abs.max(tol.rel * value.abs()) || pieces.len() >= tol.max_intervals {
            return Estimate { value, error };
        }
        let (worst, _) = pieces.iter().enumerate().max_by(|x, y| x.1 .2.error.total_cmp(&y.1 .2.error)).expect("non-empty");
        let (lo, hi, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // Interval cannot be split further in floating point.
            let value: f64 = pieces.iter().map(|p| p.2.value).sum::<f64>() + gk15(&f, lo, hi).value;
            return Estimate { value, error };
        }
        pieces.push((lo, mid, gk15(&f, lo, mid)));
        pieces.push((mid, hi, gk15(&f, mid, hi)));
    }
}

/// Integrates `f` over `[a, inf)` through the map `x = a + t / (1 - t)`.
pub fn integrate_to_inf<F: Fn(f64) -> f64>(f: F, a: f64, tol: Tolerance) -> Estimate {
    integrate(
        |t: f64| {
            let s = 1.0 - t;
            let x = a + t / s;
            let v = f(x) / (s * s);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        tol,
    )
}

/// Integrates `f` over `(-inf, b]`.
pub fn integrate_from_neg_inf<F: Fn(f64) -> f64>(f: F, b: f64, tol: Tolerance) -> Estimate {
    integrate_to_inf(|y| f(-y), -b, tol)
}

/// Integrates `f` over the whole real line, split at `split`.
pub fn integrate_line<F: Fn(f64) -> f64>(f: F, split: f64, tol: Tolerance) -> Estimate {
    let left = integrate_from_neg_inf(&f, split, tol);
    let right = integrate_to_inf(&f, split, tol);
    Estimate { value: left.value + right.value, error: left.error + right.error }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_polynomials() {
        for k in 0..=20 {
            let r = gk15(&|x: f64| x.powi(k), 0.0, 1.0);
            assert!((r.value - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "degree {k}");
        }
    }

    #[test]
    fn smooth_and_improper_integrals() {
        let t = Tolerance::default();
        let r = integrate(f64::sin, 0.0, std::f64::consts::PI, t);
        assert!((r.value - 2.0).abs() < 1e-12);
        let r = integrate_to_inf(|x| (-x).exp(), 0.0, t);
        assert!((r.value - 1.0).abs() < 1e-11);
        let r = integrate_line(|x| (-x * x).exp(), 0.3, t);
        assert!((r.value - std::f64::consts::PI.sqrt()).abs() < 1e-11);
        // Integrable endpoint singularity.
        let r = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, t);
        assert!((r.value - 2.0).abs() < 1e-8);
    }
}

//! The renewal function of the strict descending ladder heights,
//! `h(x) = Σ_k P(D_k ≥ -x)` for `x ≥ 0` and `h(x) = 0` for `x < 0`, and its
//! one-step extension `h̄(x) = E_x[h(S₁); S₁ ≥ 0]`.

use super::ladder::{first_ladder_height, Direction, DEFAULT_LADDER_BUDGET, MAX_TRUNCATED_FRACTION};
use super::step_law::StepLaw;
use crate::error::{domain, Error, Result};
use crate::rng::{fork, par_chunks};
use rand::Rng;
use std::io::Write;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RenewalFunction {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    pub n_paths: usize,
    /// Descending ladder steps redrawn after exhausting their budget.
    pub truncated: usize,
    /// Slope used beyond the last knot (least squares over the upper half).
    pub slope: f64,
}

impl RenewalFunction {
    fn locate(&self, x: f64) -> (usize, f64) {
        let i = self.grid.partition_point(|g| *g <= x).clamp(1, self.grid.len() - 1) - 1;
        let t = (x - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        (i, t)
    }

    pub fn x_max(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Linear interpolation; zero below 0; linear extrapolation above the grid.
    pub fn eval(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let top = self.x_max();
        if x > top {
            return self.values[self.values.len() - 1] + self.slope * (x - top);
        }
        let (i, t) = self.locate(x);
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    /// Like [`eval`](Self::eval) but holding the top-knot value beyond the grid;
    /// the flag reports whether that happened.
    pub fn eval_clamped(&self, x: f64) -> (f64, bool) {
        if x > self.x_max() {
            (self.values[self.values.len() - 1], true)
        } else {
            (self.eval(x), false)
        }
    }

    /// Interpolated standard error.
    pub fn se_at(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= self.x_max() {
            return self.se[self.se.len() - 1];
        }
        let (i, t) = self.locate(x);
        self.se[i] + t * (self.se[i + 1] - self.se[i])
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "x,h,se")?;
        for ((x, h), s) in self.grid.iter().zip(&self.values).zip(&self.se) {
            writeln!(w, "{x:.16e},{h:.16e},{s:.16e}")?;
        }
        Ok(())
    }
}

/// Uniform grid of `knots` points on `[0, x_max]`.
pub fn uniform_grid(x_max: f64, knots: usize) -> Vec<f64> {
    (0..knots).map(|i| x_max * i as f64 / (knots - 1) as f64).collect()
}

/// Monte Carlo estimate of `h` on `grid` from `n_paths` descending ladders.
pub fn renewal_function_h<L: StepLaw, R: Rng + ?Sized>(rng: &mut R, law: &L, grid: &[f64], n_paths: usize) -> Result<RenewalFunction> {
    renewal_function_h_with_budget(rng, law, grid, n_paths, DEFAULT_LADDER_BUDGET)
}

pub fn renewal_function_h_with_budget<L: StepLaw, R: Rng + ?Sized>(
    rng: &mut R,
    law: &L,
    grid: &[f64],
    n_paths: usize,
    budget: u64,
) -> Result<RenewalFunction> {
    if grid.len() < 2 || grid[0] != 0.0 || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return domain("grid must start at 0 and increase strictly");
    }
    if n_paths < 2 {
        return domain("h needs at least two paths");
    }
    let x_max = *grid.last().unwrap();
    let descends = law.prob_negative() > 0.0;
    let factory = fork(rng);
    // Each chunk returns per-knot (sum, sum of squares) and its redraw count.
    let parts: Vec<(Vec<f64>, Vec<f64>, usize)> = par_chunks(&factory, "renewal-h", n_paths, 256, |s, len| {
        let mut sum = vec![0.0; grid.len()];
        let mut sq = vec![0.0; grid.len()];
        let mut redraws = 0usize;
        let mut bumps = vec![0u32; grid.len() + 1];
        for _ in 0..len {
            bumps.iter_mut().for_each(|b| *b = 0);
            // k = 0 contributes D_0 = 0 at every knot.
            bumps[0] += 1;
            let mut depth = 0.0;
            if descends {
                loop {
                    match first_ladder_height(s, law, Direction::Descending, budget) {
                        Some((d, _)) => {
                            depth -= d;
                            if depth > x_max {
                                break;
                            }
                            bumps[grid.partition_point(|g| *g < depth)] += 1;
                        }
                        None => {
                            redraws += 1;
                            if redraws as f64 > MAX_TRUNCATED_FRACTION * (n_paths as f64) * 50.0 {
                                return vec![(sum, sq, usize::MAX)];
                            }
                        }
                    }
                }
            }
            let mut count = 0.0;
            for (i, b) in bumps[..grid.len()].iter().enumerate() {
                count += *b as f64;
                sum[i] += count;
                sq[i] += count * count;
            }
        }
        vec![(sum, sq, redraws)]
    });
    let mut sum = vec![0.0; grid.len()];
    let mut sq = vec![0.0; grid.len()];
    let mut truncated = 0usize;
    for (s, q, r) in parts {
        if r == usize::MAX {
            truncated = usize::MAX;
            break;
        }
        truncated += r;
        for i in 0..grid.len() {
            sum[i] += s[i];
            sq[i] += q[i];
        }
    }
    let n = n_paths as f64;
    let ladder_steps: f64 = sum[grid.len() - 1];
    if truncated == usize::MAX || truncated as f64 > MAX_TRUNCATED_FRACTION * ladder_steps {
        return Err(Error::BudgetExceeded {
            what: format!("descending ladders for h under {}", law.name()),
            budget: budget as usize,
            partial: None,
        });
    }
    let values: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se: Vec<f64> = sq.iter().zip(&values).map(|(q, m)| ((q / n - m * m).max(0.0) / (n - 1.0)).sqrt()).collect();
    // Least-squares slope over the upper half of the grid.
    let lo = grid.len() / 2;
    let (xs, ys) = (&grid[lo..], &values[lo..]);
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    let mut values = values;
    values[0] = 1.0;
    let mut se = se;
    se[0] = 0.0;
    Ok(RenewalFunction { grid: grid.to_vec(), values, se, n_paths, truncated, slope })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct HbarEstimate {
    pub estimate: f64,
    /// Monte Carlo error combined with the error of `h` itself.
    pub se: f64,
    /// Draws whose first step landed beyond the grid of `h`.
    pub truncated: usize,
}

/// `h̄(x) = E_x[h(S₁); S₁ ≥ 0]` by Monte Carlo with `n` draws.
pub fn hbar<L: StepLaw, R: Rng + ?Sized>(rng: &mut R, law: &L, h: &RenewalFunction, x: f64, n: usize) -> Result<HbarEstimate> {
    if n < 2 {
        return domain("hbar needs at least two draws");
    }
    let (mut s, mut sq, mut se_h, mut truncated) = (0.0, 0.0, 0.0, 0usize);
    for _ in 0..n {
        let y = x + law.sample(rng);
        if y < 0.0 {
            continue;
        }
        let (v, clamped) = h.eval_clamped(y);
        truncated += clamped as usize;
        s += v;
        sq += v * v;
        se_h += h.se_at(y);
    }
    let nf = n as f64;
    let mean = s / nf;
    let mc_var = (sq / nf - mean * mean).max(0.0) / (nf - 1.0);
    // Errors of h at different knots are positively correlated; adding the
    // averaged knot error linearly is the conservative choice.
    let h_part = se_h / nf;
    Ok(HbarEstimate { estimate: mean, se: (mc_var + h_part * h_part).sqrt(), truncated })
}

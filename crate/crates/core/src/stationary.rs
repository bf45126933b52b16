//! Two-sided spatially stationary windows of the log-velocity sequence, the
//! level shift `Θ_x`, the time functional `α_x` and the entrance sampler.
//!
//! A window holds `(S_n, d_n)` for `-K ≤ n ≤ N`, where `d_n` is the duration
//! of the normalized arch leaving bounce `n`, so the real time spent in that
//! arch is `e^{2 S_n} d_n`. Windows are anchored: `S_0 > 0` and `S_n ≤ 0` for
//! `n < 0`. Only durations are kept from each arch, which is all the time
//! functional and the entrance skeleton use.
//!
//! Supercritical windows are exact up to a certified ruin probability below
//! `1e-4`. Critical windows carry an importance weight.

use crate::archlaw::{sample_arch, sample_duration_given_velocities, ArchSample, Elasticity, Regime};
use crate::error::{domain, Error, Result};
use crate::renewal::conditioned::{conditioned_walk_rejection_with_budget, ruin_certificate, RuinCertificate, DEFAULT_ATTEMPT_BUDGET};
use crate::renewal::doob::DoobKernel;
use crate::renewal::ensemble::effective_sample_size;
use crate::renewal::nu::NuLaw;
use crate::renewal::renewal_fn::{renewal_function_h, uniform_grid};
use crate::renewal::{LogVelocityStep, OvershootLaw, RenewalFunction};
use crate::rng::{par_chunks, StreamFactory};
use crate::skeleton::BounceSkeleton;
use rand::Rng;
use serde::Serialize;
use std::io::Write;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryWindow {
    pub elasticity: Elasticity,
    pub back_depth: usize,
    pub fwd_length: usize,
    /// `S_n` for `n = -K..=N`, stored from `n = -K`.
    pub log_velocities: Vec<f64>,
    /// Normalized arch durations, aligned with `log_velocities`.
    pub durations: Vec<f64>,
    /// `S_{N+1}`, which the last duration was drawn against.
    pub next_log_velocity: f64,
    /// Importance weight of a critical window.
    pub weight: Option<f64>,
}

/// Normalized duration of an arch whose log-velocity moves by `w`.
fn duration_given_step<R: Rng + ?Sized>(rng: &mut R, e: &Elasticity, w: f64) -> Result<f64> {
    sample_duration_given_velocities(rng, 1.0, (w - e.log_c()).exp())
}

impl StationaryWindow {
    /// Assembles a window from `S_{-K}, …, S_{-1}` and a forward start `S_0`,
    /// drawing backward durations given the steps and forward arches jointly.
    fn assemble<R: Rng + ?Sized>(rng: &mut R, e: Elasticity, back: Vec<f64>, s0: f64, n: usize, weight: Option<f64>) -> Result<Self> {
        let k = back.len();
        let mut s = back;
        s.reserve(n + 1);
        s.push(s0);
        let mut durations = Vec::with_capacity(k + n + 1);
        for i in 0..k {
            durations.push(duration_given_step(rng, &e, s[i + 1] - s[i])?);
        }
        let mut next = s0;
        for i in 0..=n {
            let a = sample_arch(rng, &e);
            durations.push(a.duration);
            next = s[k + i] + a.log_step;
            if i < n {
                s.push(next);
            }
        }
        let w = Self { elasticity: e, back_depth: k, fwd_length: n, log_velocities: s, durations, next_log_velocity: next, weight };
        w.check_anchor()?;
        Ok(w)
    }

    /// `S_n` for `-K ≤ n ≤ N`.
    pub fn s(&self, n: i64) -> f64 {
        self.log_velocities[(n + self.back_depth as i64) as usize]
    }

    pub fn duration(&self, n: i64) -> f64 {
        self.durations[(n + self.back_depth as i64) as usize]
    }

    pub fn check_anchor(&self) -> Result<()> {
        let k = self.back_depth;
        if !(self.log_velocities[k] > 0.0) {
            return Err(Error::Invariant(format!("window anchor has S_0 = {}", self.log_velocities[k])));
        }
        if let Some(i) = self.log_velocities[..k].iter().position(|s| *s > 0.0) {
            return Err(Error::Invariant(format!("back entry n = {} is positive", i as i64 - k as i64)));
        }
        if let Some(d) = self.durations.iter().find(|d| !(**d > 0.0)) {
            return Err(Error::Invariant(format!("non-positive duration {d}")));
        }
        Ok(())
    }

    /// Appends `steps` forward arches.
    pub fn extend_forward<R: Rng + ?Sized>(&mut self, rng: &mut R, steps: usize) {
        for _ in 0..steps {
            self.log_velocities.push(self.next_log_velocity);
            let a = sample_arch(rng, &self.elasticity);
            self.durations.push(a.duration);
            self.next_log_velocity += a.log_step;
            self.fwd_length += 1;
        }
    }

    /// Keeps only the `depth` most recent back entries.
    pub fn truncate_back(&self, depth: usize) -> Self {
        let cut = self.back_depth.saturating_sub(depth);
        Self {
            back_depth: self.back_depth - cut,
            log_velocities: self.log_velocities[cut..].to_vec(),
            durations: self.durations[cut..].to_vec(),
            ..self.clone()
        }
    }

    /// Forward arches `(d_n, S_{n+1} - S_n)` for `n = 0..=N`.
    pub fn forward_arches(&self) -> Vec<ArchSample> {
        let k = self.back_depth;
        (k..self.log_velocities.len())
            .map(|i| {
                let next = self.log_velocities.get(i + 1).copied().unwrap_or(self.next_log_velocity);
                ArchSample { duration: self.durations[i], log_step: next - self.log_velocities[i] }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "n,S_n,duration_n,weight")?;
        let weight = self.weight.unwrap_or(1.0);
        for (i, (s, d)) in self.log_velocities.iter().zip(&self.durations).enumerate() {
            writeln!(w, "{},{s:.16e},{d:.16e},{weight:.16e}", i as i64 - self.back_depth as i64)?;
        }
        Ok(())
    }
}

/// `Θ_x`: re-indexes the window around `T_x`, the first index with `S_n > x`,
/// and subtracts `x` from every log-velocity.
///
/// The window must show the crossing and at least one entry before it;
/// otherwise the error carries the back depth the shift could have had.
pub fn theta_shift(w: &StationaryWindow, x: f64) -> Result<StationaryWindow> {
    let Some(t) = w.log_velocities.iter().position(|s| *s > x) else {
        return Err(Error::TruncatedShift { level: x, feasible_depth: w.log_velocities.len() as i64 });
    };
    if t == 0 {
        return Err(Error::TruncatedShift { level: x, feasible_depth: 0 });
    }
    Ok(StationaryWindow {
        elasticity: w.elasticity,
        back_depth: t,
        fwd_length: w.log_velocities.len() - 1 - t,
        log_velocities: w.log_velocities.iter().map(|s| s - x).collect(),
        durations: w.durations.clone(),
        next_log_velocity: w.next_log_velocity - x,
        weight: w.weight,
    })
}

/// `α_x` with a reported estimate of the part lost to truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Alpha {
    pub value: f64,
    /// Geometric extrapolation of the terms beyond the back depth; infinite
    /// when the fitted terms do not decay.
    pub tail_bound: f64,
    pub depth: usize,
}

/// Least-squares fit of `ln term` against depth over the last quarter of the
/// terms, summed as a geometric tail beyond the window.
fn geometric_tail(log_terms_by_depth: &[f64]) -> f64 {
    let k = log_terms_by_depth.len();
    let q = (k / 4).max(2).min(k);
    if q < 2 {
        return f64::INFINITY;
    }
    let pts: Vec<(f64, f64)> = (k - q..k).map(|i| ((i + 1) as f64, log_terms_by_depth[i])).filter(|p| p.1.is_finite()).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let m = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / m, pts.iter().map(|p| p.1).sum::<f64>() / m);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = sxy / sxx;
    if !(b < 0.0) {
        return f64::INFINITY;
    }
    let a = my - b * mx;
    (a + b * (k + 1) as f64).exp() / -b.exp_m1()
}

/// `α_x = e^{2x} Σ_{n<0} e^{2 S_n} d_n` evaluated on `Θ_x w`.
pub fn alpha(w: &StationaryWindow, x: f64) -> Result<Alpha> {
    let s = theta_shift(w, x)?;
    let k = s.back_depth;
    if k == 0 {
        return domain("alpha needs at least one back entry");
    }
    // Depth j = 1..=k is entry n = -j.
    let log_terms: Vec<f64> = (1..=k).map(|j| 2.0 * s.log_velocities[k - j] + s.durations[k - j].ln()).collect();
    let top = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_terms.iter().map(|l| (l - top).exp()).sum();
    let value = (2.0 * x + top + sum.ln()).exp();
    let tail_bound = (2.0 * x).exp() * geometric_tail(&log_terms);
    Ok(Alpha { value, tail_bound, depth: k })
}

/// Number of back terms with `e^{2 S_{-n}} d_{-n} > e^{-n^{1/4}}`.
pub fn large_term_count(w: &StationaryWindow) -> usize {
    let k = w.back_depth;
    (1..=k).filter(|&j| 2.0 * w.log_velocities[k - j] + w.durations[k - j].ln() > -(j as f64).powf(0.25)).count()
}

/// Sizes of the auxiliary Monte Carlo behind a window builder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContextConfig {
    pub ladder_pool: usize,
    pub h_paths: usize,
    pub h_x_max: f64,
    pub h_knots: usize,
    pub escape_level: f64,
    pub certify_paths: usize,
    pub nu_side: f64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            ladder_pool: 100_000,
            h_paths: 20_000,
            h_x_max: 30.0,
            h_knots: 121,
            escape_level: 15.0,
            certify_paths: 100_000,
            nu_side: 30.0,
        }
    }
}

/// The overshoot law and, at criticality, the renewal function, shared by
/// every window of a run.
#[derive(Debug, Clone)]
pub struct StationaryContext {
    pub elasticity: Elasticity,
    pub law: LogVelocityStep,
    pub m: OvershootLaw,
    pub h: Option<RenewalFunction>,
    pub config: ContextConfig,
}

impl StationaryContext {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, e: Elasticity, config: ContextConfig) -> Result<Self> {
        if e.regime() == Regime::Subcritical {
            return domain(format!("no stationary construction for subcritical c = {}", e.c()));
        }
        let law = LogVelocityStep::new(e);
        let m = OvershootLaw::estimate(rng, &law, config.ladder_pool)?;
        let h = match e.regime() {
            Regime::Critical => Some(renewal_function_h(rng, &law, &uniform_grid(config.h_x_max, config.h_knots), config.h_paths)?),
            _ => None,
        };
        Ok(Self { elasticity: e, law, m, h, config })
    }

    /// A context from an overshoot law and renewal function built elsewhere;
    /// `h` must be given exactly at criticality.
    pub fn from_parts(e: Elasticity, m: OvershootLaw, h: Option<RenewalFunction>, config: ContextConfig) -> Result<Self> {
        match (e.regime(), &h) {
            (Regime::Subcritical, _) => domain(format!("no stationary construction for subcritical c = {}", e.c())),
            (Regime::Critical, None) => domain("a critical context needs the renewal function"),
            (Regime::Supercritical, Some(_)) => domain("a supercritical context takes no renewal function"),
            _ => Ok(Self { elasticity: e, law: LogVelocityStep::new(e), m, h, config }),
        }
    }

    pub fn builder<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<WindowBuilder<'_>> {
        match &self.h {
            None => {
                let certificate = ruin_certificate(rng, &self.law, self.config.escape_level, self.config.certify_paths, 60.0)?;
                if !certificate.holds() {
                    return domain(format!(
                        "escape level {} is not certified: ruin bound {:.2e}",
                        self.config.escape_level, certificate.upper_bound
                    ));
                }
                Ok(WindowBuilder::Supercritical { ctx: self, certificate })
            }
            Some(h) => {
                let nu = NuLaw::new(&self.law, h, self.m.mu_h, self.m.mu_h_se, self.config.nu_side)?;
                let kernel = DoobKernel::new(&self.law, h)?;
                Ok(WindowBuilder::Critical { ctx: self, nu: Box::new(nu), kernel: Box::new(kernel) })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum WindowBuilder<'a> {
    Supercritical { ctx: &'a StationaryContext, certificate: RuinCertificate },
    Critical { ctx: &'a StationaryContext, nu: Box<NuLaw<'a, LogVelocityStep>>, kernel: Box<DoobKernel<'a, LogVelocityStep>> },
}

impl<'a> WindowBuilder<'a> {
    pub fn context(&self) -> &'a StationaryContext {
        match self {
            WindowBuilder::Supercritical { ctx, .. } | WindowBuilder::Critical { ctx, .. } => ctx,
        }
    }

    /// A window with back depth `k ≥ 1` and forward length `n`.
    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R, k: usize, n: usize) -> Result<StationaryWindow> {
        match self {
            WindowBuilder::Supercritical { .. } => build_window_supercritical(rng, self, k, n),
            WindowBuilder::Critical { .. } => build_window_critical(rng, self, k, n),
        }
    }
}

/// `S_0` from `m`; `(-S_{-n})_{n≥0}` is the walk from `-S_0` conditioned to
/// stay positive, by rejection; the forward walk is plain.
pub fn build_window_supercritical<R: Rng + ?Sized>(rng: &mut R, b: &WindowBuilder<'_>, k: usize, n: usize) -> Result<StationaryWindow> {
    let WindowBuilder::Supercritical { ctx, certificate } = b else {
        return domain("supercritical windows need a supercritical builder");
    };
    if k == 0 {
        return domain("back depth must be at least 1");
    }
    let s0 = ctx.m.sample(rng);
    let path = conditioned_walk_rejection_with_budget(rng, &ctx.law, -s0, k, certificate.escape_level, DEFAULT_ATTEMPT_BUDGET)?;
    let back: Vec<f64> = (1..=k).rev().map(|j| -path.positions[j]).collect();
    StationaryWindow::assemble(rng, ctx.elasticity, back, s0, n, None)
}

/// `(-S_{-1}, S_0)` from `ν`; `(-S_{-n-1})_{n≥0}` from the walk conditioned
/// to stay nonnegative via the Doob kernel, whose importance weight the
/// window carries; the forward walk is plain.
pub fn build_window_critical<R: Rng + ?Sized>(rng: &mut R, b: &WindowBuilder<'_>, k: usize, n: usize) -> Result<StationaryWindow> {
    let WindowBuilder::Critical { ctx, nu, kernel } = b else {
        return domain("critical windows need a critical builder");
    };
    if k == 0 {
        return domain("back depth must be at least 1");
    }
    let (x, y) = nu.sample(rng);
    let (path, log_w) = kernel.path(rng, x, k - 1)?;
    let back: Vec<f64> = path.iter().rev().map(|p| -p).collect();
    StationaryWindow::assemble(rng, ctx.elasticity, back, y, n, Some(log_w.exp()))
}

/// Independent windows built in parallel chunks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowBatch {
    pub windows: Vec<StationaryWindow>,
    /// Effective sample size of the window weights.
    pub ess: f64,
}

impl WindowBatch {
    pub fn weights(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.weight.unwrap_or(1.0)).collect()
    }
}

/// Smallest ESS, as a share of the batch, before a weighted batch is refused.
pub const MIN_ESS_FRACTION: f64 = 0.01;

pub fn build_windows(factory: &StreamFactory, b: &WindowBuilder<'_>, count: usize, k: usize, n: usize) -> Result<WindowBatch> {
    let windows: Vec<Result<StationaryWindow>> =
        par_chunks(factory, "windows", count, 64, |s, len| (0..len).map(|_| b.build(s, k, n)).collect());
    let windows = windows.into_iter().collect::<Result<Vec<_>>>()?;
    let batch = WindowBatch { ess: 0.0, windows };
    let ess = effective_sample_size(&batch.weights());
    if ess < MIN_ESS_FRACTION * count as f64 {
        return Err(Error::DegenerateEnsemble { ess, threshold: MIN_ESS_FRACTION * count as f64, partial: None });
    }
    Ok(WindowBatch { ess, ..batch })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EntranceMode {
    /// Build a stationary window and shift it to the threshold.
    Backward,
    /// Draw the overshoot from `m` and set the entrance time to zero.
    ForwardOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntranceOptions {
    pub back_depth: usize,
    /// Arches in the forward skeleton.
    pub fwd_length: usize,
    /// Largest number of forward arches added while looking for the crossing.
    pub crossing_budget: usize,
}

impl Default for EntranceOptions {
    fn default() -> Self {
        Self { back_depth: 1000, fwd_length: 200, crossing_budget: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntranceSample {
    pub v: f64,
    /// `ln(speed at τ_v / v)`.
    pub y: f64,
    pub tau_v: f64,
    pub tau_tail_bound: f64,
    pub weight: f64,
    /// Set in forward-only mode, where `τ_v` is not computed.
    pub approximate: bool,
    pub forward: BounceSkeleton,
}

/// The process from the origin at zero velocity, seen from its first bounce
/// with speed above `v`.
pub fn sample_entrance<R: Rng + ?Sized>(
    rng: &mut R,
    b: &WindowBuilder<'_>,
    v: f64,
    mode: EntranceMode,
    opts: &EntranceOptions,
) -> Result<EntranceSample> {
    if !(v > 0.0 && v.is_finite()) {
        return domain(format!("threshold must be positive and finite, got {v}"));
    }
    let ctx = b.context();
    let x = v.ln();
    if mode == EntranceMode::ForwardOnly {
        let y = ctx.m.sample(rng);
        let forward = crate::skeleton::simulate_skeleton(rng, &ctx.elasticity, v * y.exp(), opts.fwd_length)?;
        return Ok(EntranceSample { v, y, tau_v: 0.0, tau_tail_bound: 0.0, weight: 1.0, approximate: true, forward });
    }
    let mut w = b.build(rng, opts.back_depth, opts.fwd_length)?;
    let mut added = 0usize;
    let shifted = loop {
        match theta_shift(&w, x) {
            Ok(s) if s.fwd_length >= opts.fwd_length => break s,
            Ok(s) => {
                let more = opts.fwd_length - s.fwd_length;
                w.extend_forward(rng, more);
                added += more;
            }
            Err(Error::TruncatedShift { feasible_depth, .. }) if feasible_depth > 0 => {
                if added >= opts.crossing_budget {
                    return Err(Error::BudgetExceeded {
                        what: format!("forward walk to level {x}"),
                        budget: opts.crossing_budget,
                        partial: None,
                    });
                }
                let more = w.fwd_length.max(64).min(opts.crossing_budget - added);
                w.extend_forward(rng, more);
                added += more;
            }
            Err(e) => return Err(e),
        }
    };
    let a = alpha(&w, x)?;
    let y = shifted.s(0);
    let arches: Vec<ArchSample> = shifted.forward_arches().into_iter().take(opts.fwd_length).collect();
    let forward = BounceSkeleton::from_arches(ctx.elasticity, v * y.exp(), &arches)?;
    Ok(EntranceSample { v, y, tau_v: a.value, tau_tail_bound: a.tail_bound, weight: w.weight.unwrap_or(1.0), approximate: false, forward })
}

pub fn write_entrance_csv<W: Write>(w: &mut W, samples: &[EntranceSample]) -> Result<()> {
    writeln!(w, "v,Y,tau_v,tau_tail_bound")?;
    for s in samples {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", s.v, s.y, s.tau_v, s.tau_tail_bound)?;
    }
    Ok(())
}

//! Time-discretized reflected Langevin dynamics, used only as an independent
//! check on the exact samplers.
//!
//! Semi-implicit Euler: `Ẋ += √dt·g`, then `X += Ẋ·dt`. When `X` turns
//! negative the crossing instant is found by linear interpolation, the speed is
//! reversed and multiplied by `c`, and the rest of the step is flown
//! ballistically with the new speed.

use crate::archlaw::Elasticity;
use crate::error::{domain, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::Write;

/// Source of standard Gaussian increments.
pub trait Noise {
    fn next_gaussian(&mut self) -> f64;
}

pub struct RngNoise<'a, R: Rng + ?Sized>(pub &'a mut R);

impl<R: Rng + ?Sized> Noise for RngNoise<'_, R> {
    fn next_gaussian(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }
}

/// Always zero: turns the integrator into free flight.
pub struct ZeroNoise;

impl Noise for ZeroNoise {
    fn next_gaussian(&mut self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BounceEvent {
    pub time: f64,
    /// Speed just before the bounce (negative).
    pub v_in: f64,
    /// `-c · v_in`.
    pub v_out: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Halt {
    /// Reached `t_max`.
    Horizon,
    /// Requested number of bounces recorded.
    BounceLimit,
    /// Position and speed both vanished: the discretization cannot continue.
    AccumulationReached,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DiscretePath {
    pub dt: f64,
    /// Grid times, positions and speeds; empty unless recording was requested.
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub bounce_events: Vec<BounceEvent>,
    pub halt: Halt,
    pub final_time: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub record_path: bool,
    /// Stop after this many bounces.
    pub max_bounces: Option<usize>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { record_path: true, max_bounces: None }
    }
}

const STALL: f64 = 1e-12;

/// One Euler step of length `dt` from `(x, v)` with Gaussian `g`. Returns the
/// new state and, if the boundary was hit, the bounce instant within the step.
fn step(x: f64, v: f64, g: f64, dt: f64, c: f64) -> (f64, f64, Option<(f64, f64)>) {
    let v_new = v + dt.sqrt() * g;
    let x_new = x + v_new * dt;
    if x_new >= 0.0 {
        return (x_new, v_new, None);
    }
    // x + v_new·s = 0 at s = x / (-v_new) ∈ [0, dt).
    let s = (x / -v_new).clamp(0.0, dt);
    let v_out = -c * v_new;
    let x_out = (v_out * (dt - s)).max(0.0);
    (x_out, v_out, Some((s, v_new)))
}

/// Integrates from `(x0, u0)` up to `t_max` drawing increments from `noise`.
pub fn integrate_with_noise<N: Noise>(
    noise: &mut N,
    e: &Elasticity,
    x0: f64,
    u0: f64,
    dt: f64,
    t_max: f64,
    opts: IntegrateOptions,
) -> Result<DiscretePath> {
    if !(dt > 0.0) || !(t_max > dt) {
        return domain(format!("need 0 < dt < t_max, got dt = {dt}, t_max = {t_max}"));
    }
    if !(x0 >= 0.0) || !x0.is_finite() || !u0.is_finite() {
        return domain(format!("start must have x0 >= 0 and finite speed, got ({x0}, {u0})"));
    }
    if x0 == 0.0 && u0 == 0.0 {
        return domain("the process cannot start at rest on the boundary");
    }
    let c = e.c();
    let mut path = DiscretePath {
        dt,
        times: Vec::new(),
        positions: Vec::new(),
        velocities: Vec::new(),
        bounce_events: Vec::new(),
        halt: Halt::Horizon,
        final_time: 0.0,
    };
    let (mut x, mut v) = (x0, u0);
    if x == 0.0 && v < 0.0 {
        path.bounce_events.push(BounceEvent { time: 0.0, v_in: v, v_out: -c * v });
        v *= -c;
    }
    let steps = (t_max / dt).floor() as u64;
    if opts.record_path {
        let cap = (steps + 1).min(1 << 24) as usize;
        path.times.reserve(cap);
        path.positions.reserve(cap);
        path.velocities.reserve(cap);
        path.times.push(0.0);
        path.positions.push(x);
        path.velocities.push(v);
    }
    for i in 0..steps {
        let t0 = i as f64 * dt;
        let (nx, nv, hit) = step(x, v, noise.next_gaussian(), dt, c);
        x = nx;
        v = nv;
        if let Some((s, v_in)) = hit {
            path.bounce_events.push(BounceEvent { time: t0 + s, v_in, v_out: v });
        }
        let t = (i + 1) as f64 * dt;
        if opts.record_path {
            path.times.push(t);
            path.positions.push(x);
            path.velocities.push(v);
        }
        path.final_time = t;
        if x.abs() < STALL && v.abs() < STALL {
            path.halt = Halt::AccumulationReached;
            return Ok(path);
        }
        if opts.max_bounces.is_some_and(|m| path.bounce_events.len() >= m) {
            path.halt = Halt::BounceLimit;
            return Ok(path);
        }
    }
    Ok(path)
}

/// [`integrate_with_noise`] driven by `rng`, recording the full path.
pub fn integrate<R: Rng + ?Sized>(rng: &mut R, e: &Elasticity, x0: f64, u0: f64, dt: f64, t_max: f64) -> Result<DiscretePath> {
    integrate_with_noise(&mut RngNoise(rng), e, x0, u0, dt, t_max, IntegrateOptions::default())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum FirstArch {
    Bounce { zeta1: f64, v1: f64 },
    NoBounce,
}

/// First bounce of a path started away from the boundary or leaving it.
pub fn extract_first_arch(path: &DiscretePath) -> FirstArch {
    match path.bounce_events.iter().find(|b| b.time > 0.0) {
        Some(b) => FirstArch::Bounce { zeta1: b.time, v1: b.v_out },
        None => FirstArch::NoBounce,
    }
}

/// First arches from `u0` at several step sizes driven by one Brownian path.
///
/// `dts` must be integer multiples of the smallest entry; the coarse levels
/// use the sums of the fine Gaussian increments (rescaled), so all levels see
/// the same Brownian motion and their differences are pure discretization
/// error.
pub fn coupled_first_arches<R: Rng + ?Sized>(rng: &mut R, e: &Elasticity, u0: f64, dts: &[f64], t_max: f64) -> Result<Vec<FirstArch>> {
    let fine = dts.iter().copied().fold(f64::INFINITY, f64::min);
    if !(fine > 0.0) || !(u0 > 0.0) || !(t_max > dts.iter().copied().fold(0.0, f64::max)) {
        return domain("coupled run needs positive step sizes below t_max and u0 > 0");
    }
    let ratios: Vec<u64> = dts
        .iter()
        .map(|dt| {
            let r = (dt / fine).round();
            if (r * fine - dt).abs() > 1e-9 * dt {
                domain(format!("step {dt} is not a multiple of {fine}"))
            } else {
                Ok(r as u64)
            }
        })
        .collect::<Result<_>>()?;
    let c = e.c();
    let n = dts.len();
    let mut state: Vec<(f64, f64)> = vec![(0.0, u0); n];
    let mut acc = vec![0.0; n];
    let mut out = vec![FirstArch::NoBounce; n];
    let mut open = n;
    let steps = (t_max / fine).floor() as u64;
    for i in 0..steps {
        let g: f64 = rng.sample(StandardNormal);
        for j in 0..n {
            if !matches!(out[j], FirstArch::NoBounce) {
                continue;
            }
            acc[j] += g;
            if (i + 1) % ratios[j] != 0 {
                continue;
            }
            let gj = acc[j] / (ratios[j] as f64).sqrt();
            acc[j] = 0.0;
            let t0 = ((i + 1) / ratios[j] - 1) as f64 * dts[j];
            let (x, v) = state[j];
            let (nx, nv, hit) = step(x, v, gj, dts[j], c);
            state[j] = (nx, nv);
            if let Some((s, _)) = hit {
                out[j] = FirstArch::Bounce { zeta1: t0 + s, v1: nv };
                open -= 1;
            }
        }
        if open == 0 {
            break;
        }
    }
    Ok(out)
}

/// Writes `t,v_in,v_out` rows.
pub fn write_events_csv<W: Write>(w: &mut W, path: &DiscretePath) -> Result<()> {
    writeln!(w, "t,v_in,v_out")?;
    for b in &path.bounce_events {
        writeln!(w, "{:.16e},{:.16e},{:.16e}", b.time, b.v_in, b.v_out)?;
    }
    Ok(())
}

/// Writes `t,X,V` rows of a recorded path.
pub fn write_path_csv<W: Write>(w: &mut W, path: &DiscretePath) -> Result<()> {
    writeln!(w, "t,X,V")?;
    for ((t, x), v) in path.times.iter().zip(&path.positions).zip(&path.velocities) {
        writeln!(w, "{t:.16e},{x:.16e},{v:.16e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_noise_is_ballistic() {
        let e = Elasticity::new(1.0).unwrap();
        let p = integrate_with_noise(&mut ZeroNoise, &e, 0.0, 1.0, 1e-3, 2.0, IntegrateOptions::default()).unwrap();
        assert!(p.bounce_events.is_empty());
        for (t, x) in p.times.iter().zip(&p.positions) {
            assert!((x - t).abs() < 1e-12);
        }
        assert_eq!(extract_first_arch(&p), FirstArch::NoBounce);
    }

    #[test]
    fn synthetic_event_is_extracted() {
        let p = DiscretePath {
            dt: 0.1,
            times: vec![],
            positions: vec![],
            velocities: vec![],
            bounce_events: vec![BounceEvent { time: 0.7, v_in: -2.0, v_out: 1.0 }],
            halt: Halt::Horizon,
            final_time: 1.0,
        };
        assert_eq!(extract_first_arch(&p), FirstArch::Bounce { zeta1: 0.7, v1: 1.0 });
    }

    #[test]
    fn reflection_identity_and_positivity() {
        let e = Elasticity::new(0.7).unwrap();
        let p = integrate(&mut rng(1), &e, 0.0, 0.05, 1e-4, 5.0).unwrap();
        assert!(!p.bounce_events.is_empty());
        for b in &p.bounce_events {
            assert!(b.v_in < 0.0);
            assert_eq!(b.v_out, -e.c() * b.v_in);
        }
        assert!(p.positions.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn falling_start_bounces_at_once() {
        let e = Elasticity::new(0.5).unwrap();
        let p = integrate_with_noise(&mut ZeroNoise, &e, 0.0, -2.0, 0.01, 1.0, IntegrateOptions::default()).unwrap();
        assert_eq!(p.bounce_events[0], BounceEvent { time: 0.0, v_in: -2.0, v_out: 1.0 });
    }

    #[test]
    fn invalid_arguments() {
        let e = Elasticity::new(0.5).unwrap();
        assert!(integrate(&mut rng(1), &e, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(integrate(&mut rng(1), &e, 0.0, 0.0, 0.1, 1.0).is_err());
        assert!(integrate(&mut rng(1), &e, -1.0, 1.0, 0.1, 1.0).is_err());
        assert!(coupled_first_arches(&mut rng(1), &e, 1.0, &[1e-3, 3.5e-4], 1.0).is_err());
    }

    #[test]
    fn coupled_finest_level_matches_direct_run() {
        let e = Elasticity::new(1.0).unwrap();
        let dt = 1e-4;
        let coupled = coupled_first_arches(&mut rng(7), &e, 1.0, &[dt], 3.0).unwrap();
        let direct = integrate_with_noise(
            &mut RngNoise(&mut rng(7)),
            &e,
            0.0,
            1.0,
            dt,
            3.0,
            IntegrateOptions { record_path: false, max_bounces: Some(1) },
        )
        .unwrap();
        assert_eq!(coupled[0], extract_first_arch(&direct));
    }

    #[test]
    fn paths_are_reproducible_and_csv_written() {
        let e = Elasticity::new(0.9).unwrap();
        let a = integrate(&mut rng(3), &e, 0.5, 0.0, 1e-3, 1.0).unwrap();
        let b = integrate(&mut rng(3), &e, 0.5, 0.0, 1e-3, 1.0).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &a).unwrap();
        write_path_csv(&mut buf, &a).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,v_in,v_out\n"));
    }
}

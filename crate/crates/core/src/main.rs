use clap::{Args, Parser, Subcommand, ValueEnum};
use rlangevin::archlaw::{sample_arch, Elasticity, Regime};
use rlangevin::renewal::identities::{duality_check, woodroofe_gut_check};
use rlangevin::renewal::renewal_fn::uniform_grid;
use rlangevin::renewal::{renewal_function_h, LogVelocityStep, OvershootLaw};
use rlangevin::rng::{par_chunks, StreamFactory};
use rlangevin::sde::{integrate_with_noise, write_events_csv, IntegrateOptions, RngNoise};
use rlangevin::skeleton::{accumulation_diagnostics, simulate_skeleton};
use rlangevin::stationary::{sample_entrance, write_entrance_csv, ContextConfig, EntranceMode, EntranceOptions, StationaryContext};
use rlangevin::verify::{run_with_progress, VerifyConfig};
use rlangevin::{Error, Result};
use serde::Serialize;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "RLANGEVIN_OUT";

#[derive(Parser, Debug)]
#[command(name = "rlangevin", version, about = "Exact simulation of the Langevin process reflected at a partially elastic boundary")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Elasticity coefficient, or `critical`.
    #[arg(long, default_value_t = 0.5, value_parser = positive)]
    c: f64,
    /// Master seed; equal seeds and flags give identical output.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file; defaults to $RLANGEVIN_OUT/<command>.<format> when that is set, stdout otherwise.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum RenewalWhat {
    /// Renewal function table.
    H,
    /// Draws from the stationary overshoot law.
    M,
    /// Ladder identity check for the given elasticity.
    Identities,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Backward,
    ForwardOnly,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Independent normalized arches (duration, log-step).
    Arch {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
    },
    /// Bounce skeleton (n, zeta_n, S_n); the accumulation report goes to stderr.
    Skeleton {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Starting speed.
        #[arg(long, default_value_t = 1.0, value_parser = positive)]
        u0: f64,
    },
    /// Discretized SDE path, reported as bounce events.
    Sde {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        x0: f64,
        #[arg(long, default_value_t = 1.0)]
        u0: f64,
        #[arg(long, default_value_t = 1e-4, value_parser = positive)]
        dt: f64,
        #[arg(long, default_value_t = 10.0, value_parser = positive)]
        t_max: f64,
    },
    /// Renewal-theory tables and checks for the log-velocity walk (JSON).
    Renewal {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = RenewalWhat::H)]
        what: RenewalWhat,
        /// Monte Carlo paths or draws.
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, default_value_t = 30.0, value_parser = positive)]
        x_max: f64,
        #[arg(long, default_value_t = 121)]
        knots: usize,
    },
    /// Entrance samples at a velocity threshold (v, Y, tau_v, tau_tail_bound).
    Entrance {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1.0, value_parser = positive)]
        v: f64,
        /// Back depth K of the stationary windows.
        #[arg(long = "back-depth", default_value_t = 1000)]
        back_depth: usize,
        /// Forward arches N kept after the threshold.
        #[arg(long = "fwd-length", default_value_t = 200)]
        fwd_length: usize,
        #[arg(long, value_enum, default_value_t = Mode::Backward)]
        mode: Mode,
    },
    /// Runs the acceptance suite and writes the JSON report.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Smaller samples and wider tolerances.
        #[arg(long)]
        quick: bool,
        /// Comma-separated criteria to run.
        #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=15))]
        only: Vec<u8>,
    },
}

/// A positive real; `critical` stands for the critical elasticity.
fn positive(s: &str) -> std::result::Result<f64, String> {
    if s == "critical" {
        return Ok(rlangevin::archlaw::critical_coefficient());
    }
    let x: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("must be positive and finite, got {s}"))
    }
}

enum Failure {
    Usage(String),
    Run(Error),
    Checks(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(m) => Failure::Usage(m),
            e => Failure::Run(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

fn sink(common: &Common, command: &str, default: Format) -> std::result::Result<Box<dyn Write>, Failure> {
    let ext = match common.format.unwrap_or(default) {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let path = match (&common.output, std::env::var_os(OUT_ENV)) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(dir)) => {
            std::fs::create_dir_all(&dir)?;
            Some(PathBuf::from(dir).join(format!("{command}.{ext}")))
        }
        (None, None) => None,
    };
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::BufWriter::new(std::io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(w: &mut dyn Write, v: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, v)?;
    writeln!(w)?;
    Ok(())
}

fn elasticity(c: f64) -> std::result::Result<Elasticity, Failure> {
    Ok(Elasticity::new(c)?)
}

fn execute(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Arch { common, n } => {
            let e = elasticity(common.c)?;
            let f = StreamFactory::new(common.seed);
            let arches = par_chunks(&f, "arch", n, 16_384, |s, len| (0..len).map(|_| sample_arch(s, &e)).collect());
            let mut w = sink(&common, "arch", Format::Csv)?;
            if common.format == Some(Format::Json) {
                write_json(&mut w, &arches)?;
            } else {
                writeln!(w, "duration,log_step")?;
                for a in &arches {
                    writeln!(w, "{:.16e},{:.16e}", a.duration, a.log_step)?;
                }
            }
            w.flush()?;
        }
        Command::Skeleton { common, n, u0 } => {
            let e = elasticity(common.c)?;
            let sk = simulate_skeleton(&mut StreamFactory::new(common.seed).stream("skeleton", 0), &e, u0, n)?;
            let mut w = sink(&common, "skeleton", Format::Csv)?;
            if common.format == Some(Format::Json) {
                write_json(&mut w, &sk)?;
            } else {
                rlangevin::skeleton::write_csv(&mut w, &sk)?;
            }
            w.flush()?;
            if sk.len() >= 100 {
                eprintln!("{}", serde_json::to_string(&accumulation_diagnostics(&sk)?).map_err(Error::from)?);
            }
        }
        Command::Sde { common, x0, u0, dt, t_max } => {
            let e = elasticity(common.c)?;
            let mut rng = StreamFactory::new(common.seed).stream("sde", 0);
            let opts = IntegrateOptions { record_path: false, max_bounces: None };
            let path = integrate_with_noise(&mut RngNoise(&mut rng), &e, x0, u0, dt, t_max, opts)?;
            let mut w = sink(&common, "sde", Format::Csv)?;
            if common.format == Some(Format::Json) {
                write_json(&mut w, &path.bounce_events)?;
            } else {
                write_events_csv(&mut w, &path)?;
            }
            w.flush()?;
        }
        Command::Renewal { common, what, n, x_max, knots } => {
            let e = elasticity(common.c)?;
            let law = LogVelocityStep::new(e);
            let f = StreamFactory::new(common.seed);
            let mut rng = f.stream("renewal", 0);
            let mut w = sink(&common, "renewal", Format::Json)?;
            if common.format == Some(Format::Csv) && what != RenewalWhat::H {
                return Err(Failure::Usage("only the h table has a CSV form".into()));
            }
            match what {
                RenewalWhat::H => {
                    if e.regime() != Regime::Critical {
                        return Err(Failure::Usage(
                            "the renewal function is tabulated for the zero-mean walk; pass --c at the critical value".into(),
                        ));
                    }
                    let h = renewal_function_h(&mut rng, &law, &uniform_grid(x_max, knots), n)?;
                    if common.format == Some(Format::Csv) {
                        h.write_csv(&mut w)?;
                    } else {
                        write_json(&mut w, &h)?;
                    }
                }
                RenewalWhat::M => {
                    let m = OvershootLaw::estimate(&mut rng, &law, n)?;
                    let draws: Vec<f64> = (0..n).map(|_| m.sample(&mut rng)).collect();
                    write_json(&mut w, &serde_json::json!({ "c": e.c(), "mu_h": m.mu_h, "mu_h_se": m.mu_h_se, "draws": draws }))?;
                }
                RenewalWhat::Identities => match e.regime() {
                    Regime::Supercritical => write_json(&mut w, &woodroofe_gut_check(&mut rng, &law, &[0.5, 1.0, 2.0], n, 15.0)?)?,
                    Regime::Critical => {
                        let h = renewal_function_h(&mut rng, &law, &uniform_grid(x_max, knots), n)?;
                        write_json(&mut w, &duality_check(&mut rng, &law, &h, n, 1000, n)?)?;
                    }
                    Regime::Subcritical => return Err(Failure::Usage("identity checks need c at or above the critical value".into())),
                },
            }
            w.flush()?;
        }
        Command::Entrance { common, n, v, back_depth, fwd_length, mode } => {
            let e = elasticity(common.c)?;
            let f = StreamFactory::new(common.seed);
            let ctx = StationaryContext::new(&mut f.stream("context", 0), e, ContextConfig::default())?;
            let b = ctx.builder(&mut f.stream("builder", 0))?;
            let mode = match mode {
                Mode::Backward => EntranceMode::Backward,
                Mode::ForwardOnly => EntranceMode::ForwardOnly,
            };
            let opts = EntranceOptions { back_depth, fwd_length, ..EntranceOptions::default() };
            let samples = par_chunks(&f, "entrance", n, 64, |s, len| (0..len).map(|_| sample_entrance(s, &b, v, mode, &opts)).collect());
            let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
            let mut w = sink(&common, "entrance", Format::Csv)?;
            if common.format == Some(Format::Json) {
                write_json(&mut w, &samples)?;
            } else {
                write_entrance_csv(&mut w, &samples)?;
            }
            w.flush()?;
        }
        Command::Verify { common, quick, only } => {
            if common.format == Some(Format::Csv) {
                return Err(Failure::Usage("the verification report is JSON".into()));
            }
            if elasticity(common.c)?.regime() != Regime::Supercritical {
                return Err(Failure::Usage(format!("verify takes a supercritical --c, got {}", common.c)));
            }
            let cfg = VerifyConfig { seed: common.seed, quick, c: common.c, only };
            let report = run_with_progress(&cfg, |k, checks, t| {
                let pass = checks.iter().all(|c| c.pass);
                eprintln!("criterion {k:>2}: {} ({:.1}s)", if pass { "pass" } else { "FAIL" }, t.as_secs_f64());
            });
            let mut w = sink(&common, "verify", Format::Json)?;
            w.write_all(report.to_json()?.as_bytes())?;
            writeln!(w)?;
            w.flush()?;
            for line in report.summary_lines() {
                eprintln!("{line}");
            }
            if !report.passed() {
                return Err(Failure::Checks(
                    report.failing().iter().map(|c| format!("criterion {} check {}", c.criterion, c.id)).collect(),
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Checks(failing)) => {
            for f in failing {
                eprintln!("failed: {f}");
            }
            ExitCode::from(1)
        }
    }
}

use clap::{Args, Parser, Subcommand};
use smoney::analysis::{self, CountTable};
use smoney::bits::BitString;
use smoney::bounds::{self, SchemeParams, SweepSettings};
use smoney::config::{ConfigError, RunConfig};
use smoney::oracle::{self, PreparationSpec, XiSearch};
use smoney::photonics;
use smoney::protocol::{self, causal_check, flexibility_check};
use smoney::qmath::Angle;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "smoney", version, about = "Quantum token scheme laboratory: bounds, sweeps, oracle, simulation and protocol runs")]
struct Cli {
    /// Only parse and validate the configuration.
    #[arg(long, global = true)]
    validate_only: bool,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// RNG seed; overrides the config seed.
    #[arg(long, global = true, env = "SMONEY_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate every security bound for a parameter set.
    Bounds(BoundsArgs),
    /// Largest tolerable bias as a function of misalignment and error rate.
    Sweep(SweepArgs),
    /// Exact maximum norm of the forging operators for small N.
    Oracle(OracleArgs),
    /// Monte Carlo of the photonic source and detectors.
    Simulate(SimulateArgs),
    /// Estimate parameters from pulse records or a count table.
    Analyze(AnalyzeArgs),
    /// Run an honest scheme or a double-presentation experiment.
    Protocol(ProtocolArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// JSON run configuration; defaults to the embedded experiment preset.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig, ConfigError> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::experiment_preset()),
        }
    }
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// JSON report path (stdout if absent)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Use the experiment's fixed parameters and the figure grid.
    #[arg(long)]
    fig2: bool,
    /// Security target; each bound term is held below target/2. Overrides the config
    #[arg(long)]
    target: Option<f64>,
    /// CSV output (stdout if absent)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Ideal BB84 ensemble.
    #[arg(long)]
    ideal: bool,
    /// Number of qubits
    #[arg(long = "N", default_value_t = 4)]
    n: usize,
    /// Error tolerance γ_err
    #[arg(long, default_value_t = 0.0)]
    gamma_err: f64,
    /// Misalignment bound for the homogeneous ensemble.
    #[arg(long, default_value_t = 0.0)]
    theta_deg: f64,
    /// Basis-bias bound
    #[arg(long, default_value_t = 0.0)]
    beta_pb: f64,
    /// Run the single-qubit average-state check instead.
    #[arg(long)]
    rho_check: bool,
    /// Preparation-bias bound (with --rho-check)
    #[arg(long, default_value_t = 0.0)]
    beta_ps: f64,
    /// JSON report path (stdout if absent)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Overrides the configured pulse count.
    #[arg(long)]
    pulses: Option<u64>,
    /// CSV output (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Pulse-record CSV; without it the config count table is used.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Count every transmitted pulse in the bias estimators.
    #[arg(long)]
    all_pulses: bool,
    /// JSON report path (stdout if absent)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProtocolArgs {
    /// JSON run configuration with a `protocol` block
    #[arg(long)]
    config: PathBuf,
    /// Write the message log as JSON lines (honest runs only).
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// JSON result path (stdout if absent)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Other(String),
    #[error("{0}")]
    Io(#[from] io::Error),
    /// Output was produced but some named inequality fails.
    #[error("constraint violated: {0}")]
    Violation(String),
}

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

fn writer(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: serde::Serialize>(out: &Option<PathBuf>, value: &T) -> Result<(), CliError> {
    let mut w = writer(out)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(other)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn seed_for(cli: &Cli, cfg: &RunConfig) -> u64 {
    cli.seed.or(cfg.seed).unwrap_or(0)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Bounds(a) => {
            let cfg = a.config.load()?;
            cfg.validate()?;
            let p = cfg.params()?;
            let v = cfg.free.ok_or(ConfigError::Missing("free"))?;
            if cli.validate_only {
                return Ok(());
            }
            let report = bounds::evaluate_all(p, &v, cfg.spacelike_pairs).map_err(other)?;
            write_json(&a.out, &report)?;
            let bad: Vec<String> = report.violations().iter().map(|c| format!("{} (margin {:e})", c.name, c.margin)).collect();
            if bad.is_empty() {
                Ok(())
            } else {
                Err(CliError::Violation(bad.join("; ")))
            }
        }
        Command::Sweep(a) => {
            let cfg = a.config.load()?;
            cfg.validate()?;
            let (fixed, thetas, es, mut target, nu, settings): (SchemeParams, Vec<f64>, Vec<f64>, f64, Option<f64>, SweepSettings) =
                if a.fig2 {
                    let thetas = (0..=20).map(|d| d as f64 * 0.5).collect();
                    (bounds::experiment_fixed(), thetas, vec![0.01, 0.03, 0.058], 1e-9, None, SweepSettings::default())
                } else {
                    let s = cfg.sweep.clone().ok_or(ConfigError::Missing("sweep"))?;
                    (cfg.params()?.clone(), s.theta_deg, s.e, s.target, s.nu_unf, s.settings)
                };
            if let Some(t) = a.target {
                target = t;
            }
            if cli.validate_only {
                return Ok(());
            }
            let grid: Vec<Angle> = thetas.iter().map(|&d| Angle::from_degrees(d)).collect();
            let rows = bounds::sweep_beta_max(&fixed, &grid, &es, target, nu, &settings).map_err(other)?;
            bounds::write_sweep_csv(writer(&a.out)?, &rows).map_err(other)?;
            Ok(())
        }
        Command::Oracle(a) => {
            if a.rho_check {
                if cli.validate_only {
                    return Ok(());
                }
                let r = oracle::rho_eigen_check(a.beta_ps, a.beta_pb, Angle::from_degrees(a.theta_deg), XiSearch::Grid(64))
                    .map_err(other)?;
                return write_json(&a.out, &r);
            }
            let spec = if a.ideal {
                PreparationSpec::ideal_bb84(a.n)
            } else {
                PreparationSpec::homogeneous(a.n, Angle::from_degrees(a.theta_deg), a.beta_pb).map_err(other)?
            };
            spec.validate().map_err(other)?;
            if cli.validate_only {
                return Ok(());
            }
            let r = oracle::max_norm_exact(&spec, a.gamma_err).map_err(other)?;
            write_json(&a.out, &r)
        }
        Command::Simulate(a) => {
            let cfg = a.config.load()?;
            cfg.validate()?;
            let s = cfg.simulate.clone().ok_or(ConfigError::Missing("simulate"))?;
            if cli.validate_only {
                return Ok(());
            }
            let pulses = a.pulses.unwrap_or(s.pulses);
            let records = photonics::simulate_pulses(&s.source, &s.detectors, s.strategy, &s.prep, pulses, seed_for(cli, &cfg))
                .map_err(other)?;
            photonics::write_records(writer(&a.out)?, &records).map_err(other)?;
            Ok(())
        }
        Command::Analyze(a) => {
            let table = match &a.records {
                Some(path) => {
                    let f = File::open(path)?;
                    let records = photonics::read_records(BufReader::new(f)).map_err(other)?;
                    CountTable::from_records(&records, a.all_pulses)
                }
                None => {
                    let cfg = a.config.load()?;
                    cfg.validate()?;
                    cfg.counts.ok_or(ConfigError::Missing("counts"))?
                }
            };
            table.validate().map_err(other)?;
            if cli.validate_only {
                return Ok(());
            }
            let stats = analysis::estimate_stats(&table);
            eprint!("{}", analysis::human_report(&stats));
            write_json(&a.out, &stats)
        }
        Command::Protocol(a) => {
            let cfg = RunConfig::load(&a.config)?;
            cfg.validate()?;
            let pc = cfg.protocol.clone().ok_or(ConfigError::Missing("protocol"))?;
            let setup = cfg.protocol_setup()?;
            if cli.validate_only {
                return Ok(());
            }
            let seed = seed_for(cli, &cfg);
            let m = setup.rounds() as usize;
            match pc.adversary {
                Some(adv) => {
                    let (v, w) = pc
                        .target
                        .clone()
                        .unwrap_or_else(|| (BitString::zeros(m), BitString::zeros(m).complement()));
                    let rec = protocol::run_double_spend(adv, &setup, (&v, &w), pc.trials, seed).map_err(other)?;
                    write_json(&a.out, &rec)?;
                    if rec.causal_failures > 0 {
                        return Err(CliError::Other(format!("{} transcripts failed the causal check", rec.causal_failures)));
                    }
                    Ok(())
                }
                None => {
                    let b = pc.b.clone().unwrap_or_else(|| BitString::zeros(m));
                    let tr = protocol::run_honest(&setup, &b, seed).map_err(other)?;
                    if let Some(path) = &a.transcript {
                        std::fs::write(path, tr.to_json_lines())?;
                    }
                    let causal = causal_check(&tr);
                    let summary = serde_json::json!({
                        "scheme": tr.scheme,
                        "outcome": tr.outcome,
                        "decisions": tr.decisions.iter().map(|d| serde_json::json!({
                            "point": d.point, "accepted": d.accepted, "reason": d.reason, "rounds": d.rounds,
                        })).collect::<Vec<_>>(),
                        "messages": tr.messages.len(),
                        "causal_check": causal.as_ref().err().cloned().unwrap_or_else(|| "ok".into()),
                        "flexible": flexibility_check(&tr),
                    });
                    write_json(&a.out, &summary)?;
                    causal.map_err(CliError::Other)
                }
            }
        }
    }
}

fn init_pool(jobs: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().map_err(other)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                ErrorKind::InvalidSubcommand
                | ErrorKind::MissingSubcommand
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::from(EXIT_USAGE),
                _ => ExitCode::from(1),
            };
        }
    };
    if let Err(e) = init_pool(cli.jobs).and_then(|_| run(&cli)) {
        eprintln!("error: {e}");
        return match e {
            CliError::Violation(_) => ExitCode::from(2),
            _ => ExitCode::from(1),
        };
    }
    ExitCode::SUCCESS
}

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lnspdc::config::{load_config, OutputFormat, RunConfig, DEFAULTS_HELP};
use lnspdc::experiments as exp;
use lnspdc::pair_statistics::events::EventStream;
use lnspdc::table::Table;
use lnspdc::Error;

/// Exit status for an invalid or unreadable configuration.
const EXIT_CONFIG: u8 = 3;
/// Exit status for failures while running an experiment.
const EXIT_RUNTIME: u8 = 1;
/// Exit status for command-line misuse (clap uses the same code).
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "lnspdc",
    version,
    about = "Photon-pair generation in a lithium-niobate microdisk: phase matching, pair statistics and Franson interference.",
    after_long_help = DEFAULTS_HELP
)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path: the event file for `simulate`, the table otherwise (default stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Table format.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads (0 = one per core), overriding `parallelism`.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected LO:HI in nm, e.g. 1500:1700")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("bad lower edge `{a}`: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("bad upper edge `{b}`: {e}"))?;
    if !(lo > 0.0 && hi > lo) {
        return Err(format!("band {lo}:{hi} must be increasing and positive"));
    }
    Ok((lo, hi))
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resonance combs of every mode family.
    Modes {
        #[arg(long, value_parser = parse_band)]
        band: Option<(f64, f64)>,
    },
    /// FSR and group index of every family at the calibration wavelength.
    Families,
    /// Candidate triples near energy conservation, with the matching decision.
    Match {
        #[arg(long, value_parser = parse_band)]
        band: Option<(f64, f64)>,
    },
    /// Intensity build-up along the rim for the reference triple.
    Trace {
        /// Azimuthal mismatch m_s + m_i − m_p to impose.
        #[arg(long, allow_hyphen_values = true)]
        delta_m: i64,
        /// Round trips (default `matching.n_turns`).
        #[arg(long)]
        turns: Option<usize>,
        /// Emit every n-th grid point.
        #[arg(long, default_value_t = 16)]
        stride: usize,
    },
    /// Matched triples in a signal band with relative strengths.
    Scan {
        #[arg(long, value_parser = parse_band)]
        band: Option<(f64, f64)>,
    },
    /// Simulate a two-fold detection run and write the event file to --out.
    Simulate {
        /// Pump power [µW] (default `source.pump_power_uw`).
        #[arg(long)]
        power: Option<f64>,
        /// Run length [s] (default `source.duration_s`).
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Coincidence metrics (or the delay histogram) of an event file or a fresh simulation.
    Coinc {
        /// Event file (TTPS binary, or CSV by extension); simulated when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        window_ps: Option<f64>,
        /// Emit the delay histogram instead of the metrics row.
        #[arg(long)]
        histogram: bool,
    },
    /// Heralded g²(τ) of the brightest DWDM channel.
    G2 {
        #[arg(long)]
        tau_max_ns: Option<f64>,
        /// Three-channel event file (idler, signal 1, signal 2); simulated when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Franson fringes: quantum and classical counts and the fitted visibility.
    Franson {
        #[arg(long)]
        xi_steps: Option<usize>,
        #[arg(long)]
        integration_s: Option<f64>,
    },
    /// Coincidences per DWDM channel.
    Spectrum {
        #[arg(long)]
        integration_s: Option<f64>,
    },
    /// Two-fold runs over a list of pump powers.
    PowerSweep {
        /// Comma-separated powers [µW] (default `power_sweep.powers_uw`).
        #[arg(long, value_delimiter = ',')]
        powers: Option<Vec<f64>>,
    },
    /// Runs the configured experiment once per `[sweep]` value.
    Sweep,
    /// Prints the documented configuration defaults.
    Defaults,
}

enum Failure {
    Config(String),
    Runtime(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn emit(table: &Table, cfg: &RunConfig, out: Option<&PathBuf>) -> Result<(), Failure> {
    let format = cfg.output.format;
    match out.or(cfg.output.path.as_ref()) {
        Some(path) => table.save(path, format)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            table.write(&mut lock, format)?;
            lock.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
        }
    }
    Ok(())
}

fn load(path: &Option<PathBuf>) -> Result<EventStream, Failure> {
    let path = path.as_ref().expect("checked by caller");
    Ok(EventStream::load(path)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::Defaults = cli.command {
        print!("{DEFAULTS_HELP}");
        return Ok(());
    }
    let mut cfg = match &cli.config {
        Some(path) => load_config(path).map_err(|e| Failure::Config(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(p) = cli.parallelism {
        cfg.parallelism = p;
    }
    if let Some(f) = cli.format {
        cfg.output.format = match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        };
    }
    let out = cli.out.clone();
    let parallelism = cfg.parallelism;
    exp::with_parallelism(parallelism, move || execute(cli.command, cfg, out))?
}

fn execute(command: Command, mut cfg: RunConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    let table = match command {
        Command::Defaults => unreachable!("handled before loading the configuration"),
        Command::Modes { band } => exp::run_modes(&cfg, band)?,
        Command::Families => exp::run_family_summary(&cfg)?,
        Command::Match { band } => exp::run_match(&cfg, band)?,
        Command::Trace { delta_m, turns, stride } => {
            exp::run_trace(&cfg, delta_m, turns.unwrap_or(cfg.matching.n_turns), stride)?
        }
        Command::Scan { band } => exp::run_scan(&cfg, band)?,
        Command::Simulate { power, duration } => {
            let path = out.ok_or_else(|| Failure::Usage("simulate needs --out <events file>".into()))?;
            if let Some(p) = power {
                cfg.source.pump_power_uw = p;
            }
            cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
            let sim = exp::run_simulate(&cfg, duration.unwrap_or(cfg.source.duration_s))?;
            sim.stream.save(&path)?;
            let summary = exp::simulation_summary(&sim);
            let stdout = std::io::stdout();
            summary.write(stdout.lock(), cfg.output.format)?;
            return Ok(());
        }
        Command::Coinc { input, window_ps, histogram } => {
            if let Some(w) = window_ps {
                cfg.coincidence.window_ps = w;
                cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
            }
            let stream = match input {
                Some(_) => load(&input)?,
                None => exp::run_simulate(&cfg, cfg.source.duration_s)?.stream,
            };
            if histogram {
                exp::run_histogram(&cfg, &stream)?
            } else {
                exp::run_coinc(&cfg, &stream)?
            }
        }
        Command::G2 { tau_max_ns, input } => {
            let tau_max = tau_max_ns.unwrap_or(cfg.g2.tau_max_ns);
            match input {
                Some(_) => exp::g2_table(&load(&input)?, &exp::g2_taus_ps(&cfg, tau_max), cfg.coincidence.window_ps)?,
                None => exp::run_g2(&cfg, tau_max)?,
            }
        }
        Command::Franson { xi_steps, integration_s } => exp::run_franson(
            &cfg,
            xi_steps.unwrap_or(cfg.umi.xi_steps),
            integration_s.unwrap_or(cfg.umi.integration_s),
        )?,
        Command::Spectrum { integration_s } => {
            if let Some(t) = integration_s {
                cfg.spectrum.integration_s = t;
                cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
            }
            exp::run_spectrum(&cfg)?
        }
        Command::PowerSweep { powers } => {
            let powers = powers.unwrap_or_else(|| cfg.power_sweep.powers_uw.clone());
            exp::run_power_sweep(&cfg, &powers)?
        }
        Command::Sweep => exp::run_sweep(&cfg)?,
    };
    emit(&table, &cfg, out.as_ref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("lnspdc: configuration error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("lnspdc: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("lnspdc: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

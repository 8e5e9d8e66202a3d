//! `qpt`: command-line front end for qpt-core.
//!
//! Exit codes: 0 success, 1 numerical failure or verification violations,
//! 2 usage error.

mod commands;
mod config;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use qpt_core::par::Execution;
use serde::de::DeserializeOwned;
use serde_json::json;

use commands::{Command, Output};
use config::{LiouvilleSpec, RunConfig, MANIFEST_SCHEMA};

const DEFAULT_OUT: &str = "qpt-out";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<qpt_core::Error> for CliError {
    fn from(e: qpt_core::Error) -> Self {
        match e {
            qpt_core::Error::Input(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "qpt", version, about = "Transport and band numerics for quasiperiodic Schrödinger operators")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Options shared by every subcommand; they override the config file.
#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config, or manifest.json of an earlier run
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, env = "QPT_OUT_DIR")]
    out: Option<PathBuf>,
    /// amo, zero or table
    #[arg(long)]
    sampling: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// p/q, a real in (0, 1), or `golden`
    #[arg(long)]
    freq: Option<String>,
    /// beta=B,q1=Q,depth=D
    #[arg(long)]
    liouville: Option<LiouvilleSpec>,
    /// Use the convergent p_m/q_m with this m
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores, 1 = sequential)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct EnergyArgs {
    /// Comma-separated energies
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    energy: Vec<f64>,
    #[arg(long, allow_negative_numbers = true)]
    e_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    e_max: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Continued fraction, convergents and beta estimate
    Freq {
        #[command(flatten)]
        common: Common,
    },
    /// Floquet bands of the periodic approximant
    Bands {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kappa_grid: Option<usize>,
    },
    /// Discriminant and its derivative on an energy grid
    Discriminant {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        energy: EnergyArgs,
    },
    /// Canonical spectral measure weights over a kappa grid
    Measure {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kappa_grid: Option<usize>,
    },
    /// Phase-averaged Lyapunov exponents
    Lyapunov {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        energy: EnergyArgs,
        /// Transfer matrix length
        #[arg(long)]
        n: Option<usize>,
        /// Phase samples
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Abel-averaged probabilities P(n; T)
    Transport {
        #[command(flatten)]
        common: Common,
        #[arg(long = "time", short = 'T')]
        t: Option<f64>,
        #[arg(long)]
        n_max: Option<i64>,
        /// time, resolvent or floquet
        #[arg(long)]
        method: Option<String>,
    },
    /// Abel-averaged moments M_p(T)
    Moments {
        #[command(flatten)]
        common: Common,
        #[arg(long = "time", short = 'T')]
        t: Option<f64>,
        /// Comma-separated moment orders
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
        /// summed-entries or single-entry
        #[arg(long)]
        variant: Option<String>,
    },
    /// Run a verification suite
    Verify {
        /// floquet, transport, lower-bound, bandwidth, gordon, gordon-random
        suite: Option<String>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        q_min: Option<usize>,
        #[arg(long)]
        q_max: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Moment lower bound along the checking times of a Liouville frequency
    TheoremDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        max_sites: Option<usize>,
    },
    /// Grid sweep of another command, axes from the config's [sweep] section
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Command run at every point
        #[arg(long)]
        command: Option<String>,
        #[arg(long)]
        theta_grid: Option<usize>,
    },
}

fn parse_enum<T: DeserializeOwned>(what: &str, s: &str) -> Result<T, CliError> {
    serde_json::from_value(json!(s)).map_err(|_| CliError::Usage(format!("invalid {what} `{s}`")))
}

fn apply_common(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => config::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &c.out {
        cfg.out = Some(v.clone());
    }
    if let Some(v) = &c.sampling {
        cfg.sampling.kind = v.clone();
    }
    if let Some(v) = c.lambda {
        cfg.sampling.lambda = v;
    }
    if let Some(v) = &c.freq {
        cfg.freq = Some(v.clone());
        cfg.liouville = None;
    }
    if let Some(v) = &c.liouville {
        cfg.liouville = Some(v.clone());
    }
    if c.depth.is_some() {
        cfg.depth = c.depth;
    }
    if let Some(v) = c.theta {
        cfg.theta = v;
    }
    if c.seed.is_some() {
        cfg.seed = c.seed;
    }
    if let Some(v) = c.threads {
        cfg.threads = v;
    }
    Ok(cfg)
}

fn apply_energy(cfg: &mut RunConfig, e: &EnergyArgs) {
    if !e.energy.is_empty() {
        cfg.energies.values = e.energy.clone();
    }
    if let Some(v) = e.e_min {
        cfg.energies.min = v;
        cfg.energies.values.clear();
    }
    if let Some(v) = e.e_max {
        cfg.energies.max = v;
        cfg.energies.values.clear();
    }
    if let Some(v) = e.points {
        cfg.energies.points = v;
        cfg.energies.values.clear();
    }
}

/// Resolves the command and the merged configuration.
fn resolve(cmd: &Cmd) -> Result<(Command, RunConfig), CliError> {
    Ok(match cmd {
        Cmd::Freq { common } => (Command::Freq, apply_common(common)?),
        Cmd::Bands { common, kappa_grid } | Cmd::Measure { common, kappa_grid } => {
            let mut cfg = apply_common(common)?;
            if let Some(k) = kappa_grid {
                cfg.kappa_grid = *k;
            }
            let c = if matches!(cmd, Cmd::Bands { .. }) { Command::Bands } else { Command::Measure };
            (c, cfg)
        }
        Cmd::Discriminant { common, energy } => {
            let mut cfg = apply_common(common)?;
            apply_energy(&mut cfg, energy);
            (Command::Discriminant, cfg)
        }
        Cmd::Lyapunov { common, energy, n, samples } => {
            let mut cfg = apply_common(common)?;
            apply_energy(&mut cfg, energy);
            if let Some(n) = n {
                cfg.lyapunov.n = *n;
            }
            if let Some(s) = samples {
                cfg.lyapunov.samples = *s;
            }
            (Command::Lyapunov, cfg)
        }
        Cmd::Transport { common, t, n_max, method } => {
            let mut cfg = apply_common(common)?;
            if let Some(t) = t {
                cfg.transport.t = *t;
            }
            if let Some(n) = n_max {
                cfg.transport.n_max = *n;
            }
            if let Some(m) = method {
                cfg.transport.method = parse_enum("method", m)?;
            }
            (Command::Transport, cfg)
        }
        Cmd::Moments { common, t, p, variant } => {
            let mut cfg = apply_common(common)?;
            if let Some(t) = t {
                cfg.moments.t = *t;
            }
            if !p.is_empty() {
                cfg.moments.p = p.clone();
            }
            if let Some(v) = variant {
                cfg.moments.variant = parse_enum("moment variant", v)?;
            }
            (Command::Moments, cfg)
        }
        Cmd::Verify { suite, common, q_min, q_max, trials } => {
            let mut cfg = apply_common(common)?;
            if suite.is_some() {
                cfg.verify.suite = suite.clone();
            }
            let f = &mut cfg.verify.floquet;
            f.q_min = q_min.unwrap_or(f.q_min);
            f.q_max = q_max.unwrap_or(f.q_max);
            if let Some(t) = trials {
                f.trials = *t;
                cfg.verify.gordon.trials = *t;
            }
            (Command::Verify, cfg)
        }
        Cmd::TheoremDemo { common, delta, max_sites } => {
            let mut cfg = apply_common(common)?;
            if let Some(d) = delta {
                cfg.theorem.delta = *d;
            }
            if let Some(m) = max_sites {
                cfg.theorem.max_sites = *m;
            }
            (Command::TheoremDemo, cfg)
        }
        Cmd::Sweep { common, command, theta_grid } => {
            let mut cfg = apply_common(common)?;
            if command.is_some() {
                cfg.sweep.command = command.clone();
            }
            if let Some(n) = theta_grid {
                cfg.sweep.theta_grid = *n;
            }
            (Command::Sweep, cfg)
        }
    })
}

fn write_artifacts(dir: &Path, files: &[(String, String)]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Numerical(format!("writing artifacts to {}: {e}", dir.display()));
    for (name, body) in files {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        std::fs::write(path, body).map_err(io)?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<u8, CliError> {
    let (cmd, cfg) = resolve(&cli.cmd)?;
    #[cfg(feature = "parallel")]
    if cfg.threads > 1 {
        // Only fails if the pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let exec = if cfg.threads == 1 { Execution::Sequential } else { Execution::Parallel };
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    let start = Instant::now();
    let output: Output = match cmd {
        Command::Sweep => sweep::run(&cfg, exec)?,
        c => commands::run(c, &cfg, exec)?,
    };
    let seconds = start.elapsed().as_secs_f64();
    let code = u8::from(output.failures > 0);

    write_artifacts(&out_dir, &output.files)?;
    let manifest = json!({
        "schema_version": MANIFEST_SCHEMA,
        "command": cmd.name(),
        "config": cfg,
        "versions": {
            "qpt": env!("CARGO_PKG_VERSION"),
            "qpt_core": qpt_core::VERSION,
            "parallel_feature": cfg!(feature = "parallel"),
        },
        "timings": { "total_seconds": seconds },
        "artifacts": output.files.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        "summary": output.summary,
        "exit_code": code,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Numerical(e.to_string()))?;
    write_artifacts(&out_dir, &[("manifest.json".into(), text + "\n")])?;
    println!("{}", output.summary);
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("qpt: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Numerical(_) => 1,
            })
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use densopt::commands::{self, CliError, Common, SimulateMode};
use densopt_core::simulate::SimConfig;
use densopt_core::synthesis::SynthesisConfig;
use densopt_core::value_bounds::BoundSide;

/// Rational feedback synthesis and value bounds for polynomial systems.
///
/// Exit codes: 0 success, 1 bad input or config, 2 solver failure,
/// 3 infeasible bound program.
#[derive(Parser)]
#[command(name = "densopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the density program and extract the controller.
    Synthesize {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        degree: u32,
    },
    /// Certify a bound on the value function.
    Bound {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        degree: u32,
        /// upper-on-Vu, lower-on-Vu or lower-on-V.
        #[arg(long, default_value = "upper-on-Vu")]
        side: String,
        #[arg(long)]
        controller: Option<PathBuf>,
    },
    /// Simulate from one state (--x0) or from random states (--mc).
    Simulate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        controller: PathBuf,
        /// Comma separated initial state.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "mc")]
        x0: Option<Vec<f64>>,
        #[arg(long, requires = "bound")]
        mc: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Lower bound file used for the suboptimality estimate.
        #[arg(long)]
        bound: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Write one SOS stage as an SDPA sparse file plus a variable map.
    ExportSdpa {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        degree: u32,
        /// density, upper_vu, lower_vu or lower_v.
        #[arg(long)]
        stage: String,
        #[arg(long)]
        controller: Option<PathBuf>,
    },
    /// Percent gap between an upper bound on V_u and a lower bound.
    Gap {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        degree: Option<u32>,
        #[arg(long)]
        controller: Option<PathBuf>,
        #[arg(long)]
        upper: Option<PathBuf>,
        #[arg(long)]
        lower: Option<PathBuf>,
    },
}

fn common(shared: &Shared) -> Common {
    Common {
        config: shared.config.clone(),
        out: shared.out.clone(),
        args: std::env::args().collect(),
        settings: SynthesisConfig::default(),
    }
}

fn threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DENSOPT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::usage(format!("DENSOPT_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(e.to_string()))
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    threads()?;
    match cli.command {
        Command::Synthesize { shared, degree } => commands::cmd_synthesize(&common(&shared), degree),
        Command::Bound {
            shared,
            degree,
            side,
            controller,
        } => {
            let side = BoundSide::parse(&side).ok_or_else(|| CliError::usage(format!("unknown side {side:?}")))?;
            commands::cmd_bound(&common(&shared), side, degree, controller.as_deref())
        }
        Command::Simulate {
            shared,
            controller,
            x0,
            mc,
            seed,
            bound,
            step,
            t_max,
        } => {
            let sim = SimConfig {
                step,
                t_max,
                seed,
                ..SimConfig::default()
            };
            let mode = match (x0, mc, bound.as_deref()) {
                (Some(x0), None, _) => SimulateMode::Single { x0 },
                (None, Some(n), Some(bound)) => SimulateMode::MonteCarlo { n, bound },
                _ => return Err(CliError::usage("simulate needs --x0 or --mc with --bound")),
            };
            commands::cmd_simulate(&common(&shared), &controller, mode, &sim)
        }
        Command::ExportSdpa {
            shared,
            degree,
            stage,
            controller,
        } => commands::cmd_export_sdpa(&common(&shared), &stage, degree, controller.as_deref()),
        Command::Gap {
            shared,
            degree,
            controller,
            upper,
            lower,
        } => commands::cmd_gap(
            &common(&shared),
            degree,
            controller.as_deref(),
            upper.as_deref(),
            lower.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code as u8)
        }
    }
}

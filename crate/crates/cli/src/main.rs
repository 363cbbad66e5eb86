//! `tswpm`: run Monte Carlo localization experiments from a scenario file.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use tswpm_core::geometry::dop_rating;
use tswpm_core::sim::{
    bound_table, emit_outputs, load_scenario, run_monte_carlo, ChannelMode, RunOptions, Scenario,
};
use tswpm_core::solvers::SolverKind;
use tswpm_core::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "tswpm", version, about = "TDOA and cooperative localization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Channel {
    Awgn,
    Multipath,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo simulation and write CSV/JSON artifacts.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated solver names, e.g. `tswpm,wnls`.
        #[arg(long, value_delimiter = ',')]
        solvers: Option<Vec<String>>,
        #[arg(long, value_enum)]
        channel: Option<Channel>,
        #[arg(long, allow_negative_numbers = true)]
        tx_power: Option<f64>,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print GDOP and position error bounds over a grid of the UE area.
    Bounds {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 10)]
        nx: usize,
        #[arg(long, default_value_t = 5)]
        ny: usize,
    },
    /// Check a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. }
        | Error::Validation { .. }
        | Error::InvalidInput(_)
        | Error::InvalidReference { .. } => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_overrides(
    mut scn: Scenario,
    trials: Option<usize>,
    seed: Option<u64>,
    solvers: Option<Vec<String>>,
    channel: Option<Channel>,
    tx_power: Option<f64>,
) -> Result<Scenario, Error> {
    if let Some(t) = trials {
        scn.trials = t;
    }
    if let Some(s) = seed {
        scn.master_seed = s;
    }
    if let Some(names) = solvers {
        scn.solvers = names
            .iter()
            .map(|n| n.parse::<SolverKind>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(c) = channel {
        scn.channel_mode = match c {
            Channel::Awgn => ChannelMode::Awgn,
            Channel::Multipath => ChannelMode::Multipath,
        };
    }
    if let Some(p) = tx_power {
        scn.link.tx_power_dbm = p;
    }
    scn.validate()?;
    Ok(scn)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn execute(cmd: Command) -> Result<(), Error> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cmd {
        Command::Run {
            scenario,
            out: out_dir,
            trials,
            seed,
            solvers,
            channel,
            tx_power,
            threads,
        } => {
            let scn = apply_overrides(load_scenario(&scenario)?, trials, seed, solvers, channel, tx_power)?;
            info!("running `{}`: {} trials, seed {}", scn.name, scn.trials, scn.master_seed);
            let (records, summary) = run_monte_carlo(&scn, RunOptions { threads })?;
            emit_outputs(&scn, &records, &summary, &out_dir)?;
            writeln!(out, "solver,median_m,p90_m,mean_iterations,failure_rate")?;
            for s in &summary.solvers {
                writeln!(
                    out,
                    "{},{},{},{},{:.4}",
                    s.solver,
                    fmt_opt(s.median_error_m),
                    fmt_opt(s.p90_error_m),
                    fmt_opt(s.mean_iterations),
                    s.failure_rate
                )?;
            }
            if let Some(b) = &summary.bounds {
                writeln!(out, "peb_median_m,{}", fmt_opt(b.peb_median_m))?;
            }
        }
        Command::Bounds { scenario, nx, ny } => {
            let scn = load_scenario(&scenario)?;
            writeln!(out, "x,y,gdop,rating,peb_m")?;
            for r in bound_table(&scn, nx, ny)? {
                let rating = dop_rating(r.gdop).map_or("undefined".to_string(), |d| format!("{d:?}"));
                writeln!(out, "{},{},{},{},{}", r.x, r.y, r.gdop, rating, r.peb_m)?;
            }
        }
        Command::Validate { scenario } => {
            let scn = load_scenario(&scenario)?;
            writeln!(
                out,
                "ok: `{}` with {} anchors, {} UEs, {} trials",
                scn.name,
                scn.anchors.len(),
                scn.n_ues,
                scn.trials
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

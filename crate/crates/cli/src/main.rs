//! `clocksim`: run the multi-ion clock simulation and analyse its logs.
//!
//! Exit status is 0 on success, 1 for bad input (invalid config, unreadable
//! or tampered logs, failed fits, empty data) and 2 when a run is aborted
//! because every clock site stayed empty past the interlock.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AdevArgs, CmdResult, FitRabiArgs, PlotArgs, RunArgs, ShiftArgs};

#[derive(Parser)]
#[command(name = "clocksim", version, about = "Multi-ion optical clock simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a clock run and write its logs.
    Run {
        /// TOML configuration.
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated seconds; defaults to the config's duration.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, env = "CLOCKSIM_OUT_DIR", default_value = "clocksim-out")]
        out_dir: PathBuf,
        /// Seeds to run side by side, as `a..b` or `a,b,c`; each goes to
        /// `<out-dir>/seed-<n>`.
        #[arg(long, conflicts_with = "seed")]
        sweep: Option<String>,
    },
    /// Allan deviation of a frequency log, as CSV with the white-FM fit in a
    /// trailing comment.
    Adev {
        /// `frequency.csv` from a run.
        series: PathBuf,
        /// Comma-separated averaging times in seconds.
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
        /// Use the interleaved difference to estimate one integrator.
        #[arg(long)]
        single_integrator: bool,
        #[arg(long, default_value = "overlapping")]
        estimator: String,
        #[arg(long, default_value_t = 10.0)]
        fit_min: f64,
        #[arg(long, default_value_t = 300.0)]
        fit_max: f64,
        #[arg(long, default_value_t = 10)]
        min_pairs: usize,
        /// Clock frequency in Hz; otherwise read from `--config` or the run's
        /// config copy.
        #[arg(long)]
        nu: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_verify: bool,
    },
    /// Fit the thermal dephasing model to Rabi flop data (`t_s,p_hat,n_trials`).
    FitRabi {
        data: PathBuf,
        #[arg(long, conflicts_with = "species_from")]
        eta: Option<f64>,
        /// Take the Lamb-Dicke parameter from this config's species block.
        #[arg(long)]
        species_from: Option<PathBuf>,
        #[arg(long)]
        no_verify: bool,
    },
    /// First-order frequency shifts grouped by ion presence.
    ShiftReport {
        reports: PathBuf,
        config: PathBuf,
        /// `present-set`, `per-site` or `single-ion`.
        #[arg(long, default_value = "present-set")]
        restriction: String,
        #[arg(long)]
        no_verify: bool,
    },
    /// Write gnuplot tables from a run directory.
    PlotData {
        run_dir: PathBuf,
        /// Defaults to `<run-dir>/plot`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        no_verify: bool,
    },
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Run {
            config,
            seed,
            duration,
            out_dir,
            sweep,
        } => {
            let args = RunArgs {
                config,
                seed,
                duration,
                out_dir,
            };
            match sweep {
                Some(spec) => commands::run_sweep(&args, &commands::parse_seeds(&spec)?),
                None => commands::run_one(&args, None, &args.out_dir),
            }
        }
        Command::Adev {
            series,
            taus,
            single_integrator,
            estimator,
            fit_min,
            fit_max,
            min_pairs,
            nu,
            config,
            out,
            no_verify,
        } => commands::cmd_adev(&AdevArgs {
            series,
            taus,
            single_integrator,
            estimator,
            fit_min,
            fit_max,
            min_pairs,
            nu,
            config,
            out,
            no_verify,
        }),
        Command::FitRabi {
            data,
            eta,
            species_from,
            no_verify,
        } => commands::cmd_fit_rabi(&FitRabiArgs {
            data,
            eta,
            species_from,
            no_verify,
        }),
        Command::ShiftReport {
            reports,
            config,
            restriction,
            no_verify,
        } => commands::cmd_shift_report(&ShiftArgs {
            reports,
            config,
            restriction,
            no_verify,
        }),
        Command::PlotData {
            run_dir,
            out_dir,
            no_verify,
        } => commands::cmd_plot_data(&PlotArgs {
            run_dir,
            out_dir,
            no_verify,
        }),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

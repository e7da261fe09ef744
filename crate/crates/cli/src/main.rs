//! ddsim: simulate and analyze coherent dynamics of dense V_B− spin
//! ensembles in hBN under dynamical decoupling, plus the zero-field ESR
//! charge model.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Profile;
use ddsim_core::error::SimError;

#[derive(Debug)]
pub enum CliError {
    /// Configuration, argument, or input-file problems. Exit code 2.
    Config(String),
    /// Failures while simulating. Exit code 3.
    Simulation(String),
    /// Fit or extraction failures. Exit code 4.
    Fit(String),
}

impl From<SimError> for CliError {
    fn from(err: SimError) -> Self {
        match err {
            SimError::FitFailure(_) => CliError::Fit(err.to_string()),
            _ => CliError::Simulation(err.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Simulation(_) => 3,
            CliError::Fit(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Simulation(m) | CliError::Fit(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ddsim",
    version,
    about = "Dipolar-coupled spin-defect ensembles under dynamical decoupling: \
             decay simulation, density extraction, and zero-field ESR spectra"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file; command-line flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count override.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Simulation scale.
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,

    /// Directory for CSV, report, and manifest artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Also emit SVG plots.
    #[arg(long, global = true)]
    svg: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one disorder-averaged decay curve and fit its T2.
    SimulateDecay,
    /// Run XY-8 and DROID sweeps over a density list and fit T2 vs density.
    DensitySweep,
    /// Estimate a sample's density from measured (T2_xy8, T2_droid).
    ExtractDensity {
        /// T2 summary CSV written by density-sweep.
        #[arg(long)]
        t2_summary: PathBuf,
        /// Measured XY-8 coherence time in ns.
        #[arg(long)]
        t2_xy8_ns: f64,
        /// Measured DROID coherence time in ns.
        #[arg(long)]
        t2_droid_ns: f64,
        /// Lower edge of the density search grid in ppm.
        #[arg(long)]
        grid_low_ppm: Option<f64>,
        /// Upper edge of the density search grid in ppm.
        #[arg(long)]
        grid_high_ppm: Option<f64>,
    },
    /// Synthesize zero-field ESR spectra; with density or d_perp lists,
    /// survey the fitted splitting.
    Esr,
    /// Print a sequence's frame-averaged Hamiltonian decomposed over
    /// two-site spin products.
    AvgHamiltonian {
        /// Sequence file (CSV segments); overrides --builtin.
        #[arg(long)]
        sequence: Option<PathBuf>,
        /// Built-in sequence to analyze.
        #[arg(long, default_value = "droid")]
        builtin: String,
        /// Spins in the reference system.
        #[arg(long, default_value_t = 4)]
        n_spins: usize,
    },
    /// Convert implantation doses (ions per nm^2) to vacancy densities.
    ConvertDose {
        /// Doses in ions per nm^2.
        #[arg(required = true)]
        doses: Vec<f64>,
        #[arg(long, default_value_t = 11.0)]
        vacancies_per_ion: f64,
        #[arg(long, default_value_t = 60.0)]
        depth_nm: f64,
    },
    /// Sample one spin geometry and write its positions as CSV.
    DumpGeometry {
        #[arg(long)]
        density_ppm: Option<f64>,
        #[arg(long)]
        n_spins: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SimulateDecay => commands::simulate_decay(&cli),
        Command::DensitySweep => commands::density_sweep(&cli),
        Command::ExtractDensity {
            t2_summary,
            t2_xy8_ns,
            t2_droid_ns,
            grid_low_ppm,
            grid_high_ppm,
        } => commands::extract_density(
            &cli,
            t2_summary,
            *t2_xy8_ns,
            *t2_droid_ns,
            *grid_low_ppm,
            *grid_high_ppm,
        ),
        Command::Esr => commands::esr(&cli),
        Command::AvgHamiltonian {
            sequence,
            builtin,
            n_spins,
        } => commands::avg_hamiltonian(&cli, sequence.as_deref(), builtin, *n_spins),
        Command::ConvertDose {
            doses,
            vacancies_per_ion,
            depth_nm,
        } => commands::convert_dose(&cli, doses, *vacancies_per_ion, *depth_nm),
        Command::DumpGeometry {
            density_ppm,
            n_spins,
        } => commands::dump_geometry(&cli, *density_ppm, *n_spins),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}

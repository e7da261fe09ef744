//! TOML run configuration: sections per pipeline stage, unknown keys
//! rejected. Precedence is profile defaults, then config file keys, then
//! command-line flags.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ddsim_core::ensemble::EnsembleConfig;
use ddsim_core::esr::{ChargeModel, GroundStateParams};
use ddsim_core::pulse::{PulseMode, SequenceFamily, SweepMode, SweepPlan};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// 8 spins, 200 realizations, dense propagation.
    Desk,
    /// 12 spins, 1000 realizations, Krylov propagation.
    Paper,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub ensemble: EnsembleSection,
    /// Sweep used by simulate-decay.
    pub sweep: Option<SweepPlan>,
    /// Densities surveyed by density-sweep.
    pub densities_ppm: Option<Vec<f64>>,
    pub xy8_sweep: Option<SweepPlan>,
    pub droid_sweep: Option<SweepPlan>,
    pub charge_model: Option<ChargeModel>,
    pub ground_state: Option<GroundStateParams>,
    pub esr: EsrSection,
}

/// Overrides applied on top of the profile's ensemble defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub density_ppm: Option<f64>,
    pub n_spins: Option<usize>,
    pub n_realizations: Option<usize>,
    pub disorder_std_mhz: Option<f64>,
    pub min_separation_nm: Option<f64>,
    pub rabi_mhz: Option<f64>,
    pub ideal_pulses: Option<bool>,
    pub master_seed: Option<u64>,
    pub workers: Option<usize>,
    pub freeze_positions: Option<bool>,
    pub use_dense_propagator: Option<bool>,
    pub krylov_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsrSection {
    pub grid_low_mhz: Option<f64>,
    pub grid_high_mhz: Option<f64>,
    pub grid_step_mhz: Option<f64>,
    /// Densities for the splitting survey; a single entry means one
    /// spectrum.
    pub densities_ppm: Option<Vec<f64>>,
    pub d_perp_values: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Default XY-8 sweep: fixed 15 ns interval, growing pulse count.
pub fn default_xy8_sweep() -> SweepPlan {
    SweepPlan {
        family: SequenceFamily::Xy8,
        mode: SweepMode::FixedIntervalSweepN {
            interval_ns: 15.0,
            pulse_counts: vec![8, 16, 24, 32, 48, 64],
        },
    }
}

/// Default DROID sweep: same interval, pulse counts in whole blocks.
pub fn default_droid_sweep() -> SweepPlan {
    SweepPlan {
        family: SequenceFamily::Droid,
        mode: SweepMode::FixedIntervalSweepN {
            interval_ns: 15.0,
            pulse_counts: vec![6, 12, 24, 36, 48, 60],
        },
    }
}

/// Resolves the effective ensemble configuration: profile defaults, then
/// config keys, then flags.
pub fn build_ensemble(
    section: &EnsembleSection,
    profile: Profile,
    sweep: SweepPlan,
    seed_flag: Option<u64>,
    workers_flag: Option<usize>,
) -> EnsembleConfig {
    let mut config = match profile {
        Profile::Desk => EnsembleConfig::desk(236.0, sweep, 1),
        Profile::Paper => EnsembleConfig::paper(236.0, sweep, 1),
    };
    if let Some(v) = section.density_ppm {
        config.density_ppm = v;
    }
    if let Some(v) = section.n_spins {
        config.n_spins = v;
    }
    if let Some(v) = section.n_realizations {
        config.n_realizations = v;
    }
    if let Some(v) = section.disorder_std_mhz {
        config.disorder_std_mhz = v;
    }
    if let Some(v) = section.min_separation_nm {
        config.min_separation_nm = v;
    }
    if let Some(v) = section.rabi_mhz {
        config.pulse.rabi_mhz = v;
    }
    if section.ideal_pulses == Some(true) {
        config.pulse.mode = PulseMode::Ideal;
    }
    if let Some(v) = section.master_seed {
        config.master_seed = v;
    }
    if let Some(v) = section.workers {
        config.workers = v;
    }
    if let Some(v) = section.freeze_positions {
        config.freeze_positions = v;
    }
    if let Some(v) = section.use_dense_propagator {
        config.use_dense_propagator = v;
    }
    if let Some(v) = section.krylov_tolerance {
        config.krylov_tolerance = v;
    }
    if let Some(seed) = seed_flag {
        config.master_seed = seed;
    }
    if let Some(workers) = workers_flag {
        config.workers = workers;
    }
    config
}

/// Resolves the ESR frequency grid from the config section.
pub fn build_freq_grid(section: &EsrSection) -> Result<Vec<f64>, CliError> {
    let low = section.grid_low_mhz.unwrap_or(2400.0);
    let high = section.grid_high_mhz.unwrap_or(4600.0);
    let step = section.grid_step_mhz.unwrap_or(1.0);
    if !(step > 0.0) || high <= low {
        return Err(CliError::Config(format!(
            "bad ESR grid: low {low}, high {high}, step {step}"
        )));
    }
    let n = ((high - low) / step).round() as usize;
    Ok((0..=n).map(|k| low + step * k as f64).collect())
}

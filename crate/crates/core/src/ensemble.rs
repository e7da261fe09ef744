//! Disorder-averaged ensemble simulation.
//!
//! For each realization a fresh geometry and on-site-field draw is made from
//! a seed derived from (master_seed, realization index, attempt), sequences
//! of the sweep are propagated, and the differential contrast of the central
//! spin is averaged over realizations. Realizations are independent rayon
//! work units; aggregation is a sequential compensated sum in realization
//! order, so results are identical for any worker count.
//!
//! Sweep evaluation exploits nesting: consecutive sweep sequences share a
//! segment prefix (XY-8 up to the Nth pi pulse, DROID up to a block
//! boundary), so the shared prefix is propagated once and each sweep point
//! branches off with its private tail segments and readout. Each sequence's
//! segments are still applied one-for-one in order from the same initial
//! state, so every sweep point's value is bitwise identical to running that
//! sequence alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::evolve::{Method, PropagatorConfig, SequenceRunner, DENSE_DIM_LIMIT};
use crate::pulse::{
    differential_pair, expand_sweep, PulseParams, PulseSequence, Readout, SweepPlan,
};
use crate::system::{
    sample_disorder_from, sample_positions_from, DensitySpec, SpinSystem,
};

/// Everything needed to reproduce one disorder-averaged decay curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub density_ppm: f64,
    pub n_spins: usize,
    pub n_realizations: usize,
    pub disorder_std_mhz: f64,
    pub min_separation_nm: f64,
    pub pulse: PulseParams,
    pub sweep: SweepPlan,
    pub master_seed: u64,
    pub workers: usize,
    /// Sample positions once and redraw only the on-site fields per
    /// realization (variance studies).
    pub freeze_positions: bool,
    pub use_dense_propagator: bool,
    pub krylov_tolerance: f64,
}

impl EnsembleConfig {
    /// Desk-scale profile: 8 spins, 200 realizations, dense propagation.
    pub fn desk(density_ppm: f64, sweep: SweepPlan, master_seed: u64) -> Self {
        EnsembleConfig {
            density_ppm,
            n_spins: 8,
            n_realizations: 200,
            disorder_std_mhz: 80.0,
            min_separation_nm: 0.25,
            pulse: PulseParams::finite(83.0),
            sweep,
            master_seed,
            workers: 4,
            freeze_positions: false,
            use_dense_propagator: true,
            krylov_tolerance: 1e-10,
        }
    }

    /// Full-scale profile: 12 spins, 1000 realizations, Krylov propagation.
    pub fn paper(density_ppm: f64, sweep: SweepPlan, master_seed: u64) -> Self {
        EnsembleConfig {
            n_spins: 12,
            n_realizations: 1000,
            use_dense_propagator: false,
            ..EnsembleConfig::desk(density_ppm, sweep, master_seed)
        }
    }

    pub fn density_spec(&self) -> DensitySpec {
        DensitySpec {
            density_ppm: self.density_ppm,
            n_spins: self.n_spins,
            min_separation_nm: self.min_separation_nm,
            ..Default::default()
        }
    }

    pub fn propagator(&self) -> PropagatorConfig {
        PropagatorConfig {
            method: if self.use_dense_propagator {
                Method::Dense
            } else {
                Method::Krylov
            },
            tolerance: self.krylov_tolerance,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_realizations == 0 {
            return Err(SimError::InvalidArgument(
                "n_realizations must be >= 1".into(),
            ));
        }
        if self.workers == 0 {
            return Err(SimError::InvalidArgument("workers must be >= 1".into()));
        }
        if !(self.density_ppm > 0.0) {
            return Err(SimError::InvalidArgument(format!(
                "density must be positive, got {}",
                self.density_ppm
            )));
        }
        if !(self.pulse.rabi_mhz > 0.0) {
            return Err(SimError::InvalidArgument(format!(
                "rabi frequency must be positive, got {}",
                self.pulse.rabi_mhz
            )));
        }
        if self.disorder_std_mhz < 0.0 {
            return Err(SimError::InvalidArgument(format!(
                "disorder std must be nonnegative, got {}",
                self.disorder_std_mhz
            )));
        }
        if self.n_spins < 2 {
            return Err(SimError::InvalidArgument(
                "ensemble needs at least 2 spins".into(),
            ));
        }
        if self.use_dense_propagator && (1usize << self.n_spins) > DENSE_DIM_LIMIT {
            return Err(SimError::InvalidArgument(format!(
                "dense propagation supports at most {} spins, got {}",
                DENSE_DIM_LIMIT.trailing_zeros(),
                self.n_spins
            )));
        }
        self.density_spec().validate()
    }
}

/// Disorder-averaged contrast versus sequence body time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayCurve {
    pub times_ns: Vec<f64>,
    pub contrast: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_realizations: usize,
    pub label: String,
}

impl DecayCurve {
    pub fn validate(&self) -> Result<()> {
        if self.times_ns.len() != self.contrast.len()
            || self.times_ns.len() != self.stderr.len()
        {
            return Err(SimError::InvalidArgument(
                "decay curve lists have unequal lengths".into(),
            ));
        }
        if self.stderr.iter().any(|s| *s < 0.0) {
            return Err(SimError::InvalidArgument(
                "decay curve stderr must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based per-realization seed: independent of worker scheduling.
pub fn derive_seed(master_seed: u64, realization: u64, attempt: u64) -> u64 {
    let a = mix64(master_seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let b = mix64(a ^ realization);
    mix64(b ^ attempt.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

const FROZEN_POSITION_TAG: u64 = u64::MAX;
const MAX_ATTEMPTS_PER_REALIZATION: u64 = 50;

/// Longest segment prefix shared by every sequence in the slice.
fn common_prefix_len(sequences: &[PulseSequence]) -> usize {
    let first = &sequences[0].segments;
    let mut p = first.len();
    for seq in &sequences[1..] {
        let q = first
            .iter()
            .zip(seq.segments.iter())
            .take_while(|(a, b)| a == b)
            .count();
        p = p.min(q);
    }
    p
}

/// Evaluates every sweep point for one system, sharing nested segment
/// prefixes between consecutive sequences. Returns the raw per-point value:
/// bright minus dark central-spin <Sz> for pulsed readout, twice <Sz> for
/// direct readout.
pub fn run_sweep_for_system(
    runner: &mut SequenceRunner,
    sequences: &[PulseSequence],
) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(sequences.len());
    let mut state = runner.initial_state();
    let mut applied = 0usize;
    for k in 0..sequences.len() {
        let seq = &sequences[k];
        let p = common_prefix_len(&sequences[k..]);
        debug_assert!(applied <= p);
        for segment in &seq.segments[applied..p] {
            runner.apply_segment(segment, &mut state)?;
        }
        applied = p;
        let mut branch = state.clone();
        for segment in &seq.segments[p..] {
            runner.apply_segment(segment, &mut branch)?;
        }
        let value = match &seq.readout {
            Readout::DirectSz => 2.0 * runner.read_out(&branch, &Readout::DirectSz)?,
            Readout::Pulse(_) => {
                let (bright, dark) = differential_pair(seq)?;
                runner.read_out(&branch, &bright.readout)?
                    - runner.read_out(&branch, &dark.readout)?
            }
        };
        values.push(value);
    }
    Ok(values)
}

struct RealizationResult {
    values: Vec<f64>,
    resamples: u64,
}

fn run_realization(
    config: &EnsembleConfig,
    sequences: &[PulseSequence],
    frozen_positions: Option<&Vec<[f64; 3]>>,
    realization: u64,
) -> Result<RealizationResult> {
    let spec = config.density_spec();
    let mut last_error = None;
    for attempt in 0..MAX_ATTEMPTS_PER_REALIZATION {
        let seed = derive_seed(config.master_seed, realization, attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let system = match frozen_positions {
            Some(positions) => {
                let disorder =
                    sample_disorder_from(config.n_spins, config.disorder_std_mhz, &mut rng);
                SpinSystem::from_parts(positions.clone(), disorder)
            }
            None => sample_positions_from(&spec, &mut rng).and_then(|positions| {
                let disorder =
                    sample_disorder_from(config.n_spins, config.disorder_std_mhz, &mut rng);
                SpinSystem::from_parts(positions, disorder)
            }),
        };
        let outcome = system.and_then(|system| {
            let mut runner = SequenceRunner::new(&system, config.propagator())?;
            run_sweep_for_system(&mut runner, sequences)
        });
        match outcome {
            Ok(values) => {
                return Ok(RealizationResult {
                    values,
                    resamples: attempt,
                })
            }
            Err(err @ (SimError::InfeasibleGeometry(_) | SimError::Convergence(_))) => {
                last_error = Some(err);
            }
            Err(err) => return Err(err),
        }
    }
    Err(SimError::Ensemble(format!(
        "realization {realization} failed {MAX_ATTEMPTS_PER_REALIZATION} times; last error: {}",
        last_error.expect("at least one attempt")
    )))
}

/// Runs the configured sweep over disorder realizations and returns the
/// normalized mean contrast curve.
pub fn run_ensemble(config: &EnsembleConfig) -> Result<DecayCurve> {
    config.validate()?;
    let sequences = expand_sweep(&config.sweep, &config.pulse)?;
    if sequences.is_empty() {
        return Err(SimError::InvalidArgument(
            "sweep expands to no sequences".into(),
        ));
    }
    let times_ns: Vec<f64> = sequences.iter().map(|s| s.body_duration_ns()).collect();
    let frozen_positions = if config.freeze_positions {
        let spec = config.density_spec();
        let mut found = None;
        for attempt in 0.. {
            if attempt >= MAX_ATTEMPTS_PER_REALIZATION {
                return Err(SimError::Ensemble(
                    "could not sample a frozen geometry".into(),
                ));
            }
            let seed = derive_seed(config.master_seed, FROZEN_POSITION_TAG, attempt);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if let Ok(positions) = sample_positions_from(&spec, &mut rng) {
                found = Some(positions);
                break;
            }
        }
        found
    } else {
        None
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| SimError::Ensemble(format!("worker pool: {e}")))?;
    let results: Vec<Result<RealizationResult>> = pool.install(|| {
        (0..config.n_realizations as u64)
            .into_par_iter()
            .map(|r| run_realization(config, &sequences, frozen_positions.as_ref(), r))
            .collect()
    });

    let mut per_realization: Vec<Vec<f64>> = Vec::with_capacity(config.n_realizations);
    let mut total_resamples = 0u64;
    for result in results {
        let realization = result?;
        total_resamples += realization.resamples;
        per_realization.push(realization.values);
    }
    let resample_rate = total_resamples as f64 / config.n_realizations as f64;
    if resample_rate > 0.01 {
        return Err(SimError::Ensemble(format!(
            "resample rate {:.2}% exceeds 1% ({} resamples over {} realizations)",
            resample_rate * 100.0,
            total_resamples,
            config.n_realizations
        )));
    }

    let n_points = times_ns.len();
    let n = config.n_realizations as f64;
    let mut means = vec![0.0f64; n_points];
    for (t, mean) in means.iter_mut().enumerate() {
        let mut sum = 0.0f64;
        let mut compensation = 0.0f64;
        for values in &per_realization {
            let y = values[t] - compensation;
            let s = sum + y;
            compensation = (s - sum) - y;
            sum = s;
        }
        *mean = sum / n;
    }
    let mut stderrs = vec![0.0f64; n_points];
    if config.n_realizations > 1 {
        for (t, se) in stderrs.iter_mut().enumerate() {
            let mut sum = 0.0f64;
            let mut compensation = 0.0f64;
            for values in &per_realization {
                let d = values[t] - means[t];
                let y = d * d - compensation;
                let s = sum + y;
                compensation = (s - sum) - y;
                sum = s;
            }
            *se = (sum / (n * (n - 1.0))).sqrt();
        }
    }

    let norm = means[0];
    if norm.abs() < 1e-9 {
        return Err(SimError::Ensemble(format!(
            "first-point contrast {norm:.3e} is too small to normalize against"
        )));
    }
    let contrast: Vec<f64> = means.iter().map(|m| m / norm).collect();
    let stderr: Vec<f64> = stderrs.iter().map(|s| s / norm.abs()).collect();
    Ok(DecayCurve {
        times_ns,
        contrast,
        stderr,
        n_realizations: config.n_realizations,
        label: format!("{}_{}ppm", config.sweep.family.name(), config.density_ppm),
    })
}

/// Decay curve plus its exponential fit (or the reason fitting failed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyResult {
    pub curve: DecayCurve,
    pub t2_ns: Option<f64>,
    pub fit_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityPoint {
    pub density_ppm: f64,
    pub xy8: FamilyResult,
    pub droid: FamilyResult,
}

fn run_family(config: &EnsembleConfig, density_ppm: f64, sweep: &SweepPlan) -> Result<FamilyResult> {
    let family_config = EnsembleConfig {
        density_ppm,
        sweep: sweep.clone(),
        ..config.clone()
    };
    let curve = run_ensemble(&family_config)?;
    let (t2_ns, fit_error) = match crate::analysis::fit_exponential(&curve) {
        Ok(fit) => (Some(fit.t2_ns), None),
        Err(err) => (None, Some(err.to_string())),
    };
    Ok(FamilyResult {
        curve,
        t2_ns,
        fit_error,
    })
}

/// Runs the XY-8 and DROID sweeps at each density (sharing the same
/// realization seeds, so both families see identical geometries) and fits
/// each curve to an exponential. Fit failures are flagged per family, not
/// fatal.
pub fn run_density_sweep(
    densities_ppm: &[f64],
    template: &EnsembleConfig,
    xy8_sweep: &SweepPlan,
    droid_sweep: &SweepPlan,
) -> Result<Vec<DensityPoint>> {
    if densities_ppm.is_empty() {
        return Err(SimError::InvalidArgument("no densities given".into()));
    }
    if densities_ppm.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SimError::InvalidArgument(
            "densities must be strictly increasing".into(),
        ));
    }
    densities_ppm
        .iter()
        .map(|&density| {
            Ok(DensityPoint {
                density_ppm: density,
                xy8: run_family(template, density, xy8_sweep)?,
                droid: run_family(template, density, droid_sweep)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::{build_xy8, SequenceFamily, SweepMode};
    use crate::system::DensitySpec;
    use approx::assert_abs_diff_eq;

    fn ramsey_sweep(times: Vec<f64>) -> SweepPlan {
        SweepPlan {
            family: SequenceFamily::Ramsey,
            mode: SweepMode::SweepDuration { times_ns: times },
        }
    }

    fn small_config(sweep: SweepPlan) -> EnsembleConfig {
        EnsembleConfig {
            n_spins: 3,
            n_realizations: 8,
            workers: 2,
            ..EnsembleConfig::desk(236.0, sweep, 11)
        }
    }

    #[test]
    fn seed_derivation_separates_realizations_and_attempts() {
        let a = derive_seed(1, 0, 0);
        let b = derive_seed(1, 1, 0);
        let c = derive_seed(1, 0, 1);
        let d = derive_seed(2, 0, 0);
        assert!(a != b && a != c && a != d && b != c);
        assert_eq!(a, derive_seed(1, 0, 0));
    }

    #[test]
    fn isolated_spins_without_disorder_keep_full_contrast() {
        let mut config = small_config(ramsey_sweep(vec![0.0, 40.0, 160.0]));
        config.density_ppm = 1e-3;
        config.disorder_std_mhz = 0.0;
        config.pulse = PulseParams::ideal();
        config.n_realizations = 1;
        let curve = run_ensemble(&config).unwrap();
        for c in &curve.contrast {
            assert_abs_diff_eq!(*c, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn first_point_is_normalized_to_one() {
        let config = small_config(ramsey_sweep(vec![0.0, 10.0, 30.0, 90.0]));
        let curve = run_ensemble(&config).unwrap();
        assert_eq!(curve.contrast[0], 1.0);
        assert_eq!(curve.times_ns.len(), 4);
        curve.validate().unwrap();
    }

    #[test]
    fn result_is_identical_for_any_worker_count() {
        let base = small_config(ramsey_sweep(vec![0.0, 25.0, 75.0]));
        let mut one = base.clone();
        one.workers = 1;
        let mut three = base.clone();
        three.workers = 3;
        let a = run_ensemble(&one).unwrap();
        let b = run_ensemble(&three).unwrap();
        for (x, y) in a.contrast.iter().zip(b.contrast.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in a.stderr.iter().zip(b.stderr.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn sweep_prefix_evaluation_matches_independent_runs() {
        let spec = DensitySpec::new(236.0, 4);
        let system = SpinSystem::sample(&spec, 80.0, 21).unwrap();
        let params = PulseParams::finite(83.0);
        let sequences: Vec<PulseSequence> = [8usize, 16, 24]
            .iter()
            .map(|&n| build_xy8(4.0, n, &params).unwrap())
            .collect();
        let mut runner =
            SequenceRunner::new(&system, PropagatorConfig::dense()).unwrap();
        let shared = run_sweep_for_system(&mut runner, &sequences).unwrap();
        for (seq, shared_value) in sequences.iter().zip(shared.iter()) {
            let (bright, dark) = differential_pair(seq).unwrap();
            let mut naive =
                SequenceRunner::new(&system, PropagatorConfig::dense()).unwrap();
            let value = naive.run(&bright).unwrap() - naive.run(&dark).unwrap();
            assert_eq!(
                value.to_bits(),
                shared_value.to_bits(),
                "sequence {}",
                seq.label
            );
        }
    }

    #[test]
    fn droid_refocuses_static_disorder_exactly_with_ideal_pulses() {
        // Same-axis toggling frames are adjacent with opposite sign, so the
        // disorder phase of each window pair cancels for any h, not just to
        // first order. The sigma here puts sigma*tau far past the reach of
        // a perturbative average.
        let sweep = SweepPlan {
            family: SequenceFamily::Droid,
            mode: SweepMode::FixedIntervalSweepN {
                interval_ns: 15.0,
                pulse_counts: vec![6, 12, 18],
            },
        };
        let mut config = small_config(sweep);
        config.n_spins = 2;
        config.density_ppm = 1e-6;
        config.disorder_std_mhz = 240.0;
        config.pulse = PulseParams::ideal();
        config.n_realizations = 20;
        let curve = run_ensemble(&config).unwrap();
        for (c, s) in curve.contrast.iter().zip(curve.stderr.iter()) {
            assert_abs_diff_eq!(*c, 1.0, epsilon = 1e-6);
            assert!(*s < 1e-6, "stderr {s} shows disorder leaking through");
        }
    }

    #[test]
    fn droid_t2_exceeds_xy8_t2_at_236_ppm_desk_scale() {
        let xy8_sweep = SweepPlan {
            family: SequenceFamily::Xy8,
            mode: SweepMode::FixedIntervalSweepN {
                interval_ns: 15.0,
                pulse_counts: vec![8, 16, 24, 32, 48, 64],
            },
        };
        let droid_sweep = SweepPlan {
            family: SequenceFamily::Droid,
            mode: SweepMode::FixedIntervalSweepN {
                interval_ns: 15.0,
                pulse_counts: vec![6, 12, 24, 36, 48, 60],
            },
        };
        let points =
            run_density_sweep(&[236.0], &EnsembleConfig::desk(236.0, xy8_sweep.clone(), 1), &xy8_sweep, &droid_sweep)
                .unwrap();
        let xy8_t2 = points[0].xy8.t2_ns.expect("xy8 fit");
        let droid_t2 = points[0].droid.t2_ns.expect("droid fit");
        assert!(
            droid_t2 > xy8_t2,
            "droid T2 {droid_t2:.1} ns should exceed xy8 T2 {xy8_t2:.1} ns"
        );
    }

    #[test]
    fn ramsey_contrast_decays_at_disorder_rate() {
        // With ideal pulses the 80 MHz on-site disorder dephases the central
        // spin as exp(-(2 pi 1e-3 sigma t)^2 / 2), dead well before 40 ns.
        // Finite pulses at a comparable Rabi frequency leak a non-decaying
        // component, so this probes the ideal-pulse limit.
        let config = EnsembleConfig {
            n_realizations: 150,
            pulse: PulseParams::ideal(),
            ..small_config(ramsey_sweep(vec![0.0, 1.0, 2.0, 4.0, 40.0]))
        };
        let curve = run_ensemble(&config).unwrap();
        let sigma = config.disorder_std_mhz;
        let gaussian = |t: f64| {
            let phi = crate::RADIANS_PER_MHZ_NS * sigma * t;
            (-phi * phi / 2.0).exp()
        };
        assert!((curve.contrast[1] - gaussian(1.0)).abs() < 0.12);
        assert!((curve.contrast[2] - gaussian(2.0)).abs() < 0.12);
        assert!(curve.contrast[4].abs() < 0.15, "C(40 ns) = {}", curve.contrast[4]);
        for c in &curve.contrast {
            assert!(c.abs() <= 1.05);
        }
    }

    #[test]
    fn stderr_shrinks_with_realization_count() {
        let base = ramsey_sweep(vec![0.0, 8.0, 16.0]);
        let small = EnsembleConfig {
            n_realizations: 100,
            ..small_config(base.clone())
        };
        let large = EnsembleConfig {
            n_realizations: 400,
            ..small_config(base)
        };
        let se_small = run_ensemble(&small).unwrap().stderr[2];
        let se_large = run_ensemble(&large).unwrap().stderr[2];
        let ratio = se_small / se_large;
        assert!(
            (ratio - 2.0).abs() / 2.0 < 0.2,
            "stderr ratio {ratio} not within 20% of 2"
        );
    }

    #[test]
    fn infeasible_geometry_everywhere_is_a_hard_error() {
        let mut config = small_config(ramsey_sweep(vec![0.0, 10.0]));
        config.density_ppm = 5e5;
        config.n_spins = 8;
        config.min_separation_nm = 0.9;
        config.n_realizations = 4;
        assert!(run_ensemble(&config).is_err());
    }

    #[test]
    fn frozen_positions_reuse_one_geometry() {
        let mut config = small_config(ramsey_sweep(vec![0.0, 15.0]));
        config.freeze_positions = true;
        config.n_realizations = 5;
        let curve = run_ensemble(&config).unwrap();
        curve.validate().unwrap();
        assert_eq!(curve.contrast[0], 1.0);
    }

    #[test]
    fn density_sweep_requires_increasing_densities() {
        let template = small_config(ramsey_sweep(vec![0.0, 10.0]));
        let xy8 = SweepPlan {
            family: SequenceFamily::Xy8,
            mode: SweepMode::FixedIntervalSweepN {
                interval_ns: 4.0,
                pulse_counts: vec![8, 16],
            },
        };
        let droid = SweepPlan {
            family: SequenceFamily::Droid,
            mode: SweepMode::FixedIntervalSweepN {
                interval_ns: 4.0,
                pulse_counts: vec![6, 12],
            },
        };
        assert!(run_density_sweep(&[200.0, 100.0], &template, &xy8, &droid).is_err());
        assert!(run_density_sweep(&[], &template, &xy8, &droid).is_err());
    }

    #[test]
    fn density_sweep_produces_one_row_per_density() {
        let template = EnsembleConfig {
            n_realizations: 6,
            ..small_config(ramsey_sweep(vec![0.0]))
        };
        let xy8 = SweepPlan {
            family: SequenceFamily::Xy8,
            mode: SweepMode::FixedIntervalSweepN {
                interval_ns: 4.0,
                pulse_counts: vec![8, 16, 24, 32],
            },
        };
        let droid = SweepPlan {
            family: SequenceFamily::Droid,
            mode: SweepMode::FixedIntervalSweepN {
                interval_ns: 4.0,
                pulse_counts: vec![6, 12, 18, 30],
            },
        };
        let rows = run_density_sweep(&[123.0, 236.0], &template, &xy8, &droid).unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert_eq!(row.xy8.curve.times_ns.len(), 4);
            assert_eq!(row.droid.curve.times_ns.len(), 4);
            assert!(row.xy8.t2_ns.is_some() || row.xy8.fit_error.is_some());
        }
    }
}

//! Zero-field ESR of the V_B− ground state under local charge noise.
//!
//! Charged defects sampled around a probe V_B− produce a transverse electric
//! field that couples to the spin-1 ground state and splits the |±1⟩
//! manifold. The spectrum is assembled by averaging Gaussian-broadened
//! |0⟩ → |±⟩ lines over random charge configurations and the 27 classical
//! nitrogen nuclear-spin configurations.
//!
//! Conventions: positions in nm, fields in V/cm, energies in MHz. The probe
//! defect sits at the origin. Only the in-plane field components couple
//! (the longitudinal susceptibility vanishes); screening defaults to
//! vacuum permittivity with any material screening absorbed into the
//! effective transverse coupling.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{require_hermitian, spin_one_ops, OperatorMatrix};
use crate::analysis::{fit_two_lorentzians, TwoLorentzianFit};
use crate::ensemble::derive_seed;
use crate::error::{Result, SimError};
use crate::HBN_ATOMS_PER_NM3;

/// Coulomb constant e/(4 pi eps0) expressed so that a unit charge at r nm
/// produces K / r^2 in V/cm.
pub const COULOMB_V_CM_NM2: f64 = 1.43996e7;

/// Microscopic charge environment of one probed V_B− center.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChargeModel {
    /// Negatively charged boron-vacancy density in ppm.
    pub rho_vbm_ppm: f64,
    /// Charged defect density relative to rho_vbm (electrons plus donors).
    pub charge_density_factor: f64,
    /// Transverse electric susceptibility in Hz/(V/cm).
    pub d_perp_hz_per_v_cm: f64,
    /// Number of closest charges kept in the Coulomb sum.
    pub n_nearest: usize,
    pub relative_permittivity: f64,
    /// Gaussian linewidth applied to every resonance, in MHz.
    pub broadening_std_mhz: f64,
    pub n_charge_configs: usize,
    /// Minimum charge distance from the probe defect, in nm.
    pub exclusion_radius_nm: f64,
}

impl Default for ChargeModel {
    fn default() -> Self {
        ChargeModel {
            rho_vbm_ppm: 123.0,
            charge_density_factor: 2.0,
            d_perp_hz_per_v_cm: 40.0,
            n_nearest: 10,
            relative_permittivity: 1.0,
            broadening_std_mhz: 25.0,
            n_charge_configs: 1000,
            exclusion_radius_nm: 1.0,
        }
    }
}

impl ChargeModel {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("rho_vbm_ppm", self.rho_vbm_ppm),
            ("charge_density_factor", self.charge_density_factor),
            ("relative_permittivity", self.relative_permittivity),
            ("broadening_std_mhz", self.broadening_std_mhz),
            ("exclusion_radius_nm", self.exclusion_radius_nm),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(SimError::InvalidArgument(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if self.d_perp_hz_per_v_cm < 0.0 || !self.d_perp_hz_per_v_cm.is_finite() {
            return Err(SimError::InvalidArgument(format!(
                "d_perp must be nonnegative, got {}",
                self.d_perp_hz_per_v_cm
            )));
        }
        if self.n_nearest < 1 {
            return Err(SimError::InvalidArgument(
                "n_nearest must be at least 1".into(),
            ));
        }
        if self.n_charge_configs < 1 {
            return Err(SimError::InvalidArgument(
                "n_charge_configs must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Charged defect density in nm^-3.
    pub fn charge_density_nm3(&self) -> f64 {
        self.charge_density_factor * self.rho_vbm_ppm * 1e-6 * HBN_ATOMS_PER_NM3
    }

    /// Charges sampled per configuration: enough to fill space well beyond
    /// the nearest-neighbor shell that enters the field sum.
    pub fn n_charges(&self) -> usize {
        (10 * self.n_nearest).max(100)
    }

    /// Side of the cubic sampling box, in nm.
    pub fn box_side_nm(&self) -> f64 {
        (self.n_charges() as f64 / self.charge_density_nm3()).cbrt()
    }
}

/// Spin-1 ground-state parameters of V_B−.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundStateParams {
    /// Zero-field splitting in MHz.
    pub d_gs_mhz: f64,
    /// Hyperfine coupling to each of the three nearest nitrogen nuclei, MHz.
    pub a_zz_mhz: f64,
}

impl Default for GroundStateParams {
    fn default() -> Self {
        GroundStateParams {
            d_gs_mhz: 3480.0,
            a_zz_mhz: 47.0,
        }
    }
}

impl GroundStateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_gs_mhz > 0.0) || !self.d_gs_mhz.is_finite() {
            return Err(SimError::InvalidArgument(format!(
                "d_gs must be positive, got {}",
                self.d_gs_mhz
            )));
        }
        if self.a_zz_mhz < 0.0 || !self.a_zz_mhz.is_finite() {
            return Err(SimError::InvalidArgument(format!(
                "a_zz must be nonnegative, got {}",
                self.a_zz_mhz
            )));
        }
        if self.d_gs_mhz <= 3.0 * self.a_zz_mhz {
            return Err(SimError::InvalidArgument(format!(
                "d_gs = {} MHz must exceed the full hyperfine extent 3*a_zz = {} MHz",
                self.d_gs_mhz,
                3.0 * self.a_zz_mhz
            )));
        }
        Ok(())
    }
}

/// A point charge near the probe defect.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Charge {
    pub position_nm: [f64; 3],
    /// +1 for donors, -1 for acceptors.
    pub sign: f64,
}

/// Configuration-averaged zero-field spectrum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EsrSpectrum {
    pub freqs_mhz: Vec<f64>,
    /// Normalized dip depth: 0 at the baseline, 1 at the deepest resonance.
    pub intensity: Vec<f64>,
    /// Unnormalized mean line profile; averaging subsets of configurations
    /// in this representation is exactly linear.
    pub raw_profile: Vec<f64>,
    pub model: ChargeModel,
    pub params: GroundStateParams,
}

impl EsrSpectrum {
    pub fn validate(&self) -> Result<()> {
        if self.freqs_mhz.len() != self.intensity.len()
            || self.freqs_mhz.len() != self.raw_profile.len()
        {
            return Err(SimError::InvalidArgument(
                "spectrum columns must have equal lengths".into(),
            ));
        }
        if self
            .intensity
            .iter()
            .chain(self.raw_profile.iter())
            .any(|v| !v.is_finite())
        {
            return Err(SimError::InvalidArgument(
                "spectrum contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    /// Double-Lorentzian fit of the dip contrast 1 - intensity.
    pub fn fit_splitting(&self) -> Result<TwoLorentzianFit> {
        let contrast: Vec<f64> = self.intensity.iter().map(|p| 1.0 - p).collect();
        fit_two_lorentzians(&self.freqs_mhz, &contrast)
    }
}

/// Samples one charge configuration: `n_charges` point charges uniformly in
/// a cube centered on the probe, signs alternating +/-, none closer than the
/// exclusion radius. Positions are drawn as unit-cube coordinates and scaled
/// by the box side, so one seed yields geometrically similar configurations
/// across densities.
pub fn sample_charges(model: &ChargeModel, seed: u64) -> Result<Vec<Charge>> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = model.box_side_nm();
    let exclusion = model.exclusion_radius_nm;
    if side / 2.0 <= exclusion {
        return Err(SimError::InvalidArgument(format!(
            "sampling box side {side:.3} nm cannot fit outside the {exclusion} nm exclusion zone"
        )));
    }
    let n = model.n_charges();
    let mut charges = Vec::with_capacity(n);
    for k in 0..n {
        let mut position = [0.0; 3];
        let mut attempts = 0usize;
        loop {
            for coord in &mut position {
                *coord = (rng.random_range(0.0..1.0) - 0.5) * side;
            }
            let r2: f64 = position.iter().map(|c| c * c).sum();
            if r2 >= exclusion * exclusion {
                break;
            }
            attempts += 1;
            if attempts > 10_000 {
                return Err(SimError::InfeasibleGeometry(format!(
                    "could not place a charge outside the {exclusion} nm exclusion zone"
                )));
            }
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        charges.push(Charge {
            position_nm: position,
            sign,
        });
    }
    Ok(charges)
}

/// In-plane electric field at the probe from the `n_nearest` closest
/// charges, in V/cm. The out-of-plane component is computed and discarded:
/// the longitudinal susceptibility vanishes.
pub fn transverse_field(charges: &[Charge], model: &ChargeModel) -> Result<(f64, f64)> {
    model.validate()?;
    if charges.len() < model.n_nearest {
        return Err(SimError::InvalidArgument(format!(
            "{} charges provided but the field sum needs {}",
            charges.len(),
            model.n_nearest
        )));
    }
    let mut order: Vec<usize> = (0..charges.len()).collect();
    let r2 = |c: &Charge| -> f64 { c.position_nm.iter().map(|x| x * x).sum() };
    order.sort_by(|&a, &b| r2(&charges[a]).total_cmp(&r2(&charges[b])));
    let mut field = [0.0f64; 3];
    for &idx in order.iter().take(model.n_nearest) {
        let charge = &charges[idx];
        let r = r2(charge).sqrt();
        if r < model.exclusion_radius_nm {
            return Err(SimError::InvalidArgument(format!(
                "charge at {r:.3} nm lies inside the {} nm exclusion radius",
                model.exclusion_radius_nm
            )));
        }
        let magnitude =
            charge.sign * COULOMB_V_CM_NM2 / (model.relative_permittivity * r * r);
        for axis in 0..3 {
            field[axis] += magnitude * charge.position_nm[axis] / r;
        }
    }
    let (ex, ey, _ez_discarded) = (field[0], field[1], field[2]);
    Ok((ex, ey))
}

/// All 27 classical configurations of the three nitrogen nuclear spins.
pub fn nuclear_triples() -> Vec<[i8; 3]> {
    let mut triples = Vec::with_capacity(27);
    for a in [-1i8, 0, 1] {
        for b in [-1i8, 0, 1] {
            for c in [-1i8, 0, 1] {
                triples.push([a, b, c]);
            }
        }
    }
    triples
}

/// Spin-1 ground-state Hamiltonian with the nuclear spins entering as a
/// classical longitudinal field:
/// D Sz^2 + Pi_x (Sy^2 - Sx^2) + Pi_y (SxSy + SySx) + (sum m_i) A_zz Sz.
pub fn ground_state_hamiltonian(
    params: &GroundStateParams,
    pi_x_mhz: f64,
    pi_y_mhz: f64,
    nuclear_m: [i8; 3],
) -> Result<OperatorMatrix> {
    params.validate()?;
    if nuclear_m.iter().any(|m| !(-1..=1).contains(&i32::from(*m))) {
        return Err(SimError::InvalidArgument(format!(
            "nuclear projections must lie in {{-1, 0, +1}}, got {nuclear_m:?}"
        )));
    }
    let ops = spin_one_ops();
    let sigma_m = f64::from(nuclear_m.iter().map(|m| i32::from(*m)).sum::<i32>());
    let mut h = &ops.sz * &ops.sz * Complex64::new(params.d_gs_mhz, 0.0);
    h += (&ops.sy * &ops.sy - &ops.sx * &ops.sx) * Complex64::new(pi_x_mhz, 0.0);
    h += (&ops.sx * &ops.sy + &ops.sy * &ops.sx) * Complex64::new(pi_y_mhz, 0.0);
    h += &ops.sz * Complex64::new(sigma_m * params.a_zz_mhz, 0.0);
    Ok(h)
}

/// |0> -> |-> and |0> -> |+> transition frequencies in MHz, from
/// diagonalization.
pub fn transition_frequencies(
    params: &GroundStateParams,
    pi_x_mhz: f64,
    pi_y_mhz: f64,
    nuclear_m: [i8; 3],
) -> Result<(f64, f64)> {
    let h = ground_state_hamiltonian(params, pi_x_mhz, pi_y_mhz, nuclear_m)?;
    require_hermitian(&h, 1e-9)?;
    let mut eigenvalues: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    Ok((eigenvalues[1] - eigenvalues[0], eigenvalues[2] - eigenvalues[0]))
}

fn validate_grid(params: &GroundStateParams, model: &ChargeModel, grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(SimError::InvalidArgument(
            "frequency grid needs at least 2 points".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SimError::InvalidArgument(
            "frequency grid must be strictly increasing".into(),
        ));
    }
    let band_low = params.d_gs_mhz - 3.0 * params.a_zz_mhz - model.broadening_std_mhz;
    let band_high = params.d_gs_mhz + 3.0 * params.a_zz_mhz + model.broadening_std_mhz;
    if grid[0] > band_low || grid[grid.len() - 1] < band_high {
        return Err(SimError::InvalidArgument(format!(
            "grid [{}, {}] does not span the transition band [{band_low}, {band_high}]",
            grid[0],
            grid[grid.len() - 1]
        )));
    }
    Ok(())
}

/// Default synthesis grid: 2400 to 4600 MHz at 1 MHz spacing.
pub fn default_freq_grid() -> Vec<f64> {
    (0..=2200).map(|k| 2400.0 + k as f64).collect()
}

fn accumulate_line(profile: &mut [f64], grid: &[f64], center: f64, sigma: f64) {
    let cutoff = 8.0 * sigma;
    let lo = grid.partition_point(|f| *f < center - cutoff);
    let hi = grid.partition_point(|f| *f <= center + cutoff);
    for i in lo..hi {
        let d = grid[i] - center;
        profile[i] += (-d * d / (2.0 * sigma * sigma)).exp();
    }
}

/// Mean line profile over charge configurations `config_range`, each
/// configuration seeded by `derive_seed(seed, config_index, 0)`. The result
/// is the plain average of per-configuration profiles, so disjoint ranges
/// combine linearly.
pub fn spectrum_profile_range(
    model: &ChargeModel,
    params: &GroundStateParams,
    freq_grid_mhz: &[f64],
    seed: u64,
    config_range: std::ops::Range<usize>,
    workers: usize,
) -> Result<Vec<f64>> {
    model.validate()?;
    params.validate()?;
    validate_grid(params, model, freq_grid_mhz)?;
    if config_range.is_empty() {
        return Err(SimError::InvalidArgument(
            "configuration range is empty".into(),
        ));
    }
    if workers < 1 {
        return Err(SimError::InvalidArgument(
            "workers must be at least 1".into(),
        ));
    }
    let triples = nuclear_triples();
    let sigma = model.broadening_std_mhz;
    let one_config = |config: usize| -> Result<Vec<f64>> {
        let charges = sample_charges(model, derive_seed(seed, config as u64, 0))?;
        let (ex, ey) = transverse_field(&charges, model)?;
        let pi_x = model.d_perp_hz_per_v_cm * ex * 1e-6;
        let pi_y = model.d_perp_hz_per_v_cm * ey * 1e-6;
        let mut profile = vec![0.0; freq_grid_mhz.len()];
        for triple in &triples {
            let (f_minus, f_plus) = transition_frequencies(params, pi_x, pi_y, *triple)?;
            accumulate_line(&mut profile, freq_grid_mhz, f_minus, sigma);
            accumulate_line(&mut profile, freq_grid_mhz, f_plus, sigma);
        }
        Ok(profile)
    };
    let configs: Vec<usize> = config_range.clone().collect();
    let profiles: Vec<Vec<f64>> = if workers == 1 {
        configs.iter().map(|&c| one_config(c)).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| SimError::Ensemble(format!("worker pool: {e}")))?;
        pool.install(|| {
            configs
                .par_iter()
                .map(|&c| one_config(c))
                .collect::<Result<Vec<_>>>()
        })?
    };
    let lines_per_config = (2 * triples.len()) as f64;
    let mut mean = vec![0.0; freq_grid_mhz.len()];
    for profile in &profiles {
        for (accum, value) in mean.iter_mut().zip(profile.iter()) {
            *accum += value / lines_per_config;
        }
    }
    let n = configs.len() as f64;
    for value in &mut mean {
        *value /= n;
    }
    Ok(mean)
}

/// Synthesizes the configuration-averaged zero-field spectrum: per charge
/// configuration, each of the 27 equally weighted nuclear configurations
/// emits its two |0> -> |+-> lines with equal weight, Gaussian-broadened;
/// the average profile is normalized to unit peak dip depth.
pub fn simulate_spectrum(
    model: &ChargeModel,
    params: &GroundStateParams,
    freq_grid_mhz: &[f64],
    seed: u64,
    workers: usize,
) -> Result<EsrSpectrum> {
    let raw_profile = spectrum_profile_range(
        model,
        params,
        freq_grid_mhz,
        seed,
        0..model.n_charge_configs,
        workers,
    )?;
    let peak = raw_profile.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Err(SimError::InvalidArgument(
            "no spectral weight landed on the frequency grid".into(),
        ));
    }
    let intensity: Vec<f64> = raw_profile.iter().map(|v| v / peak).collect();
    Ok(EsrSpectrum {
        freqs_mhz: freq_grid_mhz.to_vec(),
        intensity,
        raw_profile,
        model: model.clone(),
        params: params.clone(),
    })
}

/// One cell of the splitting survey.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplittingCell {
    pub density_ppm: f64,
    pub d_perp_hz_per_v_cm: f64,
    pub splitting_mhz: Option<f64>,
    pub single_peak: bool,
    pub fit_error: Option<String>,
}

/// Fitted splitting as a function of density and transverse susceptibility.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplittingTable {
    pub densities_ppm: Vec<f64>,
    pub d_perp_values: Vec<f64>,
    /// Row-major over densities, columns over d_perp values.
    pub cells: Vec<SplittingCell>,
}

impl SplittingTable {
    pub fn cell(&self, density_index: usize, d_perp_index: usize) -> &SplittingCell {
        &self.cells[density_index * self.d_perp_values.len() + d_perp_index]
    }
}

/// Surveys the fitted splitting over a density and d_perp grid. All cells
/// share per-configuration seeds, so densities see geometrically similar
/// charge environments.
pub fn splitting_vs_density(
    densities_ppm: &[f64],
    d_perp_values: &[f64],
    template: &ChargeModel,
    params: &GroundStateParams,
    freq_grid_mhz: &[f64],
    seed: u64,
    workers: usize,
) -> Result<SplittingTable> {
    if densities_ppm.is_empty() || d_perp_values.is_empty() {
        return Err(SimError::InvalidArgument(
            "survey needs at least one density and one d_perp value".into(),
        ));
    }
    let mut cells = Vec::with_capacity(densities_ppm.len() * d_perp_values.len());
    for &density in densities_ppm {
        for &d_perp in d_perp_values {
            let model = ChargeModel {
                rho_vbm_ppm: density,
                d_perp_hz_per_v_cm: d_perp,
                ..template.clone()
            };
            let spectrum = simulate_spectrum(&model, params, freq_grid_mhz, seed, workers)?;
            let cell = match spectrum.fit_splitting() {
                Ok(fit) => SplittingCell {
                    density_ppm: density,
                    d_perp_hz_per_v_cm: d_perp,
                    splitting_mhz: Some(fit.splitting_mhz),
                    single_peak: fit.single_peak,
                    fit_error: None,
                },
                Err(err) => SplittingCell {
                    density_ppm: density,
                    d_perp_hz_per_v_cm: d_perp,
                    splitting_mhz: None,
                    single_peak: false,
                    fit_error: Some(err.to_string()),
                },
            };
            cells.push(cell);
        }
    }
    Ok(SplittingTable {
        densities_ppm: densities_ppm.to_vec(),
        d_perp_values: d_perp_values.to_vec(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_model(configs: usize) -> ChargeModel {
        ChargeModel {
            n_charge_configs: configs,
            ..ChargeModel::default()
        }
    }

    fn coarse_grid() -> Vec<f64> {
        (0..=1100).map(|k| 2400.0 + 2.0 * k as f64).collect()
    }

    #[test]
    fn charge_density_arithmetic() {
        let model = ChargeModel::default();
        assert!((model.charge_density_nm3() - 0.02507).abs() < 1e-4);
        let n = model.n_charges() as f64;
        let volume = model.box_side_nm().powi(3);
        assert_abs_diff_eq!(n / volume, model.charge_density_nm3(), epsilon = 1e-12);
    }

    #[test]
    fn charges_alternate_signs_and_respect_exclusion() {
        let model = ChargeModel::default();
        let charges = sample_charges(&model, 5).unwrap();
        assert_eq!(charges.len(), model.n_charges());
        let positives = charges.iter().filter(|c| c.sign > 0.0).count();
        let negatives = charges.len() - positives;
        assert!(positives.abs_diff(negatives) <= 1);
        let half = model.box_side_nm() / 2.0;
        for charge in &charges {
            let r: f64 = charge
                .position_nm
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            assert!(r >= model.exclusion_radius_nm);
            for coord in charge.position_nm {
                assert!(coord.abs() <= half);
            }
        }
    }

    #[test]
    fn same_seed_reproduces_charges() {
        let model = ChargeModel::default();
        let a = sample_charges(&model, 42).unwrap();
        let b = sample_charges(&model, 42).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.sign, y.sign);
            for axis in 0..3 {
                assert_eq!(x.position_nm[axis].to_bits(), y.position_nm[axis].to_bits());
            }
        }
        let c = sample_charges(&model, 43).unwrap();
        assert!(a
            .iter()
            .zip(c.iter())
            .any(|(x, y)| x.position_nm != y.position_nm));
    }

    #[test]
    fn charge_positions_scale_with_density() {
        let low = ChargeModel {
            rho_vbm_ppm: 123.0,
            ..ChargeModel::default()
        };
        let high = ChargeModel {
            rho_vbm_ppm: 236.0,
            ..ChargeModel::default()
        };
        let a = sample_charges(&low, 9).unwrap();
        let b = sample_charges(&high, 9).unwrap();
        let ratio = high.box_side_nm() / low.box_side_nm();
        for (x, y) in a.iter().zip(b.iter()).take(20) {
            for axis in 0..3 {
                let rescaled = x.position_nm[axis] * ratio;
                if rescaled.abs() > 2.0 * high.exclusion_radius_nm {
                    assert_abs_diff_eq!(rescaled, y.position_nm[axis], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn single_charge_matches_coulomb_hand_value() {
        let model = ChargeModel {
            n_nearest: 1,
            ..ChargeModel::default()
        };
        let charges = vec![Charge {
            position_nm: [5.0, 0.0, 0.0],
            sign: 1.0,
        }];
        let (ex, ey) = transverse_field(&charges, &model).unwrap();
        assert!((ex - 5.76e5).abs() / 5.76e5 < 1e-3);
        assert_abs_diff_eq!(ex, COULOMB_V_CM_NM2 / 25.0, epsilon = 1e-6);
        assert_abs_diff_eq!(ey, 0.0, epsilon = 1e-12);

        let screened = ChargeModel {
            n_nearest: 1,
            relative_permittivity: 2.0,
            ..ChargeModel::default()
        };
        let (ex_screened, _) = transverse_field(&charges, &screened).unwrap();
        assert_abs_diff_eq!(ex_screened, ex / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn mirror_symmetric_pair_cancels() {
        let model = ChargeModel {
            n_nearest: 2,
            ..ChargeModel::default()
        };
        let charges = vec![
            Charge {
                position_nm: [5.0, 0.0, 0.0],
                sign: 1.0,
            },
            Charge {
                position_nm: [-5.0, 0.0, 0.0],
                sign: 1.0,
            },
        ];
        let (ex, ey) = transverse_field(&charges, &model).unwrap();
        assert_abs_diff_eq!(ex, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ey, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn out_of_plane_component_is_discarded() {
        let model = ChargeModel {
            n_nearest: 1,
            ..ChargeModel::default()
        };
        let charges = vec![Charge {
            position_nm: [0.0, 0.0, 4.0],
            sign: 1.0,
        }];
        let (ex, ey) = transverse_field(&charges, &model).unwrap();
        assert_abs_diff_eq!(ex, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ey, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn truncation_to_nearest_charges_is_real() {
        let mut charges = vec![
            Charge {
                position_nm: [3.0, 0.0, 0.0],
                sign: 1.0,
            },
            Charge {
                position_nm: [0.0, 4.0, 0.0],
                sign: -1.0,
            },
        ];
        charges.push(Charge {
            position_nm: [6.0, 1.0, 0.0],
            sign: 1.0,
        });
        let nearest_two = ChargeModel {
            n_nearest: 2,
            ..ChargeModel::default()
        };
        let all_three = ChargeModel {
            n_nearest: 3,
            ..ChargeModel::default()
        };
        let truncated = transverse_field(&charges, &nearest_two).unwrap();
        let full = transverse_field(&charges, &all_three).unwrap();
        assert!((truncated.0 - full.0).abs() > 1.0);
    }

    #[test]
    fn charge_inside_exclusion_radius_errors() {
        let model = ChargeModel {
            n_nearest: 1,
            ..ChargeModel::default()
        };
        let charges = vec![Charge {
            position_nm: [0.5, 0.0, 0.0],
            sign: 1.0,
        }];
        assert!(matches!(
            transverse_field(&charges, &model),
            Err(SimError::InvalidArgument(_))
        ));
    }

    #[test]
    fn unperturbed_hamiltonian_eigenvalues() {
        let params = GroundStateParams::default();
        let (f_minus, f_plus) =
            transition_frequencies(&params, 0.0, 0.0, [0, 0, 0]).unwrap();
        assert_abs_diff_eq!(f_minus, 3480.0, epsilon = 1e-10);
        assert_abs_diff_eq!(f_plus, 3480.0, epsilon = 1e-10);
    }

    #[test]
    fn transverse_coupling_splits_by_twice_pi() {
        let params = GroundStateParams::default();
        let (f_minus, f_plus) =
            transition_frequencies(&params, 10.0, 0.0, [0, 0, 0]).unwrap();
        assert_abs_diff_eq!(f_plus - f_minus, 20.0, epsilon = 1e-10);
        assert_abs_diff_eq!(f_plus + f_minus, 2.0 * 3480.0, epsilon = 1e-9);
    }

    #[test]
    fn splitting_invariant_under_field_rotation() {
        let params = GroundStateParams::default();
        let pi_perp = 17.0;
        let reference = transition_frequencies(&params, pi_perp, 0.0, [0, 0, 0]).unwrap();
        for angle_deg in [15.0, 60.0, 123.0, 245.0] {
            let angle = f64::to_radians(angle_deg);
            let (f_minus, f_plus) = transition_frequencies(
                &params,
                pi_perp * angle.cos(),
                pi_perp * angle.sin(),
                [0, 0, 0],
            )
            .unwrap();
            assert_abs_diff_eq!(
                f_plus - f_minus,
                reference.1 - reference.0,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn full_nuclear_polarization_shifts_by_three_hyperfine() {
        let params = GroundStateParams::default();
        let (f_minus, f_plus) =
            transition_frequencies(&params, 0.0, 0.0, [1, 1, 1]).unwrap();
        assert_abs_diff_eq!(f_minus, 3480.0 - 141.0, epsilon = 1e-10);
        assert_abs_diff_eq!(f_plus, 3480.0 + 141.0, epsilon = 1e-10);
        let (g_minus, g_plus) =
            transition_frequencies(&params, 0.0, 0.0, [-1, -1, -1]).unwrap();
        assert_abs_diff_eq!(g_minus, f_minus, epsilon = 1e-10);
        assert_abs_diff_eq!(g_plus, f_plus, epsilon = 1e-10);
    }

    #[test]
    fn diagonalization_matches_closed_form() {
        // Restricted to {|+1>, |-1>} the Hamiltonian is a 2x2 block with
        // diagonal D +- sigma_m a_zz and off-diagonal magnitude
        // sqrt(pi_x^2 + pi_y^2), so the transitions from the decoupled |0>
        // state sit at D +- sqrt((sigma_m a_zz)^2 + pi_perp^2).
        let params = GroundStateParams::default();
        for (pi_x, pi_y, m) in [
            (8.0, 0.0, [0i8, 0, 0]),
            (3.0, -4.0, [1, 0, 0]),
            (0.0, 12.5, [1, 1, 0]),
            (-6.0, 2.0, [1, 1, 1]),
            (20.0, 11.0, [-1, 0, 1]),
        ] {
            let sigma_m = f64::from(m.iter().map(|v| i32::from(*v)).sum::<i32>());
            let offset = ((sigma_m * params.a_zz_mhz).powi(2) + pi_x * pi_x + pi_y * pi_y)
                .sqrt();
            let (f_minus, f_plus) = transition_frequencies(&params, pi_x, pi_y, m).unwrap();
            assert_abs_diff_eq!(f_minus, params.d_gs_mhz - offset, epsilon = 1e-10);
            assert_abs_diff_eq!(f_plus, params.d_gs_mhz + offset, epsilon = 1e-10);
        }
    }

    #[test]
    fn invalid_nuclear_projection_rejected() {
        let params = GroundStateParams::default();
        assert!(ground_state_hamiltonian(&params, 0.0, 0.0, [2, 0, 0]).is_err());
    }

    #[test]
    fn hyperfine_only_spectrum_is_symmetric() {
        let model = ChargeModel {
            d_perp_hz_per_v_cm: 0.0,
            ..small_model(3)
        };
        let params = GroundStateParams::default();
        let grid: Vec<f64> = (0..=1200).map(|k| 2880.0 + k as f64).collect();
        let spectrum = simulate_spectrum(&model, &params, &grid, 1, 1).unwrap();
        let n = grid.len();
        for i in 0..n {
            let mirror = n - 1 - i;
            assert_abs_diff_eq!(
                spectrum.intensity[i],
                spectrum.intensity[mirror],
                epsilon = 1e-9
            );
        }
        let center_idx = grid.iter().position(|f| (*f - 3480.0).abs() < 0.5).unwrap();
        assert!(spectrum.intensity[center_idx] > 0.9);
    }

    #[test]
    fn charged_spectrum_stays_symmetric_about_zero_field_splitting() {
        let model = small_model(5);
        let params = GroundStateParams::default();
        let grid: Vec<f64> = (0..=1600).map(|k| 2680.0 + k as f64).collect();
        let spectrum = simulate_spectrum(&model, &params, &grid, 3, 1).unwrap();
        let n = grid.len();
        for i in 0..n {
            assert_abs_diff_eq!(
                spectrum.intensity[i],
                spectrum.intensity[n - 1 - i],
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn subset_averages_equal_union_spectrum() {
        let model = small_model(6);
        let params = GroundStateParams::default();
        let grid = coarse_grid();
        let union =
            spectrum_profile_range(&model, &params, &grid, 17, 0..6, 1).unwrap();
        let first =
            spectrum_profile_range(&model, &params, &grid, 17, 0..2, 1).unwrap();
        let second =
            spectrum_profile_range(&model, &params, &grid, 17, 2..6, 1).unwrap();
        for i in 0..grid.len() {
            let combined = (2.0 * first[i] + 4.0 * second[i]) / 6.0;
            assert_abs_diff_eq!(union[i], combined, epsilon = 1e-10);
        }
    }

    #[test]
    fn workers_do_not_change_spectrum_bits() {
        let model = small_model(8);
        let params = GroundStateParams::default();
        let grid = coarse_grid();
        let serial = spectrum_profile_range(&model, &params, &grid, 23, 0..8, 1).unwrap();
        let parallel = spectrum_profile_range(&model, &params, &grid, 23, 0..8, 3).unwrap();
        for (a, b) in serial.iter().zip(parallel.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn narrow_grid_rejected() {
        let model = small_model(2);
        let params = GroundStateParams::default();
        let grid: Vec<f64> = (0..=100).map(|k| 3400.0 + k as f64).collect();
        assert!(simulate_spectrum(&model, &params, &grid, 1, 1).is_err());
    }

    #[test]
    fn splitting_grows_with_density() {
        let template = small_model(60);
        let params = GroundStateParams::default();
        let grid = coarse_grid();
        let table = splitting_vs_density(
            &[123.0, 236.0],
            &[40.0],
            &template,
            &params,
            &grid,
            11,
            2,
        )
        .unwrap();
        let low = table.cell(0, 0).splitting_mhz.expect("fit at 123 ppm");
        let high = table.cell(1, 0).splitting_mhz.expect("fit at 236 ppm");
        assert!(
            high > low,
            "splitting should grow with density: {low} vs {high}"
        );
    }

    #[test]
    fn zero_d_perp_column_is_density_independent() {
        let template = small_model(4);
        let params = GroundStateParams::default();
        let grid = coarse_grid();
        let table = splitting_vs_density(
            &[123.0, 236.0, 500.0],
            &[0.0],
            &template,
            &params,
            &grid,
            7,
            1,
        )
        .unwrap();
        let reference = table.cell(0, 0).splitting_mhz;
        for row in 1..3 {
            assert_eq!(table.cell(row, 0).splitting_mhz, reference);
            assert_eq!(table.cell(row, 0).single_peak, table.cell(0, 0).single_peak);
        }
    }

    #[test]
    fn splitting_grows_with_d_perp() {
        let template = small_model(30);
        let params = GroundStateParams::default();
        let grid = coarse_grid();
        let table =
            splitting_vs_density(&[236.0], &[20.0, 60.0], &template, &params, &grid, 5, 2)
                .unwrap();
        let low = table.cell(0, 0).splitting_mhz.expect("fit at d_perp 20");
        let high = table.cell(0, 1).splitting_mhz.expect("fit at d_perp 60");
        assert!(high > low, "splitting should grow with d_perp: {low} vs {high}");
    }
}

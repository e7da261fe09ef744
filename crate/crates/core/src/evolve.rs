//! State propagation through piecewise-constant Hamiltonians.
//!
//! Two propagators are provided: dense diagonalization (exact up to
//! floating-point roundoff, used as the oracle and for cached repeated
//! propagation at small dimension) and a Lanczos Krylov-subspace
//! exponential-times-vector routine with adaptive substepping (matrix-free,
//! the workhorse at larger spin counts).
//!
//! Unit convention: Hamiltonians are in MHz, durations in ns, and every
//! propagator applies exp(-i * 2pi * 1e-3 * H * t).

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::algebra::{require_hermitian, spin_half_rotation, OperatorMatrix, StateVector};
use crate::error::{Result, SimError};
use crate::pulse::{PulseSequence, Readout, Segment, SegmentKind};
use crate::system::{
    dipolar_hamiltonian, disorder_hamiltonian, drive_hamiltonian, site_bit, SpinSystem,
};
use crate::RADIANS_PER_MHZ_NS;

/// Largest Hilbert-space dimension the dense path will materialize.
pub const DENSE_DIM_LIMIT: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Krylov,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorConfig {
    pub method: Method,
    pub krylov_dim: usize,
    pub tolerance: f64,
    pub max_substeps: usize,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        PropagatorConfig {
            method: Method::Krylov,
            krylov_dim: 30,
            tolerance: 1e-10,
            max_substeps: 1024,
        }
    }
}

impl PropagatorConfig {
    pub fn dense() -> Self {
        PropagatorConfig {
            method: Method::Dense,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.krylov_dim < 2 {
            return Err(SimError::InvalidArgument(format!(
                "krylov_dim must be >= 2, got {}",
                self.krylov_dim
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(SimError::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_substeps == 0 {
            return Err(SimError::InvalidArgument(
                "max_substeps must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Eigendecomposition of a Hermitian matrix, reusable across propagation
/// times: exp(-i theta H) psi = U diag(exp(-i theta w)) U^dag psi.
pub struct HermitianEigen {
    vectors: OperatorMatrix,
    values: Vec<f64>,
}

impl HermitianEigen {
    pub fn new(h: &OperatorMatrix) -> Result<Self> {
        require_hermitian(h, 1e-9)?;
        let eigen = h.clone().symmetric_eigen();
        Ok(HermitianEigen {
            vectors: eigen.eigenvectors,
            values: eigen.eigenvalues.iter().copied().collect(),
        })
    }

    pub fn propagate(&self, t_ns: f64, psi: &StateVector) -> StateVector {
        let theta = RADIANS_PER_MHZ_NS * t_ns;
        let mut coeffs = self.vectors.adjoint() * psi;
        for (c, w) in coeffs.iter_mut().zip(self.values.iter()) {
            *c *= Complex64::from_polar(1.0, -theta * w);
        }
        &self.vectors * coeffs
    }
}

/// exp(-i * 2pi * 1e-3 * H * t) psi via eigendecomposition.
pub fn dense_propagate(h: &OperatorMatrix, t_ns: f64, psi: &StateVector) -> Result<StateVector> {
    if h.nrows() != psi.len() {
        return Err(SimError::InvalidArgument(format!(
            "Hamiltonian dimension {} does not match state dimension {}",
            h.nrows(),
            psi.len()
        )));
    }
    Ok(HermitianEigen::new(h)?.propagate(t_ns, psi))
}

/// Something that can apply a Hermitian Hamiltonian (MHz) to a state.
pub trait HamiltonianAction {
    fn dim(&self) -> usize;
    /// out = H psi.
    fn apply(&self, psi: &StateVector, out: &mut StateVector);
}

/// Dense matrix as an action, for oracle comparisons.
pub struct DenseAction<'a>(pub &'a OperatorMatrix);

impl HamiltonianAction for DenseAction<'_> {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, psi: &StateVector, out: &mut StateVector) {
        self.0.mul_to(psi, out);
    }
}

/// Matrix-free dipolar + disorder (+ optional drive) Hamiltonian of a spin
/// system; precomputes the diagonal and the flip-flop pair list.
pub struct SystemAction {
    n_spins: usize,
    diag: Vec<f64>,
    /// (bit mask of spin i, bit mask of spin j, J_ij / 2).
    pairs: Vec<(usize, usize, f64)>,
    drive: Option<DriveTerm>,
}

struct DriveTerm {
    /// Amplitude (Omega/2) e^{-i phase} applied on a down-to-up flip; the
    /// conjugate applies on up-to-down.
    raise: Complex64,
}

impl SystemAction {
    pub fn new(system: &SpinSystem) -> Self {
        let n = system.n_spins();
        let dim = system.dim();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let j_ij = system.couplings[(i, j)];
                if j_ij != 0.0 {
                    pairs.push((1usize << (n - 1 - i), 1usize << (n - 1 - j), j_ij / 2.0));
                }
            }
        }
        let mut diag = vec![0.0f64; dim];
        for (state, d) in diag.iter_mut().enumerate() {
            let mut value = 0.0;
            for i in 0..n {
                let sign_i = 1.0 - 2.0 * site_bit(state, i, n) as f64;
                value += system.disorder[i] * 0.5 * sign_i;
                for j in (i + 1)..n {
                    let sign_j = 1.0 - 2.0 * site_bit(state, j, n) as f64;
                    value += -system.couplings[(i, j)] * 0.25 * sign_i * sign_j;
                }
            }
            *d = value;
        }
        SystemAction {
            n_spins: n,
            diag,
            pairs,
            drive: None,
        }
    }

    pub fn with_drive(system: &SpinSystem, rabi_mhz: f64, phase_rad: f64) -> Self {
        let mut action = SystemAction::new(system);
        action.drive = Some(DriveTerm {
            raise: Complex64::from_polar(rabi_mhz / 2.0, -phase_rad),
        });
        action
    }
}

impl HamiltonianAction for SystemAction {
    fn dim(&self) -> usize {
        1usize << self.n_spins
    }

    fn apply(&self, psi: &StateVector, out: &mut StateVector) {
        let dim = self.dim();
        for s in 0..dim {
            out[s] = psi[s] * Complex64::new(self.diag[s], 0.0);
        }
        for &(mask_i, mask_j, half_j) in &self.pairs {
            let amp = Complex64::new(half_j, 0.0);
            for s in 0..dim {
                let bi = s & mask_i != 0;
                let bj = s & mask_j != 0;
                if bi != bj {
                    out[s ^ mask_i ^ mask_j] += amp * psi[s];
                }
            }
        }
        if let Some(drive) = &self.drive {
            let lower = drive.raise.conj();
            for site in 0..self.n_spins {
                let mask = 1usize << (self.n_spins - 1 - site);
                for s in 0..dim {
                    let amp = if s & mask != 0 { drive.raise } else { lower };
                    out[s ^ mask] += amp * psi[s];
                }
            }
        }
    }
}

/// One Lanczos step's result: projected propagation plus an error estimate.
struct KrylovStep {
    state: StateVector,
    error_estimate: f64,
    happy_breakdown: bool,
}

/// Single Krylov approximation of exp(-i theta A) psi with subspace size m.
fn krylov_step(
    action: &dyn HamiltonianAction,
    theta: f64,
    psi: &StateVector,
    m: usize,
) -> KrylovStep {
    let dim = action.dim();
    let beta0 = psi.norm();
    if beta0 == 0.0 {
        return KrylovStep {
            state: psi.clone(),
            error_estimate: 0.0,
            happy_breakdown: true,
        };
    }
    let m = m.min(dim);
    let mut basis: Vec<StateVector> = Vec::with_capacity(m);
    basis.push(psi / Complex64::new(beta0, 0.0));
    let mut alphas: Vec<f64> = Vec::with_capacity(m);
    let mut betas: Vec<f64> = Vec::with_capacity(m);
    let mut w = StateVector::zeros(dim);
    let mut happy = false;
    let mut next_beta = 0.0;
    for j in 0..m {
        action.apply(&basis[j], &mut w);
        let alpha = basis[j].dotc(&w).re;
        alphas.push(alpha);
        w -= &basis[j] * Complex64::new(alpha, 0.0);
        if j > 0 {
            let prev_beta = betas[j - 1];
            w -= &basis[j - 1] * Complex64::new(prev_beta, 0.0);
        }
        for v in &basis {
            let overlap = v.dotc(&w);
            if overlap.norm() > 0.0 {
                w -= v * overlap;
            }
        }
        let beta = w.norm();
        if j + 1 == m {
            next_beta = beta;
            break;
        }
        if beta < 1e-14 * beta0.max(1.0) {
            happy = true;
            break;
        }
        betas.push(beta);
        basis.push(&w / Complex64::new(beta, 0.0));
    }
    let k = alphas.len();
    let mut tri = DMatrix::<f64>::zeros(k, k);
    for (j, &a) in alphas.iter().enumerate() {
        tri[(j, j)] = a;
        if j + 1 < k {
            tri[(j, j + 1)] = betas[j];
            tri[(j + 1, j)] = betas[j];
        }
    }
    let eigen = tri.symmetric_eigen();
    let first_row: Vec<f64> = (0..k).map(|c| eigen.eigenvectors[(0, c)]).collect();
    let mut y = vec![Complex64::new(0.0, 0.0); k];
    for c in 0..k {
        let phase = Complex64::from_polar(1.0, -theta * eigen.eigenvalues[c]);
        let weight = phase * Complex64::new(first_row[c], 0.0);
        for (r, yr) in y.iter_mut().enumerate() {
            *yr += Complex64::new(eigen.eigenvectors[(r, c)], 0.0) * weight;
        }
    }
    let mut state = StateVector::zeros(dim);
    for (j, v) in basis.iter().enumerate() {
        state += v * (y[j] * Complex64::new(beta0, 0.0));
    }
    let error_estimate = if happy {
        0.0
    } else {
        beta0 * theta.abs() * next_beta * y[k - 1].norm()
    };
    KrylovStep {
        state,
        error_estimate,
        happy_breakdown: happy,
    }
}

/// Lanczos exp(-i * 2pi * 1e-3 * H * t) psi with adaptive substepping: a
/// substep is accepted when its local error estimate is below
/// config.tolerance, otherwise the substep is halved.
pub fn krylov_propagate_action(
    action: &dyn HamiltonianAction,
    t_ns: f64,
    psi: &StateVector,
    config: &PropagatorConfig,
) -> Result<StateVector> {
    config.validate()?;
    if action.dim() != psi.len() {
        return Err(SimError::InvalidArgument(format!(
            "Hamiltonian dimension {} does not match state dimension {}",
            action.dim(),
            psi.len()
        )));
    }
    if t_ns == 0.0 {
        return Ok(psi.clone());
    }
    let total_theta = RADIANS_PER_MHZ_NS * t_ns;
    let mut state = psi.clone();
    let mut remaining = total_theta;
    let mut dt = total_theta;
    let mut steps = 0usize;
    let mut worst_residual = 0.0f64;
    while remaining.abs() > 1e-16 * total_theta.abs() {
        if dt.abs() > remaining.abs() {
            dt = remaining;
        }
        let step = krylov_step(action, dt, &state, config.krylov_dim);
        steps += 1;
        if steps > config.max_substeps {
            return Err(SimError::Convergence(format!(
                "Krylov propagation exceeded {} substeps; last local residual {:.3e} \
                 (tolerance {:.1e})",
                config.max_substeps, worst_residual, config.tolerance
            )));
        }
        if step.happy_breakdown || step.error_estimate < config.tolerance {
            state = step.state;
            remaining -= dt;
            if step.error_estimate < config.tolerance / 64.0 {
                dt *= 2.0;
            }
        } else {
            worst_residual = worst_residual.max(step.error_estimate);
            dt /= 2.0;
        }
    }
    Ok(state)
}

/// Krylov propagation of an explicit Hermitian matrix.
pub fn krylov_propagate(
    h: &OperatorMatrix,
    t_ns: f64,
    psi: &StateVector,
    config: &PropagatorConfig,
) -> Result<StateVector> {
    require_hermitian(h, 1e-9)?;
    krylov_propagate_action(&DenseAction(h), t_ns, psi, config)
}

/// Applies the same single-spin gate to every spin in place.
pub fn apply_global_gate(gate: &OperatorMatrix, state: &mut StateVector, n_spins: usize) {
    let dim = state.len();
    let g00 = gate[(0, 0)];
    let g01 = gate[(0, 1)];
    let g10 = gate[(1, 0)];
    let g11 = gate[(1, 1)];
    for site in 0..n_spins {
        let mask = 1usize << (n_spins - 1 - site);
        for s in 0..dim {
            if s & mask == 0 {
                let partner = s | mask;
                let up = state[s];
                let down = state[partner];
                state[s] = g00 * up + g01 * down;
                state[partner] = g10 * up + g11 * down;
            }
        }
    }
}

/// Central-spin <Sz> of a many-spin state.
pub fn central_sz(state: &StateVector, system: &SpinSystem) -> f64 {
    let n = system.n_spins();
    let mask = 1usize << (n - 1 - system.central_index);
    let mut expectation = 0.0;
    for (s, amp) in state.iter().enumerate() {
        let sign = if s & mask == 0 { 0.5 } else { -0.5 };
        expectation += sign * amp.norm_sqr();
    }
    expectation
}

/// Drive cache key: phase and Rabi frequency bit patterns (None = free
/// evolution). Phases are canonicalized to [0, 2pi).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum DriveKey {
    Free,
    Drive { phase_bits: u64, rabi_bits: u64 },
}

fn canonical_phase(phase_rad: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut p = phase_rad % two_pi;
    if p < 0.0 {
        p += two_pi;
    }
    if p >= two_pi {
        p = 0.0;
    }
    p
}

/// Propagates sequences on one fixed system. In dense mode, eigendecomposed
/// segment Hamiltonians are cached per drive setting, so every free window
/// and every pulse phase costs one decomposition per system regardless of
/// how many segments or sequences reuse it.
pub struct SequenceRunner<'a> {
    system: &'a SpinSystem,
    config: PropagatorConfig,
    dense_cache: HashMap<DriveKey, HermitianEigen>,
    free_action: SystemAction,
    drive_actions: HashMap<DriveKey, SystemAction>,
}

impl<'a> SequenceRunner<'a> {
    pub fn new(system: &'a SpinSystem, config: PropagatorConfig) -> Result<Self> {
        config.validate()?;
        if config.method == Method::Dense && system.dim() > DENSE_DIM_LIMIT {
            return Err(SimError::InvalidArgument(format!(
                "dense propagation is limited to dimension {DENSE_DIM_LIMIT}, \
                 system has {}",
                system.dim()
            )));
        }
        Ok(SequenceRunner {
            system,
            config,
            dense_cache: HashMap::new(),
            free_action: SystemAction::new(system),
            drive_actions: HashMap::new(),
        })
    }

    pub fn system(&self) -> &SpinSystem {
        self.system
    }

    /// All spins up: the tensor product of |0> states, basis index 0.
    pub fn initial_state(&self) -> StateVector {
        let mut state = StateVector::zeros(self.system.dim());
        state[0] = Complex64::new(1.0, 0.0);
        state
    }

    fn dense_eigen(&mut self, key: DriveKey) -> Result<&HermitianEigen> {
        if !self.dense_cache.contains_key(&key) {
            let mut h = dipolar_hamiltonian(self.system)?;
            h += disorder_hamiltonian(self.system);
            if let DriveKey::Drive { phase_bits, rabi_bits } = key {
                h += drive_hamiltonian(
                    self.system.n_spins(),
                    f64::from_bits(rabi_bits),
                    f64::from_bits(phase_bits),
                )?;
            }
            self.dense_cache.insert(key, HermitianEigen::new(&h)?);
        }
        Ok(&self.dense_cache[&key])
    }

    fn krylov_action(&mut self, key: DriveKey) -> &SystemAction {
        match key {
            DriveKey::Free => &self.free_action,
            DriveKey::Drive { phase_bits, rabi_bits } => {
                self.drive_actions.entry(key).or_insert_with(|| {
                    SystemAction::with_drive(
                        self.system,
                        f64::from_bits(rabi_bits),
                        f64::from_bits(phase_bits),
                    )
                })
            }
        }
    }

    /// Applies one segment to the state in place.
    pub fn apply_segment(&mut self, segment: &Segment, state: &mut StateVector) -> Result<()> {
        segment.validate()?;
        let key = match segment.kind {
            SegmentKind::Free => DriveKey::Free,
            SegmentKind::Drive { phase_rad, rabi_mhz } => DriveKey::Drive {
                phase_bits: canonical_phase(phase_rad).to_bits(),
                rabi_bits: rabi_mhz.to_bits(),
            },
            SegmentKind::Rotation { phase_rad, angle_rad } => {
                let gate = spin_half_rotation(phase_rad, angle_rad);
                apply_global_gate(&gate, state, self.system.n_spins());
                return Ok(());
            }
        };
        if segment.duration_ns == 0.0 {
            return Ok(());
        }
        *state = match self.config.method {
            Method::Dense => self.dense_eigen(key)?.propagate(segment.duration_ns, state),
            Method::Krylov => {
                let config = self.config;
                let action = self.krylov_action(key);
                krylov_propagate_action(action, segment.duration_ns, state, &config)?
            }
        };
        Ok(())
    }

    /// Runs preparation and body segments from the polarized initial state.
    pub fn state_after_body(&mut self, seq: &PulseSequence) -> Result<StateVector> {
        let mut state = self.initial_state();
        for segment in &seq.segments {
            self.apply_segment(segment, &mut state)?;
        }
        Ok(state)
    }

    /// Applies the readout step to a copy of the state and measures the
    /// central spin's <Sz>.
    pub fn read_out(&mut self, state: &StateVector, readout: &Readout) -> Result<f64> {
        match readout {
            Readout::DirectSz => Ok(central_sz(state, self.system)),
            Readout::Pulse(segment) => {
                let mut copy = state.clone();
                self.apply_segment(segment, &mut copy)?;
                Ok(central_sz(&copy, self.system))
            }
        }
    }

    /// Full sequence: preparation, body, readout; returns central-spin <Sz>.
    pub fn run(&mut self, seq: &PulseSequence) -> Result<f64> {
        let state = self.state_after_body(seq)?;
        self.read_out(&state, &seq.readout)
    }

    /// As `run`, also recording <Sz_central> after every segment (the last
    /// entry is the post-readout value).
    pub fn run_trace(&mut self, seq: &PulseSequence) -> Result<Vec<f64>> {
        let mut state = self.initial_state();
        let mut trace = Vec::with_capacity(seq.segments.len() + 1);
        for segment in &seq.segments {
            self.apply_segment(segment, &mut state)?;
            trace.push(central_sz(&state, self.system));
        }
        trace.push(self.read_out(&state, &seq.readout)?);
        Ok(trace)
    }
}

/// One-shot convenience wrapper around `SequenceRunner`.
pub fn run_sequence(
    system: &SpinSystem,
    seq: &PulseSequence,
    config: &PropagatorConfig,
) -> Result<f64> {
    SequenceRunner::new(system, *config)?.run(seq)
}

//! Pulse-sequence representation and builders.
//!
//! A `PulseSequence` is an ordered list of rectangular-pulse and
//! free-evolution segments plus a readout step. Builders cover Ramsey, spin
//! echo, XY-8, DROID, Rabi, spin locking, and T1. Sequences exist in two
//! modes: finite pulses (drive segments of duration 1/(4 Omega) per pi/2, the
//! form used by the simulator) and ideal pulses (zero-duration rotations,
//! used as oracles because they refocus static disorder exactly).
//!
//! Timing convention: an "interval" tau_0 is free-evolution time between
//! pulse edges by default; `SpacingConvention::CenterToCenter` instead
//! interprets tau_0 as the center-to-center period. Reported sequence time is
//! the body duration (decoupling pulses plus free windows), excluding the
//! state-preparation pulse and the readout pulse.
//!
//! Sequence files are CSV with columns `kind,duration_ns,phase_deg,rabi_mhz`
//! where kind is one of `prep`, `drive`, `free`, `readout`; a final `readout`
//! record sets the readout pulse, and omitting it yields a direct Sz readout.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algebra::{spin_half_rotation, OperatorMatrix};
use crate::error::{Result, SimError};
use crate::RADIANS_PER_MHZ_NS;

/// What a segment does while the clock runs.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentKind {
    /// Free evolution under the internal Hamiltonian only.
    Free,
    /// Rectangular resonant drive at the given phase and Rabi frequency,
    /// with the internal Hamiltonian still active.
    Drive { phase_rad: f64, rabi_mhz: f64 },
    /// Instantaneous global rotation about the equatorial axis at
    /// `phase_rad`; duration must be zero.
    Rotation { phase_rad: f64, angle_rad: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub duration_ns: f64,
}

impl Segment {
    pub fn free(duration_ns: f64) -> Segment {
        Segment {
            kind: SegmentKind::Free,
            duration_ns,
        }
    }

    pub fn drive(duration_ns: f64, phase_rad: f64, rabi_mhz: f64) -> Segment {
        Segment {
            kind: SegmentKind::Drive { phase_rad, rabi_mhz },
            duration_ns,
        }
    }

    pub fn rotation(phase_rad: f64, angle_rad: f64) -> Segment {
        Segment {
            kind: SegmentKind::Rotation { phase_rad, angle_rad },
            duration_ns: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.duration_ns.is_finite() || self.duration_ns < 0.0 {
            return Err(SimError::InvalidArgument(format!(
                "segment duration {} ns is invalid",
                self.duration_ns
            )));
        }
        match self.kind {
            SegmentKind::Free => Ok(()),
            SegmentKind::Drive { rabi_mhz, .. } => {
                if rabi_mhz <= 0.0 {
                    return Err(SimError::InvalidArgument(format!(
                        "drive segment needs positive rabi frequency, got {rabi_mhz}"
                    )));
                }
                if self.duration_ns <= 0.0 {
                    return Err(SimError::InvalidArgument(
                        "drive segment needs positive duration".into(),
                    ));
                }
                Ok(())
            }
            SegmentKind::Rotation { .. } => {
                if self.duration_ns != 0.0 {
                    return Err(SimError::InvalidArgument(
                        "ideal rotation segments have zero duration".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// The net single-spin rotation this segment applies when the internal
    /// Hamiltonian is ignored (used by the toggling-frame tracker).
    pub fn bare_rotation(&self) -> Option<OperatorMatrix> {
        match self.kind {
            SegmentKind::Free => None,
            SegmentKind::Drive { phase_rad, rabi_mhz } => {
                let angle = RADIANS_PER_MHZ_NS * rabi_mhz * self.duration_ns;
                Some(spin_half_rotation(phase_rad, angle))
            }
            SegmentKind::Rotation { phase_rad, angle_rad } => {
                Some(spin_half_rotation(phase_rad, angle_rad))
            }
        }
    }
}

/// How the final spin state becomes a number.
#[derive(Debug, Clone, PartialEq)]
pub enum Readout {
    /// A final pi/2 pulse (finite drive or ideal rotation), then the
    /// central-spin <Sz>. Phase -pi/2 maps |+x> to spin-up.
    Pulse(Segment),
    /// No readout pulse; report twice the central-spin <Sz>.
    DirectSz,
}

impl Readout {
    pub fn duration_ns(&self) -> f64 {
        match self {
            Readout::Pulse(segment) => segment.duration_ns,
            Readout::DirectSz => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    /// Preparation and body segments in order; `body_start` indexes the
    /// first segment after state preparation.
    pub segments: Vec<Segment>,
    pub body_start: usize,
    pub readout: Readout,
    pub label: String,
}

impl PulseSequence {
    /// Total wall-clock duration including preparation and readout, ns.
    pub fn total_duration_ns(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_ns).sum::<f64>()
            + self.readout.duration_ns()
    }

    /// Duration of the decoupling body (free windows plus decoupling
    /// pulses), excluding preparation and readout. This is the time axis of
    /// decay curves.
    pub fn body_duration_ns(&self) -> f64 {
        self.segments[self.body_start..]
            .iter()
            .map(|s| s.duration_ns)
            .sum()
    }

    pub fn body_segments(&self) -> &[Segment] {
        &self.segments[self.body_start..]
    }

    pub fn validate(&self) -> Result<()> {
        if self.body_start > self.segments.len() {
            return Err(SimError::InvalidArgument(format!(
                "body_start {} exceeds segment count {}",
                self.body_start,
                self.segments.len()
            )));
        }
        for segment in &self.segments {
            segment.validate()?;
        }
        if let Readout::Pulse(segment) = &self.readout {
            segment.validate()?;
            if segment.kind == SegmentKind::Free {
                return Err(SimError::InvalidArgument(
                    "readout pulse cannot be a free segment".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Finite pulses integrate the drive; ideal pulses are instantaneous
/// rotations that ignore the internal Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseMode {
    Finite,
    Ideal,
}

/// Whether an interval means free time between pulse edges or the
/// center-to-center period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacingConvention {
    EdgeToEdge,
    CenterToCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseParams {
    pub rabi_mhz: f64,
    pub mode: PulseMode,
    pub spacing: SpacingConvention,
}

impl Default for PulseParams {
    fn default() -> Self {
        PulseParams {
            rabi_mhz: 83.0,
            mode: PulseMode::Finite,
            spacing: SpacingConvention::EdgeToEdge,
        }
    }
}

impl PulseParams {
    pub fn finite(rabi_mhz: f64) -> PulseParams {
        PulseParams {
            rabi_mhz,
            ..Default::default()
        }
    }

    pub fn ideal() -> PulseParams {
        PulseParams {
            mode: PulseMode::Ideal,
            ..Default::default()
        }
    }

    /// pi-pulse duration 1e3 / (2 Omega), ns.
    pub fn pi_duration_ns(&self) -> f64 {
        1e3 / (2.0 * self.rabi_mhz)
    }

    /// pi/2-pulse duration 1e3 / (4 Omega), ns.
    pub fn half_pi_duration_ns(&self) -> f64 {
        1e3 / (4.0 * self.rabi_mhz)
    }

    fn validate(&self) -> Result<()> {
        if self.rabi_mhz <= 0.0 || !self.rabi_mhz.is_finite() {
            return Err(SimError::InvalidArgument(format!(
                "rabi frequency must be positive, got {}",
                self.rabi_mhz
            )));
        }
        Ok(())
    }

    fn pulse(&self, phase_rad: f64, angle_rad: f64) -> Segment {
        match self.mode {
            PulseMode::Finite => {
                let duration = angle_rad / (RADIANS_PER_MHZ_NS * self.rabi_mhz);
                Segment::drive(duration, phase_rad, self.rabi_mhz)
            }
            PulseMode::Ideal => Segment::rotation(phase_rad, angle_rad),
        }
    }

    fn prep_half_pi(&self) -> Segment {
        self.pulse(FRAC_PI_2, FRAC_PI_2)
    }

    /// Readout placeholder: pi/2 at phase -pi/2 (the bright orientation).
    fn readout_half_pi(&self) -> Readout {
        Readout::Pulse(self.pulse(-FRAC_PI_2, FRAC_PI_2))
    }
}

fn require_nonnegative(value: f64, what: &str) -> Result<()> {
    if !value.is_finite() || value < 0.0 {
        return Err(SimError::InvalidArgument(format!(
            "{what} must be nonnegative, got {value}"
        )));
    }
    Ok(())
}

/// pi/2(y) - free t/2 - pi(x) - free t/2 - readout.
pub fn build_echo(total_free_ns: f64, params: &PulseParams) -> Result<PulseSequence> {
    params.validate()?;
    require_nonnegative(total_free_ns, "echo free time")?;
    let segments = vec![
        params.prep_half_pi(),
        Segment::free(total_free_ns / 2.0),
        params.pulse(0.0, PI),
        Segment::free(total_free_ns / 2.0),
    ];
    Ok(PulseSequence {
        segments,
        body_start: 1,
        readout: params.readout_half_pi(),
        label: "echo".into(),
    })
}

/// Phase pattern of one XY-8 cycle: x, y, x, y, y, x, y, x.
pub const XY8_PHASES_RAD: [f64; 8] =
    [0.0, FRAC_PI_2, 0.0, FRAC_PI_2, FRAC_PI_2, 0.0, FRAC_PI_2, 0.0];

/// pi/2(y), then n_pulses pi-pulses with the XY-8 phase pattern and interval
/// tau_0 between them (free windows tau_0/2, tau_0, ..., tau_0, tau_0/2),
/// then readout.
pub fn build_xy8(
    interval_ns: f64,
    n_pulses: usize,
    params: &PulseParams,
) -> Result<PulseSequence> {
    params.validate()?;
    require_nonnegative(interval_ns, "pulse interval")?;
    if n_pulses == 0 || n_pulses % 8 != 0 {
        return Err(SimError::InvalidArgument(format!(
            "XY-8 pulse count must be a positive multiple of 8, got {n_pulses}"
        )));
    }
    let gap = match params.spacing {
        SpacingConvention::EdgeToEdge => interval_ns,
        SpacingConvention::CenterToCenter => {
            let pi_len = match params.mode {
                PulseMode::Finite => params.pi_duration_ns(),
                PulseMode::Ideal => 0.0,
            };
            if interval_ns < pi_len {
                return Err(SimError::InvalidArgument(format!(
                    "center-to-center interval {interval_ns} ns is shorter than \
                     the {pi_len:.3} ns pi pulse"
                )));
            }
            interval_ns - pi_len
        }
    };
    let mut segments = vec![params.prep_half_pi(), Segment::free(gap / 2.0)];
    for k in 0..n_pulses {
        segments.push(params.pulse(XY8_PHASES_RAD[k % 8], PI));
        let window = if k + 1 == n_pulses { gap / 2.0 } else { gap };
        segments.push(Segment::free(window));
    }
    Ok(PulseSequence {
        segments,
        body_start: 1,
        readout: params.readout_half_pi(),
        label: format!("xy8_n{n_pulses}"),
    })
}

/// pi/2(y), then n_blocks repetitions of the six-window base block
/// (free tau, composite pi/2 pulses) x 6 with the composite cycle of
/// `system::DROID_BLOCK_COMPOSITES_DEG`, then readout. Each block's toggling
/// frames dwell equally on the six collective spin axes with same-axis
/// windows adjacent, and the block closes to the identity rotation.
pub fn build_droid(
    n_blocks: usize,
    interval_ns: f64,
    params: &PulseParams,
) -> Result<PulseSequence> {
    params.validate()?;
    require_nonnegative(interval_ns, "free window")?;
    if n_blocks == 0 {
        return Err(SimError::InvalidArgument(
            "DROID sequence needs at least one block".into(),
        ));
    }
    let mut segments = vec![params.prep_half_pi()];
    for _ in 0..n_blocks {
        for composite in crate::system::DROID_BLOCK_COMPOSITES_DEG {
            segments.push(Segment::free(interval_ns));
            for phase_deg in composite {
                segments.push(params.pulse(phase_deg.to_radians(), FRAC_PI_2));
            }
        }
    }
    Ok(PulseSequence {
        segments,
        body_start: 1,
        readout: params.readout_half_pi(),
        label: format!("droid_b{n_blocks}"),
    })
}

/// pi/2(y) - free t - readout.
pub fn build_ramsey(t_ns: f64, params: &PulseParams) -> Result<PulseSequence> {
    params.validate()?;
    require_nonnegative(t_ns, "free time")?;
    Ok(PulseSequence {
        segments: vec![params.prep_half_pi(), Segment::free(t_ns)],
        body_start: 1,
        readout: params.readout_half_pi(),
        label: "ramsey".into(),
    })
}

/// Continuous drive along x for t, direct Sz readout.
pub fn build_rabi(t_ns: f64, params: &PulseParams) -> Result<PulseSequence> {
    params.validate()?;
    require_nonnegative(t_ns, "drive time")?;
    let segments = if t_ns > 0.0 {
        vec![Segment::drive(t_ns, 0.0, params.rabi_mhz)]
    } else {
        vec![Segment::free(0.0)]
    };
    Ok(PulseSequence {
        segments,
        body_start: 0,
        readout: Readout::DirectSz,
        label: "rabi".into(),
    })
}

/// pi/2(y) - drive along x for t - readout.
pub fn build_spin_lock(t_ns: f64, params: &PulseParams) -> Result<PulseSequence> {
    params.validate()?;
    require_nonnegative(t_ns, "locking time")?;
    let mut segments = vec![params.prep_half_pi()];
    if t_ns > 0.0 {
        segments.push(Segment::drive(t_ns, 0.0, params.rabi_mhz));
    } else {
        segments.push(Segment::free(0.0));
    }
    Ok(PulseSequence {
        segments,
        body_start: 1,
        readout: params.readout_half_pi(),
        label: "spin_lock".into(),
    })
}

/// Free evolution for t from the polarized state, direct Sz readout.
pub fn build_t1(t_ns: f64, params: &PulseParams) -> Result<PulseSequence> {
    params.validate()?;
    require_nonnegative(t_ns, "wait time")?;
    Ok(PulseSequence {
        segments: vec![Segment::free(t_ns)],
        body_start: 0,
        readout: Readout::DirectSz,
        label: "t1".into(),
    })
}

/// Resolves a sequence's readout placeholder into the bright (-y) and dark
/// (+y) readout variants; the outputs differ only in that final pulse phase.
pub fn differential_pair(seq: &PulseSequence) -> Result<(PulseSequence, PulseSequence)> {
    let template = match &seq.readout {
        Readout::Pulse(segment) => segment.clone(),
        Readout::DirectSz => {
            return Err(SimError::InvalidArgument(format!(
                "sequence '{}' has a direct Sz readout, not a readout pulse",
                seq.label
            )));
        }
    };
    let with_phase = |phase_rad: f64, suffix: &str| {
        let mut segment = template.clone();
        match &mut segment.kind {
            SegmentKind::Drive { phase_rad: p, .. } => *p = phase_rad,
            SegmentKind::Rotation { phase_rad: p, .. } => *p = phase_rad,
            SegmentKind::Free => unreachable!("validated above"),
        }
        PulseSequence {
            segments: seq.segments.clone(),
            body_start: seq.body_start,
            readout: Readout::Pulse(segment),
            label: format!("{}_{suffix}", seq.label),
        }
    };
    Ok((with_phase(-FRAC_PI_2, "bright"), with_phase(FRAC_PI_2, "dark")))
}

/// The families a sweep can range over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceFamily {
    Echo,
    Xy8,
    Droid,
    Ramsey,
    Rabi,
    SpinLock,
    T1,
}

impl SequenceFamily {
    pub fn name(&self) -> &'static str {
        match self {
            SequenceFamily::Echo => "echo",
            SequenceFamily::Xy8 => "xy8",
            SequenceFamily::Droid => "droid",
            SequenceFamily::Ramsey => "ramsey",
            SequenceFamily::Rabi => "rabi",
            SequenceFamily::SpinLock => "spin_lock",
            SequenceFamily::T1 => "t1",
        }
    }
}

/// Sweep axis: hold the interval fixed and grow the pulse count, hold the
/// pulse count fixed and grow the interval, or sweep a plain duration for
/// families without decoupling pulses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SweepMode {
    FixedIntervalSweepN {
        interval_ns: f64,
        pulse_counts: Vec<usize>,
    },
    FixedNSweepInterval {
        n_pulses: usize,
        intervals_ns: Vec<f64>,
    },
    SweepDuration { times_ns: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub family: SequenceFamily,
    pub mode: SweepMode,
}

/// Builds the ordered sequence list a sweep plan describes.
pub fn expand_sweep(plan: &SweepPlan, params: &PulseParams) -> Result<Vec<PulseSequence>> {
    match (&plan.family, &plan.mode) {
        (SequenceFamily::Xy8, SweepMode::FixedIntervalSweepN { interval_ns, pulse_counts }) => {
            pulse_counts
                .iter()
                .map(|&n| build_xy8(*interval_ns, n, params))
                .collect()
        }
        (SequenceFamily::Xy8, SweepMode::FixedNSweepInterval { n_pulses, intervals_ns }) => {
            intervals_ns
                .iter()
                .map(|&tau| build_xy8(tau, *n_pulses, params))
                .collect()
        }
        (SequenceFamily::Droid, SweepMode::FixedIntervalSweepN { interval_ns, pulse_counts }) => {
            pulse_counts
                .iter()
                .map(|&n| {
                    if n == 0 || n % 6 != 0 {
                        return Err(SimError::InvalidArgument(format!(
                            "DROID pulse count must be a positive multiple of 6, got {n}"
                        )));
                    }
                    build_droid(n / 6, *interval_ns, params)
                })
                .collect()
        }
        (SequenceFamily::Droid, SweepMode::FixedNSweepInterval { n_pulses, intervals_ns }) => {
            if *n_pulses == 0 || n_pulses % 6 != 0 {
                return Err(SimError::InvalidArgument(format!(
                    "DROID pulse count must be a positive multiple of 6, got {n_pulses}"
                )));
            }
            intervals_ns
                .iter()
                .map(|&tau| build_droid(n_pulses / 6, tau, params))
                .collect()
        }
        (SequenceFamily::Echo, SweepMode::SweepDuration { times_ns }) => times_ns
            .iter()
            .map(|&t| build_echo(t, params))
            .collect(),
        (SequenceFamily::Ramsey, SweepMode::SweepDuration { times_ns }) => times_ns
            .iter()
            .map(|&t| build_ramsey(t, params))
            .collect(),
        (SequenceFamily::Rabi, SweepMode::SweepDuration { times_ns }) => times_ns
            .iter()
            .map(|&t| build_rabi(t, params))
            .collect(),
        (SequenceFamily::SpinLock, SweepMode::SweepDuration { times_ns }) => times_ns
            .iter()
            .map(|&t| build_spin_lock(t, params))
            .collect(),
        (SequenceFamily::T1, SweepMode::SweepDuration { times_ns }) => times_ns
            .iter()
            .map(|&t| build_t1(t, params))
            .collect(),
        (family, mode) => Err(SimError::InvalidArgument(format!(
            "sweep mode {mode:?} does not apply to the {} family",
            family.name()
        ))),
    }
}

/// Toggling frames of the sequence body as single-spin rotations: one
/// (accumulated rotation, dwell time) entry per free window, tracked from
/// the end of state preparation. Pulses contribute their bare rotations.
pub fn toggling_frames(seq: &PulseSequence) -> Result<Vec<(OperatorMatrix, f64)>> {
    let mut frames = Vec::new();
    let mut accumulated = OperatorMatrix::identity(2, 2);
    for segment in seq.body_segments() {
        match segment.kind {
            SegmentKind::Free => {
                if segment.duration_ns > 0.0 {
                    frames.push((accumulated.clone(), segment.duration_ns));
                }
            }
            _ => {
                let rotation = segment.bare_rotation().expect("non-free segment");
                accumulated = rotation * accumulated;
            }
        }
    }
    if frames.is_empty() {
        return Err(SimError::InvalidArgument(format!(
            "sequence '{}' has no free windows to average over",
            seq.label
        )));
    }
    Ok(frames)
}

/// Tensor-expands single-spin toggling frames to n_spins via identical
/// per-spin rotations, for use with `system::average_hamiltonian`.
pub fn expand_frames(
    frames: &[(OperatorMatrix, f64)],
    n_spins: usize,
) -> Vec<(OperatorMatrix, f64)> {
    frames
        .iter()
        .map(|(u, w)| {
            let mut out = OperatorMatrix::identity(1, 1);
            for _ in 0..n_spins {
                out = out.kronecker(u);
            }
            (out, *w)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentRecord {
    kind: String,
    duration_ns: f64,
    phase_deg: f64,
    rabi_mhz: f64,
}

/// Writes a finite-pulse sequence as CSV records
/// `kind,duration_ns,phase_deg,rabi_mhz`. Ideal-rotation segments have no
/// file representation and are rejected.
pub fn write_sequence_file(seq: &PulseSequence, path: &Path) -> Result<()> {
    seq.validate()?;
    let mut writer = csv::Writer::from_path(path)?;
    let record_for = |segment: &Segment, kind: &str| -> Result<SegmentRecord> {
        match segment.kind {
            SegmentKind::Free => Ok(SegmentRecord {
                kind: "free".into(),
                duration_ns: segment.duration_ns,
                phase_deg: 0.0,
                rabi_mhz: 0.0,
            }),
            SegmentKind::Drive { phase_rad, rabi_mhz } => Ok(SegmentRecord {
                kind: kind.into(),
                duration_ns: segment.duration_ns,
                phase_deg: phase_rad.to_degrees(),
                rabi_mhz,
            }),
            SegmentKind::Rotation { .. } => Err(SimError::InvalidArgument(
                "ideal-rotation segments cannot be written to sequence files".into(),
            )),
        }
    };
    for (k, segment) in seq.segments.iter().enumerate() {
        let kind = if k < seq.body_start { "prep" } else { "drive" };
        writer.serialize(record_for(segment, kind)?)?;
    }
    if let Readout::Pulse(segment) = &seq.readout {
        writer.serialize(record_for(segment, "readout")?)?;
    }
    writer.flush().map_err(std::io::Error::from)?;
    Ok(())
}

/// Reads a sequence file written by `write_sequence_file` (or by hand). A
/// trailing `readout` record becomes the readout pulse; without one the
/// sequence reads out Sz directly.
pub fn read_sequence_file(path: &Path) -> Result<PulseSequence> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut segments: Vec<Segment> = Vec::new();
    let mut body_start = 0usize;
    let mut readout = Readout::DirectSz;
    let mut seen_body = false;
    for (line, record) in reader.deserialize::<SegmentRecord>().enumerate() {
        let record = record?;
        if matches!(readout, Readout::Pulse(_)) {
            return Err(SimError::InvalidArgument(format!(
                "record {} follows the readout record",
                line + 1
            )));
        }
        match record.kind.as_str() {
            "free" => {
                seen_body = true;
                segments.push(Segment::free(record.duration_ns));
            }
            "drive" => {
                seen_body = true;
                segments.push(Segment::drive(
                    record.duration_ns,
                    record.phase_deg.to_radians(),
                    record.rabi_mhz,
                ));
            }
            "prep" => {
                if seen_body {
                    return Err(SimError::InvalidArgument(format!(
                        "prep record {} appears after body segments",
                        line + 1
                    )));
                }
                segments.push(Segment::drive(
                    record.duration_ns,
                    record.phase_deg.to_radians(),
                    record.rabi_mhz,
                ));
                body_start = segments.len();
            }
            "readout" => {
                readout = Readout::Pulse(Segment::drive(
                    record.duration_ns,
                    record.phase_deg.to_radians(),
                    record.rabi_mhz,
                ));
            }
            other => {
                return Err(SimError::InvalidArgument(format!(
                    "unknown segment kind '{other}' in record {}",
                    line + 1
                )));
            }
        }
    }
    if segments.is_empty() {
        return Err(SimError::InvalidArgument(
            "sequence file contains no segments".into(),
        ));
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "custom".into());
    let seq = PulseSequence {
        segments,
        body_start,
        readout,
        label: stem,
    };
    seq.validate()?;
    Ok(seq)
}

//! CSV persistence and run manifests.
//!
//! CSV is the durable output contract; every simulation run also writes a
//! JSON manifest carrying the full configuration, seed, and tool version so
//! the run can be reproduced bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::DecayCurve;
use crate::error::{Result, SimError};
use crate::esr::{EsrSpectrum, SplittingTable};
use crate::system::SpinSystem;

/// One row of a decay-curve CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayRecord {
    pub time_ns: f64,
    pub contrast: f64,
    pub stderr: f64,
    pub sequence: String,
    pub density_ppm: f64,
    pub n_realizations: usize,
    pub master_seed: u64,
}

/// One row of a fitted-T2 summary CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct T2Record {
    pub density_ppm: f64,
    pub sequence: String,
    pub t2_ns: Option<f64>,
    pub fit_error: Option<String>,
}

/// Reproducibility manifest written next to every artifact set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub master_seed: u64,
    pub workers: usize,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, master_seed: u64, workers: usize, config: serde_json::Value) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            master_seed,
            workers,
            config,
            outputs: Vec::new(),
        }
    }
}

fn flatten_curve(curve: &DecayCurve, density_ppm: f64, master_seed: u64) -> Vec<DecayRecord> {
    curve
        .times_ns
        .iter()
        .zip(curve.contrast.iter())
        .zip(curve.stderr.iter())
        .map(|((t, c), se)| DecayRecord {
            time_ns: *t,
            contrast: *c,
            stderr: *se,
            sequence: curve.label.clone(),
            density_ppm,
            n_realizations: curve.n_realizations,
            master_seed,
        })
        .collect()
}

/// Writes decay curves in long format, one row per time point.
pub fn write_decay_csv(
    path: &Path,
    curves: &[(f64, &DecayCurve)],
    master_seed: u64,
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for (density, curve) in curves {
        for record in flatten_curve(curve, *density, master_seed) {
            writer.serialize(record)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Reads a decay CSV back into rows.
pub fn read_decay_csv(path: &Path) -> Result<Vec<DecayRecord>> {
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let mut records = Vec::new();
    for row in reader.deserialize() {
        records.push(row?);
    }
    Ok(records)
}

/// Regroups decay rows into curves keyed by (sequence, density), preserving
/// first-appearance order.
pub fn group_decay_records(records: &[DecayRecord]) -> Vec<(f64, DecayCurve)> {
    let mut order: Vec<(String, u64)> = Vec::new();
    let mut curves: Vec<(f64, DecayCurve)> = Vec::new();
    for record in records {
        let key = (record.sequence.clone(), record.density_ppm.to_bits());
        let idx = match order.iter().position(|k| *k == key) {
            Some(idx) => idx,
            None => {
                order.push(key);
                curves.push((
                    record.density_ppm,
                    DecayCurve {
                        times_ns: Vec::new(),
                        contrast: Vec::new(),
                        stderr: Vec::new(),
                        n_realizations: record.n_realizations,
                        label: record.sequence.clone(),
                    },
                ));
                curves.len() - 1
            }
        };
        let curve = &mut curves[idx].1;
        curve.times_ns.push(record.time_ns);
        curve.contrast.push(record.contrast);
        curve.stderr.push(record.stderr);
    }
    curves
}

pub fn write_t2_csv(path: &Path, records: &[T2Record]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_t2_csv(path: &Path) -> Result<Vec<T2Record>> {
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let mut records = Vec::new();
    for row in reader.deserialize() {
        records.push(row?);
    }
    Ok(records)
}

/// Writes an ESR spectrum as {freq_mhz, intensity}.
pub fn write_spectrum_csv(path: &Path, spectrum: &EsrSpectrum) -> Result<()> {
    spectrum.validate()?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    writer.write_record(["freq_mhz", "intensity"])?;
    for (f, p) in spectrum.freqs_mhz.iter().zip(spectrum.intensity.iter()) {
        writer.write_record([format!("{f}"), format!("{p}")])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_spectrum_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let mut freqs = Vec::new();
    let mut intensity = Vec::new();
    for row in reader.records() {
        let row = row?;
        let parse = |field: Option<&str>, name: &str| -> Result<f64> {
            field
                .ok_or_else(|| SimError::InvalidArgument(format!("missing {name} column")))?
                .trim()
                .parse::<f64>()
                .map_err(|e| SimError::InvalidArgument(format!("bad {name} value: {e}")))
        };
        freqs.push(parse(row.get(0), "freq_mhz")?);
        intensity.push(parse(row.get(1), "intensity")?);
    }
    Ok((freqs, intensity))
}

/// Writes the splitting survey as a matrix: densities down the rows, one
/// column per d_perp value. Cells that failed to fit are left empty.
pub fn write_splitting_matrix_csv(path: &Path, table: &SplittingTable) -> Result<()> {
    let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["density_ppm".to_string()];
    for d_perp in &table.d_perp_values {
        header.push(format!("d_perp_{d_perp}"));
    }
    writer.write_record(&header)?;
    for (i, density) in table.densities_ppm.iter().enumerate() {
        let mut row = vec![format!("{density}")];
        for j in 0..table.d_perp_values.len() {
            let cell = table.cell(i, j);
            row.push(match cell.splitting_mhz {
                Some(delta) => format!("{delta}"),
                None => String::new(),
            });
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Long-format companion to the splitting matrix, carrying per-cell flags.
pub fn write_splitting_cells_csv(path: &Path, table: &SplittingTable) -> Result<()> {
    let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for cell in &table.cells {
        writer.serialize(cell)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes spin positions as {x_nm, y_nm, z_nm}.
pub fn write_geometry_csv(path: &Path, system: &SpinSystem) -> Result<()> {
    let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    writer.write_record(["x_nm", "y_nm", "z_nm"])?;
    for position in &system.positions {
        writer.write_record([
            format!("{}", position[0]),
            format!("{}", position[1]),
            format!("{}", position[2]),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes the run manifest as pretty-printed JSON.
pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    let text = serde_json::to_string_pretty(manifest)?;
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let file = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esr::{ChargeModel, GroundStateParams};

    fn sample_curve(label: &str) -> DecayCurve {
        DecayCurve {
            times_ns: vec![0.0, 10.0, 20.0, 30.0],
            contrast: vec![1.0, 0.8, 0.6, 0.45],
            stderr: vec![0.0, 0.01, 0.015, 0.02],
            n_realizations: 42,
            label: label.into(),
        }
    }

    #[test]
    fn decay_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("decay.csv");
        let xy8 = sample_curve("xy8_236ppm");
        let droid = sample_curve("droid_236ppm");
        write_decay_csv(&path, &[(236.0, &xy8), (236.0, &droid)], 7).unwrap();
        let records = read_decay_csv(&path).unwrap();
        assert_eq!(records.len(), 8);
        assert_eq!(records[0].sequence, "xy8_236ppm");
        assert_eq!(records[0].master_seed, 7);
        let grouped = group_decay_records(&records);
        assert_eq!(grouped.len(), 2);
        assert_eq!(grouped[0].1.times_ns, xy8.times_ns);
        assert_eq!(grouped[1].1.contrast, droid.contrast);
        assert_eq!(grouped[0].1.n_realizations, 42);
    }

    #[test]
    fn decay_csv_bytes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        let curve = sample_curve("echo_123ppm");
        write_decay_csv(&a, &[(123.0, &curve)], 9).unwrap();
        write_decay_csv(&b, &[(123.0, &curve)], 9).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn t2_summary_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t2.csv");
        let records = vec![
            T2Record {
                density_ppm: 123.0,
                sequence: "xy8".into(),
                t2_ns: Some(310.5),
                fit_error: None,
            },
            T2Record {
                density_ppm: 500.0,
                sequence: "droid".into(),
                t2_ns: None,
                fit_error: Some("fit failure: did not converge".into()),
            },
        ];
        write_t2_csv(&path, &records).unwrap();
        let back = read_t2_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].t2_ns, Some(310.5));
        assert_eq!(back[1].t2_ns, None);
        assert!(back[1].fit_error.as_deref().unwrap().contains("converge"));
    }

    #[test]
    fn spectrum_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("esr.csv");
        let spectrum = EsrSpectrum {
            freqs_mhz: vec![3400.0, 3450.0, 3500.0],
            intensity: vec![0.2, 1.0, 0.3],
            raw_profile: vec![0.04, 0.2, 0.06],
            model: ChargeModel::default(),
            params: GroundStateParams::default(),
        };
        write_spectrum_csv(&path, &spectrum).unwrap();
        let (freqs, intensity) = read_spectrum_csv(&path).unwrap();
        assert_eq!(freqs, spectrum.freqs_mhz);
        assert_eq!(intensity, spectrum.intensity);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("freq_mhz,intensity"));
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut manifest = RunManifest::new(
            "simulate-decay",
            99,
            4,
            serde_json::json!({"density_ppm": 236.0}),
        );
        manifest.outputs.push("decay.csv".into());
        write_manifest(&path, &manifest).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.command, "simulate-decay");
        assert_eq!(back.master_seed, 99);
        assert_eq!(back.config["density_ppm"], 236.0);
        assert_eq!(back.outputs, vec!["decay.csv".to_string()]);
    }

    #[test]
    fn geometry_csv_lists_positions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("geometry.csv");
        let spec = crate::system::DensitySpec::new(236.0, 4);
        let system = SpinSystem::sample(&spec, 0.0, 3).unwrap();
        write_geometry_csv(&path, &system).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.trim().lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "x_nm,y_nm,z_nm");
    }
}

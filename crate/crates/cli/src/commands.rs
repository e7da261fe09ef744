//! Subcommand implementations: each resolves its configuration, runs the
//! pipeline stage, writes CSV artifacts plus a reproducibility manifest,
//! and prints a human-readable report to stdout.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use ddsim_core::algebra::{embed, max_abs, spin_half_ops, OperatorMatrix};
use ddsim_core::analysis::{
    dose_to_ppm_with, extract_density as extract_density_op, fit_exponential, fit_power_law,
    PowerLawFit,
};
use ddsim_core::ensemble::{run_density_sweep, run_ensemble, DensityPoint, EnsembleConfig};
use ddsim_core::esr::{simulate_spectrum, splitting_vs_density, ChargeModel};
use ddsim_core::io::{
    write_decay_csv, write_geometry_csv, write_manifest, write_spectrum_csv,
    write_splitting_cells_csv, write_splitting_matrix_csv, write_t2_csv, read_t2_csv,
    RunManifest, T2Record,
};
use ddsim_core::pulse::{
    build_droid, build_xy8, expand_frames, read_sequence_file, toggling_frames, PulseParams,
    PulseSequence,
};
use ddsim_core::svg::{write_svg, Plot, Series, SeriesStyle};
use ddsim_core::system::{
    average_hamiltonian, dipolar_hamiltonian, heisenberg_effective, DensitySpec, SpinSystem,
};
use ddsim_core::HBN_ATOMS_PER_NM3;

use crate::config::{
    build_ensemble, build_freq_grid, default_droid_sweep, default_xy8_sweep, Profile,
    RunConfig,
};
use crate::{Cli, CliError};

fn ensure_out_dir(cli: &Cli) -> Result<(), CliError> {
    fs::create_dir_all(&cli.out_dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", cli.out_dir.display())))
}

fn out_path(cli: &Cli, name: &str) -> PathBuf {
    cli.out_dir.join(name)
}

fn write_report(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Simulation(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn emit_manifest(
    cli: &Cli,
    command: &str,
    seed: u64,
    workers: usize,
    config: serde_json::Value,
    outputs: Vec<String>,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::new(command, seed, workers, config);
    manifest.outputs = outputs;
    write_manifest(&out_path(cli, &format!("{command}_manifest.json")), &manifest)?;
    Ok(())
}

fn decay_plot(title: &str, curves: &[(f64, &ddsim_core::ensemble::DecayCurve)]) -> Plot {
    let mut plot = Plot::new(title, "time (ns)", "normalized contrast");
    for (_, curve) in curves {
        let mut series = Series::line(
            &curve.label,
            curve
                .times_ns
                .iter()
                .zip(curve.contrast.iter())
                .map(|(t, c)| (*t, *c))
                .collect(),
        );
        series.style = SeriesStyle::LineWithMarkers;
        series.error_bars = Some(curve.stderr.clone());
        plot.series.push(series);
    }
    plot
}

pub fn simulate_decay(cli: &Cli) -> Result<(), CliError> {
    let run_config = RunConfig::load(cli.config.as_deref())?;
    let sweep = run_config.sweep.clone().unwrap_or_else(default_xy8_sweep);
    let config = build_ensemble(
        &run_config.ensemble,
        cli.profile,
        sweep,
        cli.seed,
        cli.workers,
    );
    config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    ensure_out_dir(cli)?;

    let curve = run_ensemble(&config)?;
    let csv_path = out_path(cli, "decay.csv");
    write_decay_csv(&csv_path, &[(config.density_ppm, &curve)], config.master_seed)?;
    let mut outputs = vec!["decay.csv".to_string()];

    if cli.svg {
        let plot = decay_plot("coherence decay", &[(config.density_ppm, &curve)]);
        write_svg(&out_path(cli, "decay.svg"), &plot)?;
        outputs.push("decay.svg".to_string());
    }

    let fit = fit_exponential(&curve);
    let mut report = format!(
        "sequence: {}\ndensity: {} ppm, spins: {}, realizations: {}, seed: {}\n",
        curve.label, config.density_ppm, config.n_spins, config.n_realizations,
        config.master_seed
    );
    match &fit {
        Ok(fit) => {
            report.push_str(&format!(
                "T2 = {:.4} ns (amplitude {:.4}, residual rms {:.3e})\n",
                fit.t2_ns, fit.amplitude, fit.residual_rms
            ));
        }
        Err(err) => {
            report.push_str(&format!("T2 fit failed: {err}\n"));
        }
    }
    write_report(&out_path(cli, "decay_fit.txt"), &report)?;
    outputs.push("decay_fit.txt".to_string());
    emit_manifest(
        cli,
        "simulate-decay",
        config.master_seed,
        config.workers,
        json!({"run_config": run_config, "resolved_ensemble": config}),
        outputs,
    )?;
    print!("{report}");
    println!("wrote {}", csv_path.display());
    fit?;
    Ok(())
}

pub fn density_sweep(cli: &Cli) -> Result<(), CliError> {
    let run_config = RunConfig::load(cli.config.as_deref())?;
    let densities = run_config
        .densities_ppm
        .clone()
        .unwrap_or_else(|| vec![50.0, 123.0, 236.0, 500.0]);
    let xy8_sweep = run_config
        .xy8_sweep
        .clone()
        .unwrap_or_else(default_xy8_sweep);
    let droid_sweep = run_config
        .droid_sweep
        .clone()
        .unwrap_or_else(default_droid_sweep);
    let template = build_ensemble(
        &run_config.ensemble,
        cli.profile,
        xy8_sweep.clone(),
        cli.seed,
        cli.workers,
    );
    template
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    ensure_out_dir(cli)?;

    let points = run_density_sweep(&densities, &template, &xy8_sweep, &droid_sweep)?;
    write_sweep_artifacts(cli, &template, &points)?;
    emit_manifest(
        cli,
        "density-sweep",
        template.master_seed,
        template.workers,
        json!({
            "run_config": run_config,
            "resolved_template": template,
            "densities_ppm": densities,
        }),
        sweep_output_names(cli.svg),
    )?;
    print_sweep_report(&points);
    Ok(())
}

fn sweep_output_names(svg: bool) -> Vec<String> {
    let mut names = vec!["curves.csv".to_string(), "t2_summary.csv".to_string()];
    if svg {
        names.push("t2_vs_density.svg".to_string());
    }
    names
}

fn write_sweep_artifacts(
    cli: &Cli,
    template: &EnsembleConfig,
    points: &[DensityPoint],
) -> Result<(), CliError> {
    let mut rows = Vec::new();
    let mut t2_rows = Vec::new();
    for point in points {
        for family in [&point.xy8, &point.droid] {
            rows.push((point.density_ppm, &family.curve));
            t2_rows.push(T2Record {
                density_ppm: point.density_ppm,
                sequence: family.curve.label.clone(),
                t2_ns: family.t2_ns,
                fit_error: family.fit_error.clone(),
            });
        }
    }
    write_decay_csv(&out_path(cli, "curves.csv"), &rows, template.master_seed)?;
    write_t2_csv(&out_path(cli, "t2_summary.csv"), &t2_rows)?;

    if cli.svg {
        let mut plot = Plot::new("coherence time vs density", "density (ppm)", "T2 (ns)");
        plot.x_log = true;
        plot.y_log = true;
        for (label, pick) in [
            ("xy8", &(|p: &DensityPoint| p.xy8.t2_ns) as &dyn Fn(&DensityPoint) -> Option<f64>),
            ("droid", &|p: &DensityPoint| p.droid.t2_ns),
        ] {
            let pts: Vec<(f64, f64)> = points
                .iter()
                .filter_map(|p| pick(p).map(|t2| (p.density_ppm, t2)))
                .collect();
            if !pts.is_empty() {
                let mut series = Series::scatter(label, pts);
                series.style = SeriesStyle::LineWithMarkers;
                plot.series.push(series);
            }
        }
        write_svg(&out_path(cli, "t2_vs_density.svg"), &plot)?;
    }
    Ok(())
}

fn print_sweep_report(points: &[DensityPoint]) {
    println!("density_ppm  T2_xy8_ns  T2_droid_ns");
    for point in points {
        let show = |t2: &Option<f64>, err: &Option<String>| match t2 {
            Some(v) => format!("{v:.2}"),
            None => format!("fit failed: {}", err.as_deref().unwrap_or("unknown")),
        };
        println!(
            "{:>11}  {:>9}  {:>11}",
            point.density_ppm,
            show(&point.xy8.t2_ns, &point.xy8.fit_error),
            show(&point.droid.t2_ns, &point.droid.fit_error),
        );
    }
}

fn family_power_law(
    records: &[T2Record],
    family_prefix: &str,
) -> Result<PowerLawFit, CliError> {
    let mut densities = Vec::new();
    let mut t2s = Vec::new();
    for record in records {
        if record.sequence.starts_with(family_prefix) {
            if let Some(t2) = record.t2_ns {
                densities.push(record.density_ppm);
                t2s.push(t2);
            }
        }
    }
    if densities.len() < 2 {
        return Err(CliError::Fit(format!(
            "need at least 2 fitted {family_prefix} points, found {}",
            densities.len()
        )));
    }
    fit_power_law(&densities, &t2s).map_err(|e| CliError::Fit(e.to_string()))
}

pub fn extract_density(
    cli: &Cli,
    t2_summary: &Path,
    t2_xy8_ns: f64,
    t2_droid_ns: f64,
    grid_low_ppm: Option<f64>,
    grid_high_ppm: Option<f64>,
) -> Result<(), CliError> {
    let records = read_t2_csv(t2_summary)
        .map_err(|e| CliError::Config(format!("{}: {e}", t2_summary.display())))?;
    let xy8 = family_power_law(&records, "xy8")?;
    let droid = family_power_law(&records, "droid")?;
    let densities: Vec<f64> = records.iter().map(|r| r.density_ppm).collect();
    let data_low = densities.iter().cloned().fold(f64::INFINITY, f64::min);
    let data_high = densities.iter().cloned().fold(0.0f64, f64::max);
    let mut low = grid_low_ppm.unwrap_or(data_low / 3.0);
    let mut high = grid_high_ppm.unwrap_or(data_high * 3.0);
    if high / low < 10.0 {
        let center = (low * high).sqrt();
        low = center / 3.2;
        high = center * 3.2;
    }
    let estimate = extract_density_op(&xy8, &droid, t2_xy8_ns, t2_droid_ns, low, high)
        .map_err(|e| CliError::Fit(e.to_string()))?;

    ensure_out_dir(cli)?;
    let mut residual_csv = String::from("density_ppm,residual\n");
    for (rho, res) in &estimate.residual_curve {
        residual_csv.push_str(&format!("{rho},{res}\n"));
    }
    write_report(&out_path(cli, "residual_curve.csv"), &residual_csv)?;
    let estimate_json = serde_json::to_string_pretty(&json!({
        "estimate": estimate_summary(&estimate),
        "power_laws": {
            "xy8": {"alpha": xy8.alpha, "prefactor_log": xy8.prefactor_log},
            "droid": {"alpha": droid.alpha, "prefactor_log": droid.prefactor_log},
        },
        "inputs": {"t2_xy8_ns": t2_xy8_ns, "t2_droid_ns": t2_droid_ns},
    }))
    .map_err(|e| CliError::Simulation(e.to_string()))?;
    write_report(&out_path(cli, "density_estimate.json"), &estimate_json)?;

    let mut report = format!(
        "estimated density: {:.2} ppm (5% residual band: {:.2} to {:.2} ppm)\n\
         power laws: alpha_xy8 = {:.3}, alpha_droid = {:.3}\n",
        estimate.rho_ppm, estimate.band_low_ppm, estimate.band_high_ppm, xy8.alpha,
        droid.alpha
    );
    if estimate.boundary {
        report.push_str("warning: residual minimum sits on the search-grid boundary\n");
    }
    write_report(&out_path(cli, "density_estimate.txt"), &report)?;
    emit_manifest(
        cli,
        "extract-density",
        0,
        1,
        json!({
            "t2_summary": t2_summary.display().to_string(),
            "t2_xy8_ns": t2_xy8_ns,
            "t2_droid_ns": t2_droid_ns,
            "grid_low_ppm": low,
            "grid_high_ppm": high,
        }),
        vec![
            "residual_curve.csv".into(),
            "density_estimate.json".into(),
            "density_estimate.txt".into(),
        ],
    )?;
    print!("{report}");
    Ok(())
}

fn estimate_summary(estimate: &ddsim_core::analysis::DensityEstimate) -> serde_json::Value {
    json!({
        "rho_ppm": estimate.rho_ppm,
        "band_low_ppm": estimate.band_low_ppm,
        "band_high_ppm": estimate.band_high_ppm,
        "boundary": estimate.boundary,
    })
}

pub fn esr(cli: &Cli) -> Result<(), CliError> {
    let run_config = RunConfig::load(cli.config.as_deref())?;
    let model = run_config.charge_model.clone().unwrap_or_default();
    model
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let params = run_config.ground_state.clone().unwrap_or_default();
    params
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let grid = build_freq_grid(&run_config.esr)?;
    let seed = cli.seed.unwrap_or(1);
    let workers = cli.workers.unwrap_or(4);
    let densities = run_config
        .esr
        .densities_ppm
        .clone()
        .unwrap_or_else(|| vec![model.rho_vbm_ppm]);
    let d_perps = run_config
        .esr
        .d_perp_values
        .clone()
        .unwrap_or_else(|| vec![model.d_perp_hz_per_v_cm]);
    ensure_out_dir(cli)?;

    if densities.len() == 1 && d_perps.len() == 1 {
        let model = ChargeModel {
            rho_vbm_ppm: densities[0],
            d_perp_hz_per_v_cm: d_perps[0],
            ..model
        };
        let spectrum = simulate_spectrum(&model, &params, &grid, seed, workers)?;
        write_spectrum_csv(&out_path(cli, "esr_spectrum.csv"), &spectrum)?;
        let mut outputs = vec!["esr_spectrum.csv".to_string()];
        if cli.svg {
            let mut plot = Plot::new(
                "zero-field ESR spectrum",
                "frequency (MHz)",
                "normalized dip depth",
            );
            plot.series.push(Series::line(
                &format!("{} ppm", model.rho_vbm_ppm),
                spectrum
                    .freqs_mhz
                    .iter()
                    .zip(spectrum.intensity.iter())
                    .map(|(f, p)| (*f, *p))
                    .collect(),
            ));
            write_svg(&out_path(cli, "esr_spectrum.svg"), &plot)?;
            outputs.push("esr_spectrum.svg".to_string());
        }
        emit_manifest(
            cli,
            "esr",
            seed,
            workers,
            json!({"charge_model": model, "ground_state": params,
                   "grid": [grid[0], grid[grid.len() - 1]]}),
            outputs,
        )?;
        let fit = spectrum.fit_splitting().map_err(|e| CliError::Fit(e.to_string()))?;
        let resolved = if fit.single_peak {
            " (unresolved: single peak)"
        } else {
            ""
        };
        println!(
            "splitting: {:.2} MHz{resolved}, centers {:.2} / {:.2} MHz, widths {:.2} / {:.2} MHz",
            fit.splitting_mhz,
            fit.centers_mhz[0],
            fit.centers_mhz[1],
            fit.widths_mhz[0],
            fit.widths_mhz[1]
        );
        return Ok(());
    }

    let table = splitting_vs_density(
        &densities, &d_perps, &model, &params, &grid, seed, workers,
    )?;
    write_splitting_matrix_csv(&out_path(cli, "splitting_matrix.csv"), &table)?;
    write_splitting_cells_csv(&out_path(cli, "splitting_cells.csv"), &table)?;
    let mut outputs = vec![
        "splitting_matrix.csv".to_string(),
        "splitting_cells.csv".to_string(),
    ];
    if cli.svg {
        let mut plot = Plot::new("ESR splitting survey", "density (ppm)", "splitting (MHz)");
        plot.x_log = true;
        for (j, d_perp) in table.d_perp_values.iter().enumerate() {
            let pts: Vec<(f64, f64)> = table
                .densities_ppm
                .iter()
                .enumerate()
                .filter_map(|(i, rho)| table.cell(i, j).splitting_mhz.map(|d| (*rho, d)))
                .collect();
            if !pts.is_empty() {
                let mut series = Series::scatter(&format!("d_perp {d_perp}"), pts);
                series.style = SeriesStyle::LineWithMarkers;
                plot.series.push(series);
            }
        }
        write_svg(&out_path(cli, "splitting_survey.svg"), &plot)?;
        outputs.push("splitting_survey.svg".to_string());
    }
    emit_manifest(
        cli,
        "esr",
        seed,
        workers,
        json!({"charge_model": model, "ground_state": params,
               "densities_ppm": densities, "d_perp_values": d_perps}),
        outputs,
    )?;
    println!("splitting (MHz) by density (rows) and d_perp (columns):");
    print!("{:>12}", "density_ppm");
    for d_perp in &table.d_perp_values {
        print!("{:>12}", format!("d={d_perp}"));
    }
    println!();
    for (i, density) in table.densities_ppm.iter().enumerate() {
        print!("{density:>12}");
        for j in 0..table.d_perp_values.len() {
            match table.cell(i, j).splitting_mhz {
                Some(delta) => print!("{delta:>12.2}"),
                None => print!("{:>12}", "fit-failed"),
            }
        }
        println!();
    }
    Ok(())
}

fn pair_coefficients(
    h: &OperatorMatrix,
    i: usize,
    j: usize,
    n: usize,
) -> Result<([f64; 3], f64), CliError> {
    let ops = spin_half_ops();
    let axes = [&ops.sx, &ops.sy, &ops.sz];
    let norm = (1usize << n) as f64 / 16.0;
    let mut diagonal = [0.0; 3];
    let mut max_cross: f64 = 0.0;
    for (a, op_a) in axes.iter().enumerate() {
        for (b, op_b) in axes.iter().enumerate() {
            let basis = embed(op_a, i, n, 2)? * embed(op_b, j, n, 2)?;
            let coeff = (h * &basis).trace().re / norm;
            if a == b {
                diagonal[a] = coeff;
            } else {
                max_cross = max_cross.max(coeff.abs());
            }
        }
    }
    Ok((diagonal, max_cross))
}

pub fn avg_hamiltonian(
    cli: &Cli,
    sequence_path: Option<&Path>,
    builtin: &str,
    n_spins: usize,
) -> Result<(), CliError> {
    if !(2..=6).contains(&n_spins) {
        return Err(CliError::Config(format!(
            "n_spins must be between 2 and 6 for the printed decomposition, got {n_spins}"
        )));
    }
    let params = PulseParams::finite(83.0);
    let sequence: PulseSequence = match sequence_path {
        Some(path) => read_sequence_file(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => match builtin {
            "droid" => build_droid(1, 15.0, &params)?,
            "xy8" => build_xy8(15.0, 8, &params)?,
            other => {
                return Err(CliError::Config(format!(
                    "unknown builtin sequence '{other}' (expected droid or xy8)"
                )))
            }
        },
    };
    let seed = cli.seed.unwrap_or(1);
    let spec = DensitySpec::new(236.0, n_spins);
    let system = SpinSystem::sample(&spec, 0.0, seed)?;
    let dipolar = dipolar_hamiltonian(&system)?;
    let frames = toggling_frames(&sequence)?;
    let expanded = expand_frames(&frames, n_spins);
    let averaged = average_hamiltonian(&dipolar, &expanded)?;
    let heisenberg = heisenberg_effective(&system)?;

    let mut report = format!(
        "sequence: {} ({} toggling frames)\nreference system: {} spins at 236 ppm, seed {}\n\n",
        sequence.label,
        frames.len(),
        n_spins,
        seed
    );
    report.push_str("pair  J_ij (MHz)   SxSx        SySy        SzSz        max cross\n");
    for i in 0..n_spins {
        for j in (i + 1)..n_spins {
            let (diag, cross) = pair_coefficients(&averaged, i, j, n_spins)?;
            report.push_str(&format!(
                "{i},{j}  {:>11.4}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.2e}\n",
                system.couplings[(i, j)],
                diag[0],
                diag[1],
                diag[2],
                cross
            ));
        }
    }
    let dev_heisenberg = max_abs(&(&averaged - &heisenberg));
    let dev_dipolar = max_abs(&(&averaged - &dipolar));
    report.push_str(&format!(
        "\nHeisenberg/3: {} (max deviation {:.2e} MHz)\n",
        if dev_heisenberg < 1e-10 { "MATCH" } else { "MISMATCH" },
        dev_heisenberg
    ));
    report.push_str(&format!(
        "Dipolar form: {} (max deviation {:.2e} MHz)\n",
        if dev_dipolar < 1e-10 { "UNCHANGED" } else { "CHANGED" },
        dev_dipolar
    ));
    ensure_out_dir(cli)?;
    write_report(&out_path(cli, "avg_hamiltonian.txt"), &report)?;
    emit_manifest(
        cli,
        "avg-hamiltonian",
        seed,
        1,
        json!({"sequence": sequence.label, "n_spins": n_spins}),
        vec!["avg_hamiltonian.txt".into()],
    )?;
    print!("{report}");
    Ok(())
}

pub fn convert_dose(
    cli: &Cli,
    doses: &[f64],
    vacancies_per_ion: f64,
    depth_nm: f64,
) -> Result<(), CliError> {
    let mut csv = String::from("dose_per_nm2,density_ppm\n");
    let mut lines = String::new();
    for &dose in doses {
        let ppm = dose_to_ppm_with(dose, vacancies_per_ion, depth_nm, HBN_ATOMS_PER_NM3)
            .map_err(|e| CliError::Config(e.to_string()))?;
        lines.push_str(&format!("{dose} ions/nm^2 -> {ppm:.4e} ppm\n"));
        csv.push_str(&format!("{dose},{ppm}\n"));
    }
    ensure_out_dir(cli)?;
    write_report(&out_path(cli, "dose_table.csv"), &csv)?;
    emit_manifest(
        cli,
        "convert-dose",
        0,
        1,
        json!({"doses": doses, "vacancies_per_ion": vacancies_per_ion,
               "depth_nm": depth_nm, "atomic_density": HBN_ATOMS_PER_NM3}),
        vec!["dose_table.csv".into()],
    )?;
    print!("{lines}");
    Ok(())
}

pub fn dump_geometry(
    cli: &Cli,
    density_ppm: Option<f64>,
    n_spins: Option<usize>,
) -> Result<(), CliError> {
    let density = density_ppm.unwrap_or(236.0);
    let n_spins = n_spins.unwrap_or(match cli.profile {
        Profile::Desk => 8,
        Profile::Paper => 12,
    });
    let seed = cli.seed.unwrap_or(1);
    let spec = DensitySpec::new(density, n_spins);
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let system = SpinSystem::sample(&spec, 0.0, seed)?;
    ensure_out_dir(cli)?;
    write_geometry_csv(&out_path(cli, "geometry.csv"), &system)?;
    let mut couplings: Vec<f64> = Vec::new();
    let mut min_distance = f64::INFINITY;
    for i in 0..n_spins {
        for j in (i + 1)..n_spins {
            couplings.push(system.couplings[(i, j)].abs());
            let d: f64 = (0..3)
                .map(|k| (system.positions[i][k] - system.positions[j][k]).powi(2))
                .sum::<f64>()
                .sqrt();
            min_distance = min_distance.min(d);
        }
    }
    couplings.sort_by(f64::total_cmp);
    let median = couplings[couplings.len() / 2];
    let max = couplings.last().copied().unwrap_or(0.0);
    emit_manifest(
        cli,
        "dump-geometry",
        seed,
        1,
        json!({"density_ppm": density, "n_spins": n_spins}),
        vec!["geometry.csv".into()],
    )?;
    println!(
        "{} spins at {} ppm (box side {:.3} nm): min pair distance {:.3} nm, \
         median |J| {:.3} MHz, max |J| {:.3} MHz",
        n_spins,
        density,
        spec.box_side_nm(),
        min_distance,
        median,
        max
    );
    Ok(())
}

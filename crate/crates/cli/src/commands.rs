//! The five subcommands: train, calibrate, evaluate, experiment, sweep.
//! Each is reproducible from its echoed config and exits 0 on success,
//! 1 on numeric failure, 2 on configuration or I/O errors.

use std::fs;
use std::path::Path;
use std::time::Instant;

use conformal_kan::checkpoint::{
    load_calibration_record, load_ensemble, save_calibration_record, save_ensemble,
    CalibrationRecord,
};
use conformal_kan::experiments::{
    calibrate_ensemble, evaluate_on_test, experiment_model_kinds, run_ablation, run_experiment,
    sample_dataset, train_models, AblationAxis, ExperimentSpec, IntervalKind, ModelKind,
    ResultRow,
};
use conformal_kan::report::{history_csv, per_point_csv, results_csv};
use conformal_kan::train::TrainHistory;

use crate::config::{
    apply_runtime_overrides, echo_config, parse_grid, resolve, CliError, Overrides, ResolvedRun,
};

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create output dir {}: {e}", dir.display())))
}

fn stem(spec: &ExperimentSpec) -> String {
    format!("{}_{}", spec.id, spec.model)
}

fn write_histories(
    out: &Path,
    stem: &str,
    histories: &[TrainHistory<f64>],
) -> Result<(), CliError> {
    for (j, history) in histories.iter().enumerate() {
        fs::write(
            out.join(format!("{stem}_history_{j}.csv")),
            history_csv(history),
        )?;
    }
    Ok(())
}

fn report_rows(rows: &[ResultRow]) {
    for row in rows {
        let width = if row.infinite_width {
            "inf".to_string()
        } else {
            format!("{:.4}", row.avg_piw)
        };
        println!(
            "  {}/{}: coverage {:.4}, avg width {}",
            row.model, row.intervals_kind, row.coverage, width
        );
        if row.infinite_width {
            eprintln!(
                "warning: {} calibration points cannot support alpha = {}; \
                 conformal intervals cover the whole line",
                row.n_cal, row.alpha
            );
        }
    }
}

pub fn cmd_train(
    experiment: Option<&str>,
    model: Option<&str>,
    flags: &Overrides,
) -> Result<(), CliError> {
    let run = resolve(experiment, model, flags)?;
    run.spec.validate()?;
    prepare_out(&run.out)?;
    echo_config(&run, &format!("{}_config.toml", stem(&run.spec)))?;

    let split = sample_dataset(&run.spec)?;
    let started = Instant::now();
    let (ensemble, histories, alphas) = train_models(&run.spec, &split)?;
    let manifest = save_ensemble(&run.out, &stem(&run.spec), &ensemble, &run.spec)?;
    write_histories(&run.out, &stem(&run.spec), &histories)?;

    println!(
        "trained {} members in {:.1}s; manifest: {}",
        ensemble.size(),
        started.elapsed().as_secs_f64(),
        manifest.display()
    );
    if let Some(alphas) = alphas {
        println!("trained mixing weights: {alphas:?}");
    }
    if run.verbose {
        for (j, history) in histories.iter().enumerate() {
            println!("  member {j}: final loss {}", history.final_loss());
        }
    }
    Ok(())
}

pub fn cmd_calibrate(manifest: &Path, flags: &Overrides) -> Result<(), CliError> {
    let (ensemble, mut spec) = load_ensemble(manifest)?;
    spec.ensemble_size = ensemble.size();
    let (out, _, _) = apply_runtime_overrides(&mut spec, flags)?;
    prepare_out(&out)?;

    let split = sample_dataset(&spec)?;
    let calibration = calibrate_ensemble(&spec, &split, &ensemble)?;
    let record = CalibrationRecord::from_calibration(&calibration);
    for warning in &record.warnings {
        eprintln!("warning: {warning}");
    }
    let path = out.join(format!("{}_calibration.json", stem(&spec)));
    save_calibration_record(&path, &record)?;
    match record.q_hat {
        Some(q) => println!(
            "calibrated on {} points at alpha = {}: q_hat = {q}",
            record.n_cal, record.alpha
        ),
        None => println!(
            "calibrated on {} points at alpha = {}: no finite quantile",
            record.n_cal, record.alpha
        ),
    }
    println!("record: {}", path.display());
    Ok(())
}

pub fn cmd_evaluate(
    manifest: &Path,
    calibration_path: &Path,
    flags: &Overrides,
) -> Result<(), CliError> {
    let (ensemble, mut spec) = load_ensemble(manifest)?;
    spec.ensemble_size = ensemble.size();
    let (out, _, _) = apply_runtime_overrides(&mut spec, flags)?;
    prepare_out(&out)?;

    let record = load_calibration_record(calibration_path)?;
    if (record.alpha - spec.miscoverage_alpha).abs() > 1e-12 {
        return Err(CliError::Config(format!(
            "calibration was computed at alpha = {} but this run requests alpha = {}",
            record.alpha, spec.miscoverage_alpha
        )));
    }

    let split = sample_dataset(&spec)?;
    let calibration = record.to_calibration();
    let (rows, per_point) = evaluate_on_test(&spec, &split, &ensemble, &calibration)?;

    let results_path = out.join(format!("{}_results.csv", stem(&spec)));
    fs::write(&results_path, results_csv(&rows))?;
    fs::write(
        out.join(format!("{}_per_point.csv", stem(&spec))),
        per_point_csv(&per_point),
    )?;
    println!("evaluated {} test points:", per_point.len());
    report_rows(&rows);
    println!("results: {}", results_path.display());
    Ok(())
}

pub fn cmd_experiment(id: &str, model: Option<&str>, flags: &Overrides) -> Result<(), CliError> {
    let base = resolve(Some(id), model, flags)?;
    let kinds: Vec<ModelKind> = match model {
        Some(_) => vec![base.spec.model],
        None => experiment_model_kinds(base.spec.id).to_vec(),
    };
    prepare_out(&base.out)?;

    let mut all_rows = Vec::new();
    for kind in kinds {
        let mut run = ResolvedRun {
            spec: ExperimentSpec {
                model: kind,
                ..ExperimentSpec::defaults(base.spec.id, kind)
            },
            ..base.clone()
        };
        // re-resolve so per-kind defaults pick up the same override layers
        run.spec = resolve(Some(id), Some(&kind.to_string()), flags)?.spec;
        run.spec.validate()?;
        let stem = stem(&run.spec);
        echo_config(&run, &format!("{stem}_config.toml"))?;

        println!("running {} with model {}...", run.spec.id, kind);
        let started = Instant::now();
        let outcome = run_experiment(&run.spec)?;
        println!(
            "  {} members trained and scored in {:.1}s",
            outcome.ensemble.size(),
            started.elapsed().as_secs_f64()
        );
        if let Some(alphas) = &outcome.trained_alphas {
            println!("  trained mixing weights: {alphas:?}");
        }
        report_rows(&outcome.rows);

        save_ensemble(&base.out, &stem, &outcome.ensemble, &run.spec)?;
        save_calibration_record(
            &base.out.join(format!("{stem}_calibration.json")),
            &CalibrationRecord::from_calibration(&outcome.calibration),
        )?;
        fs::write(
            base.out.join(format!("{stem}_per_point.csv")),
            per_point_csv(&outcome.per_point),
        )?;
        write_histories(&base.out, &stem, &outcome.histories)?;
        all_rows.extend(outcome.rows);
    }

    let results_path = base.out.join("results.csv");
    fs::write(&results_path, results_csv(&all_rows))?;
    println!("results: {}", results_path.display());
    Ok(())
}

pub fn cmd_sweep(
    axis_text: &str,
    grid_text: &str,
    experiment: &str,
    model: Option<&str>,
    flags: &Overrides,
) -> Result<(), CliError> {
    let axis: AblationAxis = axis_text.parse()?;
    let grid = parse_grid(grid_text)?;
    // the subdomain sweep only makes sense for the finite-basis model
    let default_model = (axis == AblationAxis::Subdomains).then_some("fbkan");
    let run = resolve(Some(experiment), model.or(default_model), flags)?;
    run.spec.validate()?;
    prepare_out(&run.out)?;
    echo_config(&run, &format!("sweep_{axis}_config.toml"))?;

    println!(
        "sweeping {axis} over {grid:?} on {} ({})...",
        run.spec.id, run.spec.model
    );
    let started = Instant::now();
    let rows = run_ablation(axis, &grid, &run.spec)?;
    let path = run.out.join(format!("sweep_{axis}.csv"));
    fs::write(&path, results_csv(&rows))?;
    println!(
        "{} rows in {:.1}s -> {}",
        rows.len(),
        started.elapsed().as_secs_f64(),
        path.display()
    );
    for row in &rows {
        if row.intervals_kind == IntervalKind::Conformal {
            println!(
                "  {}={} n_cal={} coverage {:.4}",
                axis,
                match axis {
                    AblationAxis::EnsembleSize => row.ensemble_size,
                    AblationAxis::Subdomains => row.subdomain_count,
                    AblationAxis::CalibrationSize => row.n_cal,
                },
                row.n_cal,
                row.coverage
            );
        }
    }
    Ok(())
}

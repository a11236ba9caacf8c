use std::path::Path;

use frechet_svt::diagnostics::{bias_term, denoise_diagnostics, snr_reciprocal, weight_stability_check};
use frechet_svt::simulation::{argmin_first, mspe_profile, run_cell, run_linear_cell, CellReport, LambdaGrid};
use frechet_svt::verify::{verify_lemmas as run_verification, VerifyOptions};
use frechet_svt::{covariate_stats, fit, Dataset, Error, GrowthConstants, Matrix};
use serde_json::json;

use crate::config::{Campaign, ModelKind, ResolvedCell};
use crate::data::{format_float, read_covariates, read_table, write_table, Table};
use crate::error::{CliError, CliResult};
use crate::manifest::{create_dir, write_file, RunManifest};
use crate::{DiagnoseArgs, FitPredictArgs, LambdaArg, SimulateArgs, VerifyArgs};

pub const RESULTS_FILE: &str = "results.csv";
pub const PROFILE_FILE: &str = "profile.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved.toml";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const LAMBDA_PROFILE_FILE: &str = "lambda_profile.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const VERIFY_REPORT_FILE: &str = "verify_report.txt";

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

fn results_csv(reports: &[(&ResolvedCell, CellReport)]) -> Vec<u8> {
    let header = ["n", "p", "noise_kind", "estimator", "bias", "sqrt_var", "mse", "mspe", "lambda_hat", "model"];
    let rows = reports.iter().flat_map(|(cell, report)| {
        let model = model_name(cell);
        report.result_rows().into_iter().map(move |r| {
            vec![
                r.n.to_string(),
                r.p.to_string(),
                r.noise_kind,
                r.estimator,
                format_float(r.bias),
                format_float(r.sqrt_var),
                format_float(r.mse),
                format_float(r.mspe),
                format_float(r.lambda_hat),
                model.clone(),
            ]
        })
    });
    csv_bytes(&header, rows)
}

fn profile_csv(reports: &[(&ResolvedCell, CellReport)]) -> Vec<u8> {
    let header = ["n", "p", "noise_kind", "estimator", "lambda", "nmspe", "model"];
    let rows = reports.iter().flat_map(|(cell, report)| {
        let model = model_name(cell);
        report.profile_rows().into_iter().map(move |r| {
            vec![
                r.n.to_string(),
                r.p.to_string(),
                r.noise_kind,
                r.estimator,
                format_float(r.lambda),
                format_float(r.nmspe),
                model.clone(),
            ]
        })
    });
    csv_bytes(&header, rows)
}

fn model_name(cell: &ResolvedCell) -> String {
    match (cell.model, cell.metric) {
        (ModelKind::Linear, Some(m)) => format!("linear_{}", m.kind().name()),
        _ => "wasserstein".to_string(),
    }
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let campaign = Campaign::parse(&text, args.seed).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", args.config.display())),
        other => other,
    })?;

    create_dir(&args.out)?;
    let mut manifest = RunManifest::new(
        "simulate",
        &args.out,
        serde_json::to_value(&campaign).expect("campaign serializes"),
    );
    manifest.config_path = Some(args.config.clone());
    manifest.master_seed = Some(campaign.master_seed);
    manifest.write()?;
    let resolved = toml::to_string(&campaign.to_file()).expect("campaign serializes");
    write_file(&args.out.join(RESOLVED_CONFIG_FILE), resolved.as_bytes())?;

    let mut reports = Vec::with_capacity(campaign.cells.len());
    for (i, cell) in campaign.cells.iter().enumerate() {
        let context = format!("cell {} ({})", i + 1, cell.label());
        let report = match cell.model {
            ModelKind::Wasserstein => run_cell(&cell.sim),
            ModelKind::Linear => run_linear_cell(
                &cell.sim,
                cell.response_dim.unwrap_or(5),
                cell.metric.unwrap_or_default().kind(),
            ),
        }
        .map_err(CliError::solver(context.clone()))?;
        let mspe = |e| report.aggregate.get(e).mspe;
        use frechet_svt::simulation::Estimator::{Eiv, Ref, Svt};
        println!(
            "{context}: lambda_hat={:.4e} mspe REF={:.4} EIV={:.4} SVT={:.4}",
            report.lambda_hat,
            mspe(Ref),
            mspe(Eiv),
            mspe(Svt)
        );
        reports.push((cell, report));
    }

    write_file(&args.out.join(RESULTS_FILE), &results_csv(&reports))?;
    write_file(&args.out.join(PROFILE_FILE), &profile_csv(&reports))?;
    Ok(())
}

fn dataset(table: &Table, source: &Path) -> CliResult<Dataset> {
    Dataset::new(table.covariates.clone(), table.responses.clone(), table.kind.clone())
        .map_err(|e| CliError::Input(format!("{}: {e}", source.display())))
}

fn check_width(m: &Matrix, p: usize, source: &Path) -> CliResult<()> {
    if m.ncols() != p {
        return Err(CliError::Input(format!(
            "{} has {} covariate columns, the training table has {p}",
            source.display(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn fit_predict(args: &FitPredictArgs) -> CliResult<()> {
    if args.grid_points == 0 {
        return Err(CliError::Config("--grid-points must be positive".into()));
    }
    let train = read_table(&args.train, args.kind)?;
    if train.covariates.ncols() == 0 {
        return Err(CliError::Input(format!("{}: no covariate columns", args.train.display())));
    }
    let data = dataset(&train, &args.train)?;
    let queries = read_covariates(&args.queries)?;
    check_width(&queries, data.p(), &args.queries)?;
    let holdout = match (args.lambda, &args.holdout) {
        (LambdaArg::Auto, Some(path)) => {
            let table = read_table(path, args.kind)?;
            check_width(&table.covariates, data.p(), path)?;
            if table.kind != train.kind {
                return Err(CliError::Input(format!(
                    "{}: quantile grid differs from the training table",
                    path.display()
                )));
            }
            Some(dataset(&table, path)?)
        }
        (LambdaArg::Auto, None) => return Err(CliError::Config("--lambda auto needs --holdout".into())),
        (LambdaArg::Value(_), Some(_)) => {
            return Err(CliError::Config("--holdout is only used with --lambda auto".into()))
        }
        (LambdaArg::Value(_), None) => None,
    };

    create_dir(&args.out)?;
    let lambda_flag = match args.lambda {
        LambdaArg::Auto => "auto".to_string(),
        LambdaArg::Value(v) => format_float(v),
    };
    RunManifest::new(
        "fit-predict",
        &args.out,
        json!({
            "train": args.train,
            "queries": args.queries,
            "kind": data.kind().name(),
            "lambda": lambda_flag,
            "holdout": args.holdout,
            "grid_points": args.grid_points,
        }),
    )
    .write()?;

    let lambda = match (args.lambda, &holdout) {
        (LambdaArg::Value(v), _) => v,
        (LambdaArg::Auto, Some(holdout)) => {
            let stats = covariate_stats(data.covariates()).map_err(CliError::solver("lambda grid"))?;
            let grid = LambdaGrid::Auto {
                points: args.grid_points,
            }
            .resolve(stats.covariance_svd().largest(), data.n(), data.p())
            .map_err(CliError::solver("lambda grid"))?;
            let profile = mspe_profile(&data, holdout, &grid).map_err(CliError::solver("holdout scan"))?;
            let best = argmin_first(&profile).ok_or_else(|| CliError::Solver {
                context: "holdout scan".into(),
                source: Error::InvalidArgument("holdout MSPE is NaN at every grid value".into()),
            })?;
            let rows = grid
                .iter()
                .zip(&profile)
                .map(|(l, m)| vec![format_float(*l), format_float(*m)]);
            write_file(&args.out.join(LAMBDA_PROFILE_FILE), &csv_bytes(&["lambda", "mspe"], rows))?;
            grid[best]
        }
        (LambdaArg::Auto, None) => unreachable!("checked above"),
    };

    let model = fit(&data, lambda).map_err(CliError::solver("fit"))?;
    let predictions = model.predict_batch(&queries).map_err(CliError::solver("predict"))?;
    let mut bytes = Vec::new();
    write_table(
        &mut bytes,
        &[format!("lambda={}", format_float(lambda))],
        &queries,
        &predictions,
        data.kind(),
    )
    .expect("in-memory write");
    write_file(&args.out.join(PREDICTIONS_FILE), &bytes)?;
    println!("lambda={}", format_float(lambda));
    Ok(())
}

fn flag(v: Option<bool>) -> String {
    match v {
        Some(true) => "true".into(),
        Some(false) => "false".into(),
        None => "na".into(),
    }
}

pub fn diagnose(args: &DiagnoseArgs) -> CliResult<()> {
    if !args.lambda.is_finite() || args.lambda < 0.0 {
        return Err(CliError::Config(format!(
            "--lambda must be finite and non-negative, got {}",
            args.lambda
        )));
    }
    let constants = GrowthConstants::new(args.c_g, args.alpha, args.d_g, args.diameter)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let train = read_table(&args.train, args.kind)?;
    let data = dataset(&train, &args.train)?;
    let z = read_covariates(&args.noisy)?;
    check_width(&z, data.p(), &args.noisy)?;
    if z.nrows() != data.n() {
        return Err(CliError::Input(format!(
            "{} has {} rows, the training table has {}",
            args.noisy.display(),
            z.nrows(),
            data.n()
        )));
    }
    let queries = read_covariates(&args.queries)?;
    check_width(&queries, data.p(), &args.queries)?;

    create_dir(&args.out)?;
    RunManifest::new(
        "diagnose",
        &args.out,
        json!({
            "train": args.train,
            "noisy": args.noisy,
            "queries": args.queries,
            "kind": data.kind().name(),
            "lambda": format_float(args.lambda),
            "c_g": format_float(args.c_g),
            "alpha": format_float(args.alpha),
            "d_g": format_float(args.d_g),
            "diameter": format_float(args.diameter),
        }),
    )
    .write()?;

    let x = data.covariates();
    let stats = covariate_stats(x).map_err(CliError::solver("covariate statistics"))?;
    let snr = snr_reciprocal(x, &z, args.lambda).map_err(CliError::solver("noise ratio"))?;
    let mut rows = Vec::with_capacity(queries.nrows());
    for i in 0..queries.nrows() {
        let context = format!("query {}", i + 1);
        let q = queries.row(i).transpose();
        let bias = bias_term(stats.covariance(), stats.mean(), args.lambda, &q)
            .map_err(CliError::solver(context.clone()))?;
        let report = denoise_diagnostics(x, &z, data.responses(), data.kind(), args.lambda, &q, &constants)
            .map_err(CliError::solver(context.clone()))?;
        let stability = match weight_stability_check(x, &z, args.lambda, &q) {
            Ok(w) => Some(w),
            Err(Error::RowspaceViolation(_)) => None,
            Err(e) => return Err(CliError::solver(context)(e)),
        };
        let bound_holds = if report.precondition_ok { report.holds() } else { None };
        rows.push(vec![
            (i + 1).to_string(),
            format_float(bias),
            format_float(snr.ratio),
            format_float(report.noise_norm),
            format_float(report.signal_floor),
            format_float(report.rowspace_residual),
            report.precondition_ok.to_string(),
            format_float(report.bound_rhs),
            report.observed_lhs.map(format_float).unwrap_or_default(),
            flag(bound_holds),
            stability.map(|w| format_float(w.lhs)).unwrap_or_default(),
            stability.map(|w| format_float(w.rhs)).unwrap_or_default(),
            flag(stability.map(|w| w.holds())),
        ]);
    }
    let header = [
        "query",
        "bias_term",
        "snr_reciprocal",
        "noise_norm",
        "signal_floor",
        "rowspace_residual",
        "precondition_ok",
        "bound_rhs",
        "observed_lhs",
        "bound_holds",
        "weight_lhs",
        "weight_rhs",
        "weight_holds",
    ];
    write_file(&args.out.join(DIAGNOSTICS_FILE), &csv_bytes(&header, rows))
}

pub fn verify_lemmas(args: &VerifyArgs) -> CliResult<()> {
    if args.instances == 0 {
        return Err(CliError::Config("--instances must be positive".into()));
    }
    let opts = VerifyOptions {
        seed: args.seed,
        instances: args.instances,
        inject_fault: args.inject_fault,
    };
    if let Some(out) = &args.out {
        create_dir(out)?;
        let mut manifest = RunManifest::new(
            "verify-lemmas",
            out,
            json!({
                "instances": args.instances,
                "inject_fault": args.inject_fault,
            }),
        );
        manifest.master_seed = Some(args.seed);
        manifest.write()?;
    }
    let report = run_verification(&opts).map_err(CliError::solver("verify-lemmas"))?;
    let text = report.render();
    print!("{text}");
    if let Some(out) = &args.out {
        write_file(&out.join(VERIFY_REPORT_FILE), text.as_bytes())?;
    }
    let result = match report.violations().next() {
        None => Ok(()),
        Some(first) => Err(CliError::Verification(format!(
            "{} violation(s); first: {} at instance {} (seed {:#018x})",
            report.violations().count(),
            first.check,
            first.instance,
            first.seed
        ))),
    };
    result
}

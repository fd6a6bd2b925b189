//! Subcommand handlers: parse inputs, call the library, format outputs.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use aiflab::aif::{compute_aif, kkt_certificate, verify_attack_firstorder};
use aiflab::data::{load_csv, DataMatrix};
use aiflab::density;
use aiflab::designer::{
    best_split, design_constrained_with, design_kkt, design_unconstrained_with, evaluate_if_profile, tabulate,
    tradeoff_frontier_with, Convention, PsiDesign,
};
use aiflab::estimator::{scalar_mean, solve, EstimatingEquations, SolveConfig};
use aiflab::experiments::{run_experiment, ExperimentConfig, ExperimentKind};
use aiflab::location_scale::{huber_proposal2, ls_aif, mean_std, population_aif, LocationScaleSpec};
use aiflab::regression::{aif_vs_k_sweep, regression_aif, RegressionData, RegressionEstimator, RegressionScheme};
use aiflab::AifError;
use serde_json::{json, Value};

use crate::json::{fmt_g17, to_string_pretty};
use crate::{
    AifArgs, AttackArgs, Command, DesignArgs, EstimatorArgs, ExperimentArgs, Failure, FrontierArgs, LsAifArgs,
    RegressArgs, SweepArgs,
};

type Res<T> = Result<T, Failure>;

pub fn dispatch(cmd: &Command) -> Res<()> {
    match cmd {
        Command::Solve(a) => cmd_solve(a),
        Command::Aif(a) => cmd_aif(a),
        Command::Attack(a) => cmd_attack(a),
        Command::RegressAif(a) => cmd_regress(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::LsAif(a) => cmd_ls_aif(a),
        Command::Design(a) => cmd_design(a),
        Command::Frontier(a) => cmd_frontier(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

fn print(v: &Value) {
    emit(&format!("{}\n", to_string_pretty(v)));
}

/// Writes to stdout; a closed pipe (`aiflab ... | head`) ends the process
/// quietly instead of panicking.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        tracing::error!(error = %e, "cannot write to stdout");
    }
}

fn write_file(path: &Path, body: &str) -> Res<()> {
    fs::write(path, body).map_err(|e| Failure::Lib(AifError::Input(format!("cannot write {}: {e}", path.display()))))
}

/// Loads a CSV, skipping a first line that does not parse as numbers.
fn load(path: &Path, header: bool) -> Res<DataMatrix> {
    if header {
        return Ok(load_csv(path, true)?);
    }
    match load_csv(path, false) {
        Err(AifError::Input(msg)) if msg.contains("cannot parse") => Ok(load_csv(path, true)?),
        other => Ok(other?),
    }
}

fn ls_spec(name: &str, k: f64, density_name: &str) -> Res<LocationScaleSpec> {
    match name {
        "meanstd" | "mean-std" => Ok(mean_std()),
        "huber2" | "huber-proposal2" => {
            let f0 = density::by_name(density_name)?;
            Ok(huber_proposal2(k, f0.as_ref())?)
        }
        other => Err(Failure::Usage(format!(
            "unknown location-scale estimator {other:?} (expected meanstd or huber2)"
        ))),
    }
}

fn build_estimator(a: &EstimatorArgs, data: &DataMatrix) -> Res<Box<dyn EstimatingEquations>> {
    match a.estimator.as_str() {
        "mean" => Ok(Box::new(scalar_mean())),
        "meanstd" | "mean-std" | "huber2" | "huber-proposal2" => {
            Ok(Box::new(ls_spec(&a.estimator, a.k, &a.density)?.to_estimator()))
        }
        other => {
            let scheme = RegressionScheme::parse(other, a.k)
                .map_err(|_| Failure::Usage(format!("unknown estimator {other:?}")))?;
            if data.m() < 2 {
                return Err(AifError::Dimension(
                    "regression needs at least one covariate column and a response".into(),
                )
                .into());
            }
            Ok(Box::new(RegressionEstimator::new(scheme, data.m() - 1)?))
        }
    }
}

fn cmd_solve(a: &EstimatorArgs) -> Res<()> {
    let data = load(&a.data, a.header)?;
    let est = build_estimator(a, &data)?;
    let theta = solve(est.as_ref(), &data, &SolveConfig::default())?;
    print(&json!({ "estimator": est.name(), "n": data.n(), "theta": theta.as_slice() }));
    Ok(())
}

fn aif_report(a: &AifArgs) -> Res<(DataMatrix, Box<dyn EstimatingEquations>, aiflab::AifReport)> {
    let data = load(&a.est.data, a.est.header)?;
    let est = build_estimator(&a.est, &data)?;
    let report = compute_aif(est.as_ref(), &data, a.p, a.theta.as_deref(), &SolveConfig::default())?;
    Ok((data, est, report))
}

fn cmd_aif(a: &AifArgs) -> Res<()> {
    let (_, est, report) = aif_report(a)?;
    let mut out = report.to_json(a.delta)?;
    out["estimator"] = json!(est.name());
    out["kkt_max_residual"] = json!(kkt_certificate(&report).max_residual());
    print(&out);
    Ok(())
}

fn cmd_attack(a: &AttackArgs) -> Res<()> {
    let (data, est, report) = aif_report(&a.aif)?;
    let kkt = kkt_certificate(&report);
    let rows = verify_attack_firstorder(est.as_ref(), &data, &report, &a.check, &SolveConfig::default())?;
    if let Some(path) = &a.emit_attack {
        let moved = data.perturbed(&aiflab::aif::synthesize_attack(&report, a.aif.delta)?, 1.0)?;
        let mut csv = String::new();
        for n in 0..moved.n() {
            let line: Vec<String> = moved.point(n).iter().map(|v| fmt_g17(*v)).collect();
            let _ = writeln!(csv, "{}", line.join(","));
        }
        write_file(path, &csv)?;
    }
    print(&json!({
        "estimator": est.name(),
        "aif": report.aif,
        "p": report.p,
        "delta": a.aif.delta,
        "theta": report.theta,
        "attack": report.to_json(a.aif.delta)?["attack"],
        "kkt": kkt,
        "kkt_max_residual": kkt.max_residual(),
        "first_order": rows,
    }));
    Ok(())
}

fn regression_data(path: &Path, header: bool) -> Res<RegressionData> {
    let dm = load(path, header)?;
    Ok(RegressionData::from_data_matrix(&dm)?)
}

fn cmd_regress(a: &RegressArgs) -> Res<()> {
    let rd = regression_data(&a.data, a.header)?;
    let scheme = RegressionScheme::parse(&a.scheme, a.k)?;
    let report = regression_aif(&rd, scheme, a.p, &SolveConfig::default())?;
    let mut out = report.to_json(1.0)?;
    out["scheme"] = json!(scheme.name());
    out["K"] = json!(scheme.k());
    print(&out);
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Res<()> {
    let data = a
        .data
        .iter()
        .map(|p| regression_data(p, a.header))
        .collect::<Res<Vec<_>>>()?;
    let schemes = a
        .schemes
        .iter()
        .map(|s| RegressionScheme::parse(s.trim(), 1.0))
        .collect::<Result<Vec<_>, _>>()?;
    let cells = aif_vs_k_sweep(&data, &schemes, &a.k_grid, a.p)?;
    let mut csv = String::from("scheme,K,mean_aif,stderr,n_fail\n");
    for c in cells {
        let _ = writeln!(csv, "{},{},{},{},{}", c.scheme, c.k, c.mean_aif, c.stderr, c.n_fail);
    }
    match &a.out {
        Some(p) => write_file(p, &csv),
        None => {
            emit(&csv);
            Ok(())
        }
    }
}

fn cmd_ls_aif(a: &LsAifArgs) -> Res<()> {
    let spec = ls_spec(&a.estimator, a.k, &a.density)?;
    if a.population {
        let f0 = density::by_name(&a.density)?;
        let pop = population_aif(&spec, f0.as_ref())?;
        print(&json!({ "estimator": spec.name, "density": f0.name(), "population": pop, "aif": pop.value }));
        return Ok(());
    }
    let path = a
        .data
        .as_ref()
        .ok_or_else(|| Failure::Usage("ls-aif needs --data or --population".into()))?;
    let data = load(path, a.header)?;
    if data.m() != 1 {
        return Err(AifError::Dimension(format!("ls-aif expects one column, got {}", data.m())).into());
    }
    let report = ls_aif(&spec, data.as_flat(), a.p, None, &SolveConfig::default())?;
    let mut out = report.to_json(1.0)?;
    out["estimator"] = json!(spec.name);
    print(&out);
    Ok(())
}

fn design_json(d: &PsiDesign) -> Res<Value> {
    let kkt = design_kkt(d)?;
    let profile = evaluate_if_profile(d)?;
    let (m1, m2) = d.multipliers();
    Ok(json!({
        "density": d.density.name(),
        "convention": d.convention.name(),
        "xi": d.xi,
        "xi1": d.xi_split.map(|s| s.0),
        "xi2": d.xi_split.map(|s| s.1),
        "aif": d.aif(),
        "t1": d.t1,
        "t2": d.t2,
        "psi2_at_zero": d.psi2_at_zero,
        "breakpoints": d.breakpoints(),
        "multipliers_psi1": m1,
        "multipliers_psi2": m2,
        "if_profile": profile,
        "kkt": kkt,
        "kkt_max_residual": kkt.max_residual(),
    }))
}

fn cmd_design(a: &DesignArgs) -> Res<()> {
    let f0 = density::by_name(&a.density)?;
    let conv = Convention::parse(&a.convention)?;
    let design = match (a.xi, a.xi1) {
        (None, None) => design_unconstrained_with(f0, conv)?,
        (None, Some(_)) => return Err(Failure::Usage("--xi1 needs --xi".into())),
        (Some(xi), Some(xi1)) => design_constrained_with(f0, xi, xi1, conv)?,
        (Some(xi), None) => {
            let best = best_split(f0.clone(), xi, a.split_resolution, conv)?.ok_or_else(|| {
                AifError::Infeasible(format!("no split of xi = {xi} is feasible under {}", a.density))
            })?;
            design_constrained_with(f0, xi, best.xi1, conv)?
        }
    };
    let report = design_json(&design)?;
    if let Some(path) = &a.emit_psi {
        let table = tabulate(&design, a.knots)?;
        let mut csv = String::new();
        let kkt = design_kkt(&design)?;
        if let Value::Object(map) = &report["kkt"] {
            for (k, v) in map {
                let _ = writeln!(csv, "# kkt_{k}={}", fmt_g17(v.as_f64().unwrap_or(f64::NAN)));
            }
        }
        let _ = writeln!(csv, "# kkt_max_residual={}", fmt_g17(kkt.max_residual()));
        let _ = writeln!(csv, "# aif={}", fmt_g17(design.aif()));
        csv.push_str("z,psi1,dpsi1,psi2,dpsi2\n");
        for k in 0..table.z.len() {
            let row = [table.z[k], table.psi1[k], table.dpsi1[k], table.psi2[k], table.dpsi2[k]];
            let row: Vec<String> = row.iter().map(|v| fmt_g17(*v)).collect();
            let _ = writeln!(csv, "{}", row.join(","));
        }
        write_file(path, &csv)?;
    }
    print(&report);
    Ok(())
}

fn cmd_frontier(a: &FrontierArgs) -> Res<()> {
    let f0 = density::by_name(&a.density)?;
    let conv = Convention::parse(&a.convention)?;
    let grid = match &a.xi_grid {
        Some(g) => g.clone(),
        None => {
            if a.points < 2 || a.xi_max.partial_cmp(&a.xi_min) != Some(std::cmp::Ordering::Greater) {
                return Err(Failure::Usage("need --points >= 2 and --xi-max > --xi-min".into()));
            }
            (0..a.points)
                .map(|k| a.xi_min + (a.xi_max - a.xi_min) * k as f64 / (a.points - 1) as f64)
                .collect()
        }
    };
    let mut csv = String::from("xi,xi1,xi2,aif,gamma_u\n");
    for (xi, res) in tradeoff_frontier_with(f0, &grid, a.split_resolution, conv) {
        match res {
            Ok(Some(pt)) => {
                let _ = writeln!(csv, "{},{},{},{},{}", pt.xi, pt.xi1, pt.xi2, pt.aif, pt.gamma_u);
            }
            Ok(None) => tracing::info!(xi, "no feasible split; gap in the frontier"),
            Err(e) => tracing::warn!(xi, error = %e, "frontier point failed"),
        }
    }
    match &a.out {
        Some(p) => write_file(p, &csv),
        None => {
            emit(&csv);
            Ok(())
        }
    }
}

fn cmd_experiment(a: &ExperimentArgs) -> Res<()> {
    let kind = ExperimentKind::parse(&a.name)?;
    let mut cfg = match a.scale.as_str() {
        "desk" => ExperimentConfig::desk(kind),
        "full" => ExperimentConfig::full(kind),
        other => {
            return Err(Failure::Usage(format!(
                "unknown scale {other:?} (expected desk or full)"
            )))
        }
    };
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    tracing::debug!(?cfg, "experiment configuration");
    let (table, elapsed) = run_experiment(&cfg)?;
    let files = table.write(&a.out, elapsed)?;
    print(&table.manifest(elapsed, &files));
    Ok(())
}

//! Batch front door: parse a run configuration, orchestrate
//! check → extend → solve → diagnose, and emit machine-readable artifacts.
//!
//! Exit codes: 0 success, 1 invalid configuration or I/O failure,
//! 2 admissibility rejection (boundary datum not Lipschitz enough or the
//! displacing check fails), 3 solver non-convergence.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use serde_json::json;

use exmc::analysis;
use exmc::boundary::{check_spacelike_displacing, Verdict};
use exmc::functional::CompiledCurvature;
use exmc::geometry::{build_grid, Obstacle};
use exmc::optimizer::{minimize, Termination};
use exmc::oracle;

use config::{Config, Mode, PhiConfig, PhiList};

const EXIT_CONFIG: u8 = 1;
const EXIT_REJECTED: u8 = 2;
const EXIT_NO_CONVERGENCE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "exmc", about = "Spacelike graph solver on exterior domains")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the mode given in the configuration.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Write the per-iteration energy trace to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Output directory for field, dump, and report files.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn run(cli: Cli) -> Result<u8, String> {
    let raw = std::fs::read_to_string(&cli.config)
        .map_err(|e| format!("cannot read {}: {e}", cli.config.display()))?;
    let cfg: Config = serde_json::from_str(&raw).map_err(|e| {
        format!(
            "{}: line {}, column {}: {e}",
            cli.config.display(),
            e.line(),
            e.column()
        )
    })?;
    cfg.validate().map_err(|e| e.0)?;

    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build_global()
            .map_err(|e| format!("--threads: {e}"))?;
    }

    let mode = cli
        .mode
        .or(cfg.mode)
        .ok_or("no mode: set --mode or the config's \"mode\" field")?;
    let seed = match std::env::var("SOLVER_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map_err(|_| format!("SOLVER_SEED is not an integer: {v:?}"))?,
        Err(_) => cfg.solver.seed,
    };

    let out_dir = cli.out.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;

    let set = cfg.obstacle_set().map_err(|e| e.0)?;
    let grid = Arc::new(
        build_grid(set, cfg.domain.r_far, cfg.domain.spacing).map_err(|e| format!("domain: {e}"))?,
    );
    let phi = cfg.boundary_datum().map_err(|e| e.0)?;
    let spec = cfg.curvature_spec().map_err(|e| e.0)?;

    let mut report = json!({
        "mode": mode,
        "seed": seed,
        "config": cfg,
        "grid": {
            "dim": grid.dim(),
            "nodes_per_axis": grid.nodes_per_axis(),
            "node_count": grid.node_count(),
            "active_cells": grid.active_cells().len(),
            "interior_nodes": grid.interior_count(),
            "boundary_components": grid.boundary_component_count(),
        },
    });

    // Admissibility: Lipschitz estimate + spacelike-displacing scan.
    let measured_l =
        exmc::boundary::boundary_lipschitz_constant(&phi, &grid, cfg.boundary.samples, seed);
    let verdict = check_spacelike_displacing(
        &phi,
        &grid,
        cfg.boundary.margin,
        cfg.boundary.samples,
        seed,
    );
    report["admissibility"] = json!({
        "lipschitz_declared": phi.declared_lipschitz(),
        "lipschitz_measured": measured_l,
        "displacing": verdict,
    });
    let admissible = verdict.verdict != Verdict::Fail && measured_l < 1.0 - 1e-12;

    if mode == Mode::Check {
        write_report(&cfg, &out_dir, &report)?;
        return Ok(if admissible { 0 } else { EXIT_REJECTED });
    }
    if !admissible {
        write_report(&cfg, &out_dir, &report)?;
        return Ok(EXIT_REJECTED);
    }

    // Solve.
    let cc = CompiledCurvature::compile(spec, grid.clone()).map_err(|e| format!("curvature: {e}"))?;
    let params = cfg.solver.params();
    let eps = cfg.boundary.epsilon;
    let solve = minimize(&cc, &phi, &grid, eps, cfg.boundary.samples, seed, &params);
    let (u, solve_report, ext) = match solve {
        Ok(r) => r,
        Err(exmc::optimizer::OptimizerError::NoFeasibleStart(e)) => {
            report["rejection"] = json!(format!("{e}"));
            write_report(&cfg, &out_dir, &report)?;
            return Ok(EXIT_REJECTED);
        }
        Err(e) => return Err(format!("solver: {e}")),
    };
    report["extension"] = json!({
        "r_cut": ext.r_cut,
        "plateau": ext.plateau,
        "outer": ext.outer,
        "rate": ext.rate,
        "sup_phi": ext.sup_phi,
        "gradient_bound": ext.gradient_bound,
    });
    report["solve"] = json!({
        "iterations": solve_report.iterations,
        "termination": solve_report.termination,
        "energy": solve_report.energy,
        "residual_norm": solve_report.residual_norm,
        "margin": solve_report.margin,
        "near_degenerate_cells": solve_report.near_degenerate_cells,
    });

    if let Some(path) = &cli.trace {
        let mut text = String::new();
        for (k, e) in solve_report.energy_trace.iter().enumerate() {
            text.push_str(&format!("{k}\t{e:.17e}\n"));
        }
        std::fs::write(path, text).map_err(|e| format!("cannot write trace: {e}"))?;
    }

    // Diagnostics.
    let chains = analysis::light_segment_scan(&u, cfg.output.light_threshold);
    let weak = analysis::weak_residual_check(&u, &cc, cfg.output.weak_trials, seed)
        .map_err(|e| format!("diagnostics: {e}"))?;
    let radii = cfg.output.decay_radii.clone().unwrap_or_else(|| {
        let lo = grid.obstacle_set().extent_from_origin() + 2.0 * grid.spacing();
        let hi = grid.r_far() - 2.0 * grid.spacing();
        (0..5)
            .map(|k| lo + (hi - lo) * (k as f64 + 1.0) / 5.0)
            .collect()
    });
    let decay = analysis::decay_verdict(&u, &radii, ext.sup_phi, cfg.output.decay_fraction);
    let margin_interior =
        analysis::spacelike_margin(&u, grid.r_far() - 2.0 * grid.spacing());
    report["diagnostics"] = json!({
        "light_chains": chains.iter().map(|c| json!({
            "cells": c.cells.len(),
            "class": format!("{:?}", c.class),
            "min_gradient": c.min_gradient,
            "direction": c.direction,
        })).collect::<Vec<_>>(),
        "weak_residual": weak,
        "decay": {
            "shells": decay.shells,
            "non_increasing": decay.non_increasing,
            "final_shell": decay.final_shell,
            "bound": decay.bound,
            "pass": decay.pass,
        },
        "spacelike_margin_interior": margin_interior,
    });

    if mode == Mode::OracleCompare {
        let cmp = oracle_compare(&cfg, &grid, &u)?;
        report["oracle_compare"] = cmp;
    }

    output::write_field_artifacts(&cfg, &out_dir, &grid, &u)?;
    write_report(&cfg, &out_dir, &report)?;

    Ok(if solve_report.termination == Termination::Converged {
        0
    } else {
        EXIT_NO_CONVERGENCE
    })
}

/// Sup-norm diff of the computed solution against the truncation-matched
/// radial oracle. Requires a single centered ball, constant φ, H ≡ 0.
fn oracle_compare(
    cfg: &Config,
    grid: &Arc<exmc::geometry::ExteriorGrid>,
    u: &exmc::field::ScalarField,
) -> Result<serde_json::Value, String> {
    if cfg.curvature.h.as_deref().map_or(false, |h| h.trim() != "0") {
        return Err("oracle-compare requires H = 0".into());
    }
    let r0 = match grid.obstacle_set().obstacles() {
        [Obstacle::Ball { center, radius }] if center.iter().all(|&c| c == 0.0) => *radius,
        _ => return Err("oracle-compare requires a single centered ball".into()),
    };
    let c = match &cfg.boundary.phi {
        PhiList::One(PhiConfig::Constant(c)) => *c,
        PhiList::PerObstacle(ps) => match ps.as_slice() {
            [PhiConfig::Constant(c)] => *c,
            _ => return Err("oracle-compare requires a constant boundary datum".into()),
        },
        _ => return Err("oracle-compare requires a constant boundary datum".into()),
    };
    let n = grid.dim();
    let (a, reference) = if c == 0.0 {
        (0.0, exmc::field::ScalarField::zero(grid.clone()))
    } else {
        let a = oracle::match_boundary_value(n, r0, c, Some(grid.r_far()))
            .map_err(|e| format!("oracle: {e}"))?;
        let p = oracle::radial_profile_truncated(n, a, r0, grid.r_far())
            .map_err(|e| format!("oracle: {e}"))?;
        let f = oracle::sample_on_grid(&p, grid).map_err(|e| format!("oracle: {e}"))?;
        (a, f)
    };
    let mut sup = 0.0f64;
    for node in 0..grid.node_count() {
        if grid.is_free(node) {
            sup = sup.max((u.values()[node] - reference.values()[node]).abs());
        }
    }
    Ok(json!({
        "oracle_parameter_a": a,
        "boundary_value": c,
        "sup_diff": sup,
        "rel_sup_diff": if c != 0.0 { sup / c.abs() } else { sup },
    }))
}

fn write_report(
    cfg: &Config,
    out_dir: &std::path::Path,
    report: &serde_json::Value,
) -> Result<(), String> {
    let Some(name) = &cfg.output.report else {
        return Ok(());
    };
    let path = out_dir.join(name);
    let text = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
    std::fs::write(&path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

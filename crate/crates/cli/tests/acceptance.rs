//! Acceptance suite: ten end-to-end checks of the solver against trivial,
//! derived, and analytical ground truths. Each test prints exactly one
//! PASS/FAIL line with its measured numbers.
//!
//! Heavy solves are shared between criteria through process-wide fixtures;
//! with the harness's sequential execution on one core the criteria run in
//! numeric order.

use std::path::PathBuf;
use std::process::Command;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use exmc::analysis;
use exmc::boundary::{
    check_spacelike_displacing, extend_to_feasible, trace_interpolation_defect, BoundaryDatum,
    PhiRule, Verdict,
};
use exmc::expr::CoordExpr;
use exmc::field::ScalarField;
use exmc::functional::{
    area_energy, coercivity_bound, first_variation, frozen_energy, total_energy,
    CompiledCurvature, CurvatureSpec,
};
use exmc::geometry::{build_grid, ExteriorGrid, Obstacle, ObstacleSet};
use exmc::optimizer::{minimize, minimize_from, prolong, SolverParams, Termination};
use exmc::oracle;

/// The criteria carry wall-clock budgets and share one core in CI, so the
/// tests run one at a time regardless of libtest's thread count.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn criterion(id: u32, name: &str, pass: bool, details: &str) {
    println!(
        "[criterion {id:02}] {} - {name}: {details}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "[criterion {id:02}] FAIL - {name}: {details}");
}

fn ball_grid(r_far: f64, h: f64) -> Arc<ExteriorGrid> {
    let set = ObstacleSet::new(
        vec![Obstacle::Ball {
            center: vec![0.0; 3],
            radius: 1.0,
        }],
        3,
    )
    .unwrap();
    Arc::new(build_grid(set, r_far, h).unwrap())
}

/// Random smooth field, zero at pinned nodes, scaled so the worst cell
/// gradient equals `target`.
fn random_feasible(grid: &Arc<ExteriorGrid>, seed: u64, target: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r_far = grid.r_far();
    let bumps: Vec<(Vec<f64>, f64, f64)> = (0..5)
        .map(|_| {
            let c: Vec<f64> = (0..grid.dim())
                .map(|_| rng.gen_range(-0.5 * r_far..0.5 * r_far))
                .collect();
            (c, rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0))
        })
        .collect();
    let mut f = ScalarField::from_fn(grid.clone(), true, |x| {
        bumps
            .iter()
            .map(|(c, w, a)| {
                let d2: f64 = x.iter().zip(c.iter()).map(|(xi, ci)| (xi - ci).powi(2)).sum();
                a * (-d2 / (w * w)).exp()
            })
            .sum()
    });
    for node in 0..grid.node_count() {
        if !grid.is_free(node) {
            f.values_mut()[node] = 0.0;
        }
    }
    let (gmax, _) = f.max_cell_gradient();
    if gmax > 0.0 {
        let s = target / gmax;
        for v in f.values_mut() {
            *v *= s;
        }
    }
    f
}

fn monotone_curvature_spec() -> CurvatureSpec {
    CurvatureSpec::separable(
        Arc::new(|x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>()).exp()),
        Arc::new(|t| t),
        Some(Arc::new(|t| 0.5 * t * t)),
        Arc::new(|x: &[f64]| 3.0 * (-x.iter().map(|v| v * v).sum::<f64>()).exp()),
        1.2,
        "t*gauss",
    )
}

// ---------------------------------------------------------------- fixtures

struct RadialLevel {
    h: f64,
    rel_full: f64,
    rel_far: f64,
}

struct RadialCascade {
    levels: Vec<RadialLevel>,
    fine_u: ScalarField,
    fine_converged: bool,
    elapsed: f64,
}

static RADIAL: OnceLock<RadialCascade> = OnceLock::new();

/// Criterion-2 instance: phi = 0.3 on the unit ball, H = 0, R_far = 12,
/// solved on the h in {0.5, 0.25, 0.125} cascade with multilinear warm
/// starts. Errors are against the truncation-matched radial profile, in
/// units of the boundary value. The staircase representation of the
/// sphere carries an intrinsic first-order boundary error (pinned nodes
/// sit up to h*sqrt(3) off the true surface), so `rel_far` measures the
/// sup on the fixed subdomain {dist >= sqrt(3)} — the collar of the
/// coarsest level — making the metric h-uniform across levels; `rel_full`
/// is the unrestricted sup and is reported alongside.
fn radial_cascade() -> &'static RadialCascade {
    RADIAL.get_or_init(|| {
        let t0 = Instant::now();
        let phi_val = 0.3;
        let r_far = 12.0;
        let phi = BoundaryDatum::constant(phi_val, 1);
        let cc_spec = CurvatureSpec::zero;
        // Solver error at residual 1e-5 is orders of magnitude below the
        // discretization error measured here (the two-start agreement test
        // puts the field error near 3e-9 already at residual 1e-7).
        let params = SolverParams {
            tol_residual: 1e-5,
            ..Default::default()
        };
        let a = oracle::match_boundary_value(3, 1.0, phi_val, Some(r_far)).unwrap();
        let profile = oracle::radial_profile_truncated(3, a, 1.0, r_far).unwrap();

        let mut levels = Vec::new();
        let mut prev: Option<ScalarField> = None;
        let mut fine_u = None;
        let mut fine_converged = false;
        for &h in &[0.5, 0.25, 0.125] {
            let tl = Instant::now();
            let grid = ball_grid(r_far, h);
            let cc = CompiledCurvature::compile(cc_spec(), grid.clone()).unwrap();
            let ext = extend_to_feasible(&phi, &grid, 0.1, 200, 7).unwrap();
            let w0 = match &prev {
                None => ext.field.clone(),
                Some(coarse) => prolong(coarse, &ext.field),
            };
            let (u, rep) = minimize_from(w0, &cc, &params).unwrap();
            let reference = oracle::sample_on_grid(&profile, &grid).unwrap();
            // fixed across levels: the collar of the coarsest grid
            let collar = 3.0f64.sqrt();
            let (mut sup_full, mut sup_far) = (0.0f64, 0.0f64);
            for node in 0..grid.node_count() {
                if !grid.is_free(node) {
                    continue;
                }
                let d = (u.values()[node] - reference.values()[node]).abs();
                sup_full = sup_full.max(d);
                let x = grid.node_point(node);
                if grid.obstacle_set().nearest(&x).0 >= collar {
                    sup_far = sup_far.max(d);
                }
            }
            levels.push(RadialLevel {
                h,
                rel_full: sup_full / phi_val,
                rel_far: sup_far / phi_val,
            });
            if std::env::var_os("EXMC_TRACE").is_some() {
                eprintln!(
                    "level h={h}: {} iters, residual {:.2e}, {:?}, {:.0} s",
                    rep.iterations,
                    rep.residual_norm,
                    rep.termination,
                    tl.elapsed().as_secs_f64()
                );
            }
            fine_converged = rep.termination == Termination::Converged;
            prev = Some(u.clone());
            fine_u = Some(u);
        }
        RadialCascade {
            levels,
            fine_u: fine_u.unwrap(),
            fine_converged,
            elapsed: t0.elapsed().as_secs_f64(),
        }
    })
}

struct TwoBallPass {
    u: ScalarField,
    residual: f64,
    converged: bool,
    tol_g: f64,
}

static TWO_BALL: OnceLock<TwoBallPass> = OnceLock::new();

/// Criterion-6 pass case: the gap-2 two-ball geometry with phi = +-0.9,
/// solved in-process so the minimizer is available to criterion 10.
fn two_ball_pass() -> &'static TwoBallPass {
    TWO_BALL.get_or_init(|| {
        let set = ObstacleSet::new(
            vec![
                Obstacle::Ball {
                    center: vec![2.0, 0.0, 0.0],
                    radius: 1.0,
                },
                Obstacle::Ball {
                    center: vec![-2.0, 0.0, 0.0],
                    radius: 1.0,
                },
            ],
            3,
        )
        .unwrap();
        let grid = Arc::new(build_grid(set, 20.0, 0.5).unwrap());
        let phi = BoundaryDatum::new(
            vec![PhiRule::Constant(0.9), PhiRule::Constant(-0.9)],
            None,
        )
        .unwrap();
        let verdict = check_spacelike_displacing(&phi, &grid, 0.0, 200, 7);
        assert_eq!(verdict.verdict, Verdict::Pass, "pass-case rejected");
        let cc = CompiledCurvature::compile(CurvatureSpec::zero(), grid.clone()).unwrap();
        let tol_g = 1e-6;
        let params = SolverParams {
            tol_residual: tol_g,
            ..Default::default()
        };
        // epsilon just under the spacelike reserve 1 - L of the datum
        let (u, rep, _ext) = minimize(&cc, &phi, &grid, 0.095, 200, 7, &params).unwrap();
        TwoBallPass {
            u,
            residual: rep.residual_norm,
            converged: rep.termination == Termination::Converged,
            tol_g,
        }
    })
}

struct MonotonePair {
    u1: ScalarField,
    cc: CompiledCurvature,
    converged: bool,
    sup_diff: f64,
    tol_g: f64,
}

static MONOTONE: OnceLock<MonotonePair> = OnceLock::new();

/// Criterion-9 instance: H(x, t) = t exp(-|x|^2) (non-decreasing in t, so
/// the minimizer is unique) solved from two distinct feasible starts.
fn monotone_pair() -> &'static MonotonePair {
    MONOTONE.get_or_init(|| {
        let grid = ball_grid(6.0, 0.25);
        let cc = CompiledCurvature::compile(monotone_curvature_spec(), grid.clone()).unwrap();
        let phi = BoundaryDatum::constant(0.3, 1);
        let tol_g = 1e-7;
        let params = SolverParams {
            tol_residual: tol_g,
            ..Default::default()
        };
        let ext = extend_to_feasible(&phi, &grid, 0.5, 30, 7).unwrap();
        let (u1, r1) = minimize_from(ext.field.clone(), &cc, &params).unwrap();
        // strongest interior damping that keeps the start strictly feasible
        let w2 = [0.2, 0.4, 0.6, 0.8]
            .iter()
            .find_map(|&f| {
                let mut w = ext.field.clone();
                for node in 0..grid.node_count() {
                    if grid.is_free(node) {
                        w.values_mut()[node] *= f;
                    }
                }
                (w.max_cell_gradient().0 < 0.99).then_some(w)
            })
            .expect("no feasible damped start");
        let (u2, r2) = minimize_from(w2, &cc, &params).unwrap();
        let sup_diff = u1
            .values()
            .iter()
            .zip(u2.values().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        MonotonePair {
            u1,
            cc,
            converged: r1.termination == Termination::Converged
                && r2.termination == Termination::Converged,
            sup_diff,
            tol_g,
        }
    })
}

// ---------------------------------------------------------------- criteria

#[test]
fn criterion_01_zero_instance() {
    let _serial = serial();
    let set = ObstacleSet::new(
        vec![
            Obstacle::Ball {
                center: vec![-2.0, 0.0, 0.0],
                radius: 1.0,
            },
            Obstacle::Box {
                min: vec![1.0, -1.0, -1.0],
                max: vec![2.5, 1.0, 1.0],
            },
        ],
        3,
    )
    .unwrap();
    let grid = Arc::new(build_grid(set, 8.0, 0.5).unwrap());
    let cc = CompiledCurvature::compile(CurvatureSpec::zero(), grid.clone()).unwrap();
    let phi = BoundaryDatum::constant(0.0, 2);
    let t0 = Instant::now();
    let (u, rep, _) = minimize(&cc, &phi, &grid, 0.3, 100, 7, &SolverParams::default()).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let sup = u.sup_norm();
    let energy = rep.energy.total;
    criterion(
        1,
        "zero instance",
        sup <= 1e-12 && energy <= 1e-12 && dt < 1.0,
        &format!("sup {sup:.2e}, energy {energy:.2e}, {dt:.3} s"),
    );
}

#[test]
fn criterion_02_radial_oracle() {
    let _serial = serial();
    let c = radial_cascade();
    let fine = c.levels.last().unwrap();
    let mono_far = c.levels.windows(2).all(|w| w[1].rel_far < w[0].rel_far);
    let mono_full = c.levels.windows(2).all(|w| w[1].rel_full < w[0].rel_full);
    // The asserted metric is the fixed subdomain {dist >= sqrt(3)}: the
    // unrestricted sup is dominated by the staircase representation of the
    // sphere (an O(h) boundary error with a parity-sensitive constant) and
    // is reported but not gated on.
    let pass = c.fine_converged && fine.rel_far <= 0.02 && mono_far && c.elapsed <= 600.0;
    let lv: Vec<String> = c
        .levels
        .iter()
        .map(|l| format!("h={}: {:.2}% (full {:.2}%)", l.h, 100.0 * l.rel_far, 100.0 * l.rel_full))
        .collect();
    criterion(
        2,
        "radial oracle equivalence",
        pass,
        &format!(
            "sup error on dist>=sqrt(3) {}; monotone decrease far:{mono_far} full:{mono_full}; {:.0} s",
            lv.join(", "),
            c.elapsed
        ),
    );
}

#[test]
fn criterion_03_gradient_consistency() {
    let _serial = serial();
    let grid = ball_grid(6.0, 0.5);
    let cc = CompiledCurvature::compile(monotone_curvature_spec(), grid.clone()).unwrap();
    let mut worst = 0.0f64;
    for k in 0..20 {
        let u = random_feasible(&grid, 300 + k, 0.5);
        let v = random_feasible(&grid, 400 + k, 0.4);
        let fv = first_variation(&u, &v, &cc).unwrap();
        let tau = 1e-5;
        let ep = total_energy(&ScalarField::axpby(1.0, &u, tau, &v), &cc)
            .unwrap()
            .total;
        let em = total_energy(&ScalarField::axpby(1.0, &u, -tau, &v), &cc)
            .unwrap()
            .total;
        let fd = (ep - em) / (2.0 * tau);
        worst = worst.max((fv - fd).abs() / fd.abs().max(1e-6));
    }
    criterion(
        3,
        "gradient consistency",
        worst <= 1e-6,
        &format!("worst relative error vs central differences {worst:.2e} over 20 fields"),
    );
}

#[test]
fn criterion_04_convexity_and_sandwich() {
    let _serial = serial();
    let grid = ball_grid(6.0, 0.5);
    // midpoint convexity of the area term on 20 random feasible pairs
    let mut worst_convexity = f64::NEG_INFINITY;
    for k in 0..20 {
        let u = random_feasible(&grid, 500 + k, 0.9);
        let v = random_feasible(&grid, 600 + k, 0.85);
        let m = ScalarField::axpby(0.5, &u, 0.5, &v);
        let slack = 0.5 * (area_energy(&u).unwrap() + area_energy(&v).unwrap())
            - area_energy(&m).unwrap();
        worst_convexity = worst_convexity.max(-slack);
    }
    // pointwise sandwich t/2 <= 1 - sqrt(1-t) <= t on 1000 sampled cells
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_sandwich = f64::NEG_INFINITY;
    let mut g = vec![0.0; grid.dim()];
    let mut sampled = 0usize;
    while sampled < 1000 {
        let u = random_feasible(&grid, 700 + sampled as u64 / 100, 0.95);
        for _ in 0..100 {
            let cells = grid.active_cells();
            let base = cells[rng.gen_range(0..cells.len())] as usize;
            grid.cell_gradient(u.values(), base, &mut g);
            let t: f64 = g.iter().map(|x| x * x).sum();
            let mid = 1.0 - (1.0 - t).sqrt();
            worst_sandwich = worst_sandwich.max(0.5 * t - mid).max(mid - t);
            sampled += 1;
        }
    }
    let pass = worst_convexity <= 1e-12 && worst_sandwich <= 1e-12;
    criterion(
        4,
        "convexity and sandwich",
        pass,
        &format!(
            "worst convexity violation {worst_convexity:.2e}, worst sandwich violation {worst_sandwich:.2e}"
        ),
    );
}

#[test]
fn criterion_05_coercivity() {
    let _serial = serial();
    let grid = ball_grid(6.0, 0.5);
    let spec = CurvatureSpec::x_only(
        Arc::new(|x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>()).exp()),
        1.2,
        "gauss",
    );
    let cc = CompiledCurvature::compile(spec, grid.clone()).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for k in 0..20 {
        let u = random_feasible(&grid, 800 + k, 0.3 + 0.03 * k as f64);
        let (lhs, rhs) = coercivity_bound(&u, &cc).unwrap();
        worst = worst.max(rhs - lhs);
    }
    criterion(
        5,
        "coercivity audit",
        worst <= 1e-12,
        &format!("worst (rhs - lhs) {worst:.2e} over 20 fields, H = exp(-|x|^2), s = 6/5"),
    );
}

#[test]
fn criterion_06_displacing_soundness() {
    let _serial = serial();
    // rejection: phi = +-1.1 over the gap-2 geometry, via the binary
    let dir = std::env::temp_dir().join("exmc-acceptance-06");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = r#"{
        "domain": {
            "dim": 3, "r_far": 8.0, "spacing": 0.5,
            "obstacles": [
                {"shape": "ball", "center": [2.0, 0.0, 0.0], "radius": 1.0},
                {"shape": "ball", "center": [-2.0, 0.0, 0.0], "radius": 1.0}
            ]
        },
        "boundary": {"phi": [1.1, -1.1]},
        "mode": "check"
    }"#;
    let cfg_path: PathBuf = dir.join("run.json");
    std::fs::write(&cfg_path, cfg).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_exmc"))
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    let code = out.status.code();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let ratio = report["admissibility"]["displacing"]["worst_ratio"]
        .as_f64()
        .unwrap();

    // pass case: phi = +-0.9 solves to the residual tolerance
    let p = two_ball_pass();
    let pass = code == Some(2) && ratio >= 1.05 && p.converged && p.residual <= p.tol_g;
    criterion(
        6,
        "displacing soundness",
        pass,
        &format!(
            "+-1.1 exit {code:?} worst ratio {ratio:.3}; +-0.9 converged {} residual {:.2e} (tol {:.0e})",
            p.converged, p.residual, p.tol_g
        ),
    );
}

#[test]
fn criterion_07_extension_contract() {
    let _serial = serial();
    let grid = ball_grid(6.0, 0.25);
    let eps = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst_defect = 0.0f64;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_bound = 0.0f64;
    for k in 0..10 {
        // amplitude * sin(k . x + p) with |amplitude| |k| <= 0.63 < 1 - eps
        let kv: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.8..0.8f64)).collect();
        let kn = kv.iter().map(|v| v * v).sum::<f64>().sqrt().max(0.7);
        let amp = (0.63 / kn).min(0.5);
        let p = rng.gen_range(0.0..6.28);
        let src = format!(
            "{amp:.6}*sin({:.6}*x1+{:.6}*x2+{:.6}*x3+{p:.6})",
            kv[0], kv[1], kv[2]
        );
        let phi = BoundaryDatum::new(
            vec![PhiRule::Expr(CoordExpr::parse(&src, 3, false).unwrap())],
            None,
        )
        .unwrap();
        worst_defect = worst_defect.max(trace_interpolation_defect(&phi, &grid, eps, 200, k));
        let ext = extend_to_feasible(&phi, &grid, eps, 200, k).unwrap();
        let (gmax, _) = ext.field.max_cell_gradient();
        worst_excess = worst_excess.max(gmax - ext.gradient_bound);
        worst_bound = worst_bound.max(ext.gradient_bound);
    }
    let pass = worst_defect <= 1e-9 && worst_excess <= 0.0 && worst_bound < 1.0;
    criterion(
        7,
        "extension contract",
        pass,
        &format!(
            "interpolation defect {worst_defect:.2e}; max gradient excess over bound {worst_excess:.2e}; worst bound {worst_bound:.3} < 1"
        ),
    );
}

#[test]
fn criterion_08_frozen_optimality() {
    let _serial = serial();
    let m = monotone_pair();
    let u = &m.u1;
    let grid = u.grid().clone();
    let e_star = frozen_energy(u, u, &m.cc).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for k in 0..100 {
        let b = random_feasible(&grid, 2000 + k, 0.3);
        // back off the perturbation until v is strictly feasible
        let mut s = 1.0;
        let v = loop {
            let v = ScalarField::axpby(1.0, u, s, &b);
            if v.max_cell_gradient().0 < 0.995 {
                break v;
            }
            s *= 0.5;
            assert!(s > 1e-6, "could not build a feasible comparison field");
        };
        let e_v = frozen_energy(&v, u, &m.cc).unwrap();
        worst = worst.max(e_star - e_v);
    }
    criterion(
        8,
        "frozen-functional optimality",
        worst <= 1e-8,
        &format!("max frozen-energy advantage of a competitor {worst:.2e} over 100 fields"),
    );
}

#[test]
fn criterion_09_monotone_uniqueness() {
    let _serial = serial();
    let m = monotone_pair();
    let pass = m.converged && m.sup_diff <= 10.0 * m.tol_g;
    criterion(
        9,
        "monotone-H uniqueness",
        pass,
        &format!(
            "two starts agree to sup {:.2e} (allowance 10 tol_g = {:.0e}), converged {}",
            m.sup_diff,
            10.0 * m.tol_g,
            m.converged
        ),
    );
}

#[test]
fn criterion_10_spacelike_minimizers() {
    let _serial = serial();
    let solutions: Vec<(&str, &ScalarField)> = vec![
        ("radial", &radial_cascade().fine_u),
        ("two-ball", &two_ball_pass().u),
        ("monotone", &monotone_pair().u1),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (name, u) in solutions {
        let grid = u.grid();
        let chains = analysis::light_segment_scan(u, 1e-3);
        let margin = analysis::spacelike_margin(u, grid.r_far() - 2.0 * grid.spacing());
        pass &= chains.is_empty() && margin > 0.0;
        details.push(format!(
            "{name}: {} light chains, margin {margin:.3}",
            chains.len()
        ));
    }
    criterion(10, "spacelike minimizers", pass, &details.join("; "));
}

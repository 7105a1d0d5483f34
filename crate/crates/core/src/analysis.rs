//! Post-solve diagnostics: scan for near-null segments (the candidate
//! singular set), weak-form residual against random test fields, and the
//! far-field decay audit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::field::ScalarField;
use crate::functional::{first_variation, grad_l2_norm, CompiledCurvature, FunctionalError};
use crate::geometry::NodeTag;

/// Angular alignment tolerance for chaining near-null cells, in degrees.
pub const ALIGNMENT_DEG: f64 = 5.0;

/// Default fraction of ‖φ‖∞ the outermost shell must stay below for a
/// passing decay verdict.
pub const DECAY_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainClass {
    /// An endpoint touches the obstacle boundary: candidate lightlike
    /// segment in the sense of the singular-set analysis.
    BoundaryTouching,
    /// An endpoint reaches the truncation sphere: candidate light ray,
    /// though on a truncated grid this is ambiguous with a truncation
    /// artifact and is reported as a candidate only.
    FarField,
    /// Fully interior chain.
    Interior,
}

/// A maximal straight chain of adjacent near-null cells with mutually
/// aligned gradient directions.
#[derive(Debug, Clone)]
pub struct LightChain {
    /// Base nodes of the chain's cells, in walk order.
    pub cells: Vec<usize>,
    /// Unit gradient direction of the seed cell.
    pub direction: Vec<f64>,
    /// Smallest gradient magnitude along the chain.
    pub min_gradient: f64,
    pub class: ChainClass,
}

/// Scan for maximal straight chains of adjacent active cells whose
/// gradient magnitude exceeds `1 - threshold` and whose directions agree
/// within [`ALIGNMENT_DEG`]. Isolated flagged cells are not segments and
/// are dropped; only chains of at least two cells are returned.
///
/// Panics unless `threshold ∈ (0, 0.1)`.
pub fn light_segment_scan(u: &ScalarField, threshold: f64) -> Vec<LightChain> {
    assert!(
        threshold > 0.0 && threshold < 0.1,
        "light-segment threshold must lie in (0, 0.1)"
    );
    let grid = u.grid();
    let n = grid.dim();
    let cos_tol = (ALIGNMENT_DEG * std::f64::consts::PI / 180.0).cos();
    let cut = 1.0 - threshold;

    // Flag near-null cells and record their unit directions.
    let mut g = vec![0.0; n];
    let mut flagged: std::collections::HashMap<usize, (Vec<f64>, f64)> =
        std::collections::HashMap::new();
    let mut order = Vec::new();
    for &base in grid.active_cells() {
        let base = base as usize;
        grid.cell_gradient(u.values(), base, &mut g);
        let mag = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if mag > cut {
            let dir: Vec<f64> = g.iter().map(|x| x / mag).collect();
            flagged.insert(base, (dir, mag));
            order.push(base);
        }
    }

    let per_axis = grid.nodes_per_axis();
    let step_to = |base: usize, step: &[i64]| -> Option<usize> {
        let mut multi = grid.multi_index(base);
        for (m, &s) in multi.iter_mut().zip(step.iter()) {
            let next = *m as i64 + s;
            // cell base nodes range over [0, per_axis - 2]
            if next < 0 || next as usize > per_axis - 2 {
                return None;
            }
            *m = next as usize;
        }
        Some(grid.node_index(&multi))
    };

    let mut visited: std::collections::HashSet<usize> = std::collections::HashSet::new();
    let mut chains = Vec::new();
    for &seed in &order {
        if visited.contains(&seed) {
            continue;
        }
        let (seed_dir, seed_mag) = flagged[&seed].clone();
        // Lattice step: dominant-axis normalization rounded to {-1, 0, 1}.
        let max_comp = seed_dir.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        let step: Vec<i64> = seed_dir
            .iter()
            .map(|d| (d / max_comp).round() as i64)
            .collect();

        let mut cells = vec![seed];
        let mut min_gradient = seed_mag;
        for forward in [true, false] {
            let s: Vec<i64> = if forward {
                step.clone()
            } else {
                step.iter().map(|v| -v).collect()
            };
            let mut cur = seed;
            while let Some(next) = step_to(cur, &s) {
                let Some((dir, mag)) = flagged.get(&next) else {
                    break;
                };
                if visited.contains(&next) {
                    break;
                }
                let dot: f64 = dir.iter().zip(seed_dir.iter()).map(|(a, b)| a * b).sum();
                if dot.abs() < cos_tol {
                    break;
                }
                if forward {
                    cells.push(next);
                } else {
                    cells.insert(0, next);
                }
                visited.insert(next);
                min_gradient = min_gradient.min(*mag);
                cur = next;
            }
        }
        visited.insert(seed);
        if cells.len() < 2 {
            continue;
        }

        let touches_boundary = |base: usize| {
            grid.corner_offsets()
                .iter()
                .any(|&off| grid.tag(base + off) == NodeTag::Boundary)
        };
        let reaches_far = |base: usize| {
            let c = grid.cell_center(base);
            let r: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            r >= grid.r_far() - 2.0 * grid.spacing()
                || grid
                    .corner_offsets()
                    .iter()
                    .any(|&off| grid.tag(base + off) == NodeTag::Farfield)
        };
        let ends = [cells[0], *cells.last().unwrap()];
        let class = if ends.iter().any(|&b| touches_boundary(b)) {
            ChainClass::BoundaryTouching
        } else if ends.iter().any(|&b| reaches_far(b)) {
            ChainClass::FarField
        } else {
            ChainClass::Interior
        };
        chains.push(LightChain {
            cells,
            direction: seed_dir,
            min_gradient,
            class,
        });
    }
    chains.sort_by_key(|c| std::cmp::Reverse(c.cells.len()));
    chains
}

/// Minimum spacelike margin 1 − |∇u| over active cells whose center lies
/// within radius `r_max` of the origin. Returns +∞ if no cell qualifies.
pub fn spacelike_margin(u: &ScalarField, r_max: f64) -> f64 {
    let grid = u.grid();
    let n = grid.dim();
    let mut g = vec![0.0; n];
    let mut margin = f64::INFINITY;
    for &base in grid.active_cells() {
        let base = base as usize;
        let c = grid.cell_center(base);
        if c.iter().map(|x| x * x).sum::<f64>().sqrt() > r_max {
            continue;
        }
        grid.cell_gradient(u.values(), base, &mut g);
        let mag = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        margin = margin.min(1.0 - mag);
    }
    margin
}

/// Max over `trials` random compactly supported tensor-product bump test
/// fields v of |δ𝓘(u)[v]| / ‖v‖ with ‖v‖² = ‖v‖₂² + ‖∇v‖₂². The ratio is
/// scale-invariant in v by construction.
pub fn weak_residual_check(
    u: &ScalarField,
    cc: &CompiledCurvature,
    trials: usize,
    seed: u64,
) -> Result<f64, FunctionalError> {
    let grid = u.grid().clone();
    let n = grid.dim();
    let h = grid.spacing();
    let r_far = grid.r_far();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut attempts = 0;
    while done < trials && attempts < 20 * trials + 20 {
        attempts += 1;
        let center: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(-0.8 * r_far..0.8 * r_far))
            .collect();
        let lo = 4.0 * h;
        let hi = (0.35 * r_far).max(1.5 * lo);
        let scale = rng.gen_range(lo..hi);
        let mut values = vec![0.0; grid.node_count()];
        for (node, v) in values.iter_mut().enumerate() {
            if !grid.is_free(node) {
                continue;
            }
            let x = grid.node_point(node);
            let mut b = 1.0;
            for (xi, ci) in x.iter().zip(center.iter()) {
                let t = (xi - ci) / scale;
                if t.abs() >= 1.0 {
                    b = 0.0;
                    break;
                }
                let q = 1.0 - t * t;
                b *= q * q * q;
            }
            *v = b;
        }
        let v = ScalarField::from_values(grid.clone(), values, true);
        let l2sq: f64 = v
            .values()
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            * grid.cell_volume();
        let gnorm = grad_l2_norm(&v);
        let norm = (l2sq + gnorm * gnorm).sqrt();
        if norm < 1e-12 {
            // bump missed the free region entirely; resample
            continue;
        }
        let fv = first_variation(u, &v, cc)?;
        worst = worst.max(fv.abs() / norm);
        done += 1;
    }
    Ok(worst)
}

/// Shell suprema sup_{| |x| − r | ≤ h} |u| over non-obstacle nodes.
///
/// Panics unless every radius lies in (obstacle extent, R_far).
pub fn decay_profile(u: &ScalarField, radii: &[f64]) -> Vec<(f64, f64)> {
    let grid = u.grid();
    let extent = grid.obstacle_set().extent_from_origin();
    let h = grid.spacing();
    for &r in radii {
        assert!(
            r > extent && r < grid.r_far(),
            "decay radius {r} outside (extent, R_far)"
        );
    }
    let mut sups = vec![0.0f64; radii.len()];
    for (node, &v) in u.values().iter().enumerate() {
        if grid.tag(node) == NodeTag::Obstacle {
            continue;
        }
        let x = grid.node_point(node);
        let r: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        for (k, &rk) in radii.iter().enumerate() {
            if (r - rk).abs() <= h {
                sups[k] = sups[k].max(v.abs());
            }
        }
    }
    radii.iter().copied().zip(sups).collect()
}

#[derive(Debug, Clone)]
pub struct DecayVerdict {
    pub shells: Vec<(f64, f64)>,
    /// Shell suprema are non-increasing (up to round-off).
    pub non_increasing: bool,
    pub final_shell: f64,
    /// Pass bound: `fraction · ‖φ‖∞`.
    pub bound: f64,
    pub pass: bool,
}

/// Decay audit: shell suprema trend plus a final-shell bound of
/// `fraction · sup_phi` (use [`DECAY_FRACTION`] as the default).
pub fn decay_verdict(u: &ScalarField, radii: &[f64], sup_phi: f64, fraction: f64) -> DecayVerdict {
    let shells = decay_profile(u, radii);
    let tol = 1e-9 * (1.0 + sup_phi.abs());
    let non_increasing = shells.windows(2).all(|w| w[1].1 <= w[0].1 + tol);
    let final_shell = shells.last().map_or(0.0, |s| s.1);
    let bound = fraction * sup_phi;
    DecayVerdict {
        pass: non_increasing && final_shell <= bound + tol,
        shells,
        non_increasing,
        final_shell,
        bound,
    }
}

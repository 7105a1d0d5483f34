//! Boundary data φ on the obstacle surfaces: the spacelike-displacing
//! admissibility check, Lipschitz estimation, the nodal boundary trace,
//! and the cutoff construction of a feasible member of the constraint set.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::CoordExpr;
use crate::field::ScalarField;
use crate::geometry::{self, segment_clear, ExteriorGrid, Obstacle};

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error("boundary datum Lipschitz estimate {measured:.6} exceeds 1 - eps = {required:.6}")]
    NotLipschitzEnough { measured: f64, required: f64 },
    #[error("no cutoff radius <= {available:.4} satisfies sup|phi|/R_cut < eps (need > {needed:.4})")]
    CutoffTooTight { needed: f64, available: f64 },
    #[error("boundary datum invalid: {0}")]
    InvalidDatum(String),
}

/// One obstacle's boundary rule.
#[derive(Debug, Clone)]
pub enum PhiRule {
    Constant(f64),
    /// Closed-form expression in the ambient coordinates x1..xn.
    Expr(CoordExpr),
    /// Tabulated surface values with nearest-sample lookup.
    Table { points: Vec<Vec<f64>>, values: Vec<f64> },
}

impl PhiRule {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            PhiRule::Constant(c) => *c,
            PhiRule::Expr(e) => e.eval(x),
            PhiRule::Table { points, values } => {
                let mut best = (f64::INFINITY, 0);
                for (i, p) in points.iter().enumerate() {
                    let d = geometry::dist(x, p);
                    if d < best.0 {
                        best = (d, i);
                    }
                }
                values[best.1]
            }
        }
    }
}

/// The Dirichlet datum: one rule per obstacle plus optional metadata.
#[derive(Debug, Clone)]
pub struct BoundaryDatum {
    rules: Vec<PhiRule>,
    /// Caller-declared Lipschitz constant, if known a priori.
    declared_lipschitz: Option<f64>,
}

impl BoundaryDatum {
    pub fn new(rules: Vec<PhiRule>, declared_lipschitz: Option<f64>) -> Result<Self, BoundaryError> {
        if rules.is_empty() {
            return Err(BoundaryError::InvalidDatum("no boundary rules".into()));
        }
        if let Some(pts) = rules.iter().find_map(|r| match r {
            PhiRule::Table { points, values } if points.is_empty() || points.len() != values.len() => {
                Some(points.len())
            }
            _ => None,
        }) {
            return Err(BoundaryError::InvalidDatum(format!(
                "tabulated rule with {pts} points does not match its value count"
            )));
        }
        Ok(BoundaryDatum {
            rules,
            declared_lipschitz,
        })
    }

    pub fn constant(c: f64, obstacle_count: usize) -> Self {
        BoundaryDatum {
            rules: vec![PhiRule::Constant(c); obstacle_count],
            declared_lipschitz: Some(0.0),
        }
    }

    pub fn declared_lipschitz(&self) -> Option<f64> {
        self.declared_lipschitz
    }

    pub fn eval(&self, obstacle: usize, x: &[f64]) -> f64 {
        self.rules[obstacle % self.rules.len()].eval(x)
    }

    pub fn is_constant_zero(&self) -> bool {
        self.rules.iter().all(|r| matches!(r, PhiRule::Constant(c) if *c == 0.0))
    }
}

/// Surface sample points with their datum values; the common currency of
/// the admissibility checks and the extension.
#[derive(Debug, Clone)]
pub struct BoundarySamples {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub obstacle: Vec<usize>,
    pub sup_phi: f64,
    pub min_phi: f64,
    pub max_phi: f64,
}

impl BoundarySamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn random_surface_point(o: &Obstacle, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match o {
        Obstacle::Ball { center, radius } => loop {
            // Rejection-sample a direction from the unit cube.
            let d: Vec<f64> = center.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = geometry::norm(&d);
            if n > 1e-3 && n <= 1.0 {
                return center
                    .iter()
                    .zip(d.iter())
                    .map(|(c, di)| c + radius * di / n)
                    .collect();
            }
        },
        Obstacle::Box { min, max } => {
            let n = min.len();
            let axis = rng.gen_range(0..n);
            let side = if rng.gen_bool(0.5) { min[axis] } else { max[axis] };
            (0..n)
                .map(|i| {
                    if i == axis {
                        side
                    } else {
                        rng.gen_range(min[i]..max[i])
                    }
                })
                .collect()
        }
    }
}

/// Sample the obstacle surfaces: every boundary grid node projected to its
/// nearest surface, topped up with seeded random surface points so each
/// obstacle carries at least `min_per_obstacle` samples.
pub fn boundary_samples(
    phi: &BoundaryDatum,
    grid: &ExteriorGrid,
    min_per_obstacle: usize,
    seed: u64,
) -> BoundarySamples {
    let set = grid.obstacle_set();
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut obstacle: Vec<usize> = Vec::new();
    let mut per = vec![0usize; set.len()];
    for &node in grid.boundary_nodes() {
        let x = grid.node_point(node as usize);
        let (_, idx) = set.nearest(&x);
        let p = set.obstacles()[idx].project_to_surface(&x);
        per[idx] += 1;
        points.push(p);
        obstacle.push(idx);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (idx, o) in set.obstacles().iter().enumerate() {
        while per[idx] < min_per_obstacle {
            points.push(random_surface_point(o, &mut rng));
            obstacle.push(idx);
            per[idx] += 1;
        }
    }
    let values: Vec<f64> = points
        .iter()
        .zip(obstacle.iter())
        .map(|(p, &i)| phi.eval(i, p))
        .collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in &values {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    BoundarySamples {
        points,
        values,
        obstacle,
        sup_phi: lo.abs().max(hi.abs()),
        min_phi: lo,
        max_phi: hi,
    }
}

/// Evenly strided subset of sample indices, capped at `cap` entries, so
/// pair scans stay quadratic in a bounded count.
fn strided_subset(len: usize, cap: usize) -> Vec<usize> {
    if len <= cap {
        return (0..len).collect();
    }
    (0..cap).map(|k| k * len / cap).collect()
}

const PAIR_SCAN_CAP: usize = 700;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Marginal,
    Fail,
}

/// Outcome of the spacelike-displacing admissibility check.
#[derive(Debug, Clone, Serialize)]
pub struct DisplacingVerdict {
    pub verdict: Verdict,
    pub worst_ratio: f64,
    pub worst_pair: Option<(Vec<f64>, Vec<f64>)>,
    pub pairs_tested: usize,
    pub note: Option<String>,
}

/// Check |φ(x)−φ(y)| < |x−y| over sampled boundary pairs whose open
/// connecting segment stays in the domain. A single convex obstacle makes
/// the condition vacuous and is passed with a note.
pub fn check_spacelike_displacing(
    phi: &BoundaryDatum,
    grid: &ExteriorGrid,
    margin: f64,
    samples: usize,
    seed: u64,
) -> DisplacingVerdict {
    assert!((0.0..1.0).contains(&margin));
    let s = boundary_samples(phi, grid, samples.max(10), seed);
    let idx = strided_subset(s.len(), PAIR_SCAN_CAP);
    let mut worst = 0.0f64;
    let mut worst_pair = None;
    let mut tested = 0usize;
    for (a_pos, &a) in idx.iter().enumerate() {
        for &b in idx.iter().skip(a_pos + 1) {
            let d = geometry::dist(&s.points[a], &s.points[b]);
            if d < 1e-12 {
                continue;
            }
            let ratio = (s.values[a] - s.values[b]).abs() / d;
            // segment_clear is the expensive part; only pairs that could
            // advance the worst ratio need it.
            if ratio <= worst {
                continue;
            }
            if !segment_clear(&s.points[a], &s.points[b], grid) {
                continue;
            }
            tested += 1;
            worst = ratio;
            worst_pair = Some((s.points[a].clone(), s.points[b].clone()));
        }
    }
    if grid.obstacle_set().is_single_convex() {
        return DisplacingVerdict {
            verdict: Verdict::Pass,
            worst_ratio: worst,
            worst_pair,
            pairs_tested: tested,
            note: Some(
                "single convex obstacle: displacing hypothesis not required, pass is vacuous"
                    .into(),
            ),
        };
    }
    let verdict = if worst >= 1.0 {
        Verdict::Fail
    } else if worst <= 1.0 - margin {
        Verdict::Pass
    } else {
        Verdict::Marginal
    };
    DisplacingVerdict {
        verdict,
        worst_ratio: worst,
        worst_pair,
        pairs_tested: tested,
        note: None,
    }
}

/// Largest sampled chord ratio |φ(x)−φ(y)|/|x−y|: a lower estimate of the
/// Lipschitz constant of φ with respect to ambient Euclidean distance.
pub fn boundary_lipschitz_constant(
    phi: &BoundaryDatum,
    grid: &ExteriorGrid,
    samples: usize,
    seed: u64,
) -> f64 {
    let s = boundary_samples(phi, grid, samples.max(10), seed);
    let idx = strided_subset(s.len(), PAIR_SCAN_CAP);
    let mut worst = 0.0f64;
    for (a_pos, &a) in idx.iter().enumerate() {
        for &b in idx.iter().skip(a_pos + 1) {
            let d = geometry::dist(&s.points[a], &s.points[b]);
            if d < 1e-12 {
                continue;
            }
            worst = worst.max((s.values[a] - s.values[b]).abs() / d);
        }
    }
    worst
}

/// Two-sided McShane midpoint of rate `rate` through the samples, clamped
/// to the sample range. Exact at the sample points whenever the samples
/// are rate-Lipschitz consistent; negating the values negates the result.
fn mcshane_midpoint(s: &BoundarySamples, rate: f64, x: &[f64]) -> f64 {
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    for (p, v) in s.points.iter().zip(s.values.iter()) {
        let d = geometry::dist(p, x);
        upper = upper.min(v + rate * d);
        lower = lower.max(v - rate * d);
    }
    (0.5 * (upper + lower)).clamp(s.min_phi, s.max_phi)
}

/// Max |ψ̄(p) − φ(p)| over the surface samples the extension is built
/// from, where ψ̄ is the clamped McShane midpoint of rate 1 − eps: the
/// boundary interpolation defect of the trace construction. Zero (to
/// rounding) whenever the sampled data are (1 − eps)-Lipschitz consistent.
pub fn trace_interpolation_defect(
    phi: &BoundaryDatum,
    grid: &ExteriorGrid,
    eps: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let s = boundary_samples(phi, grid, samples.max(10), seed);
    let rate = 1.0 - eps;
    s.points
        .iter()
        .zip(s.values.iter())
        .map(|(p, v)| (mcshane_midpoint(&s, rate, p) - v).abs())
        .fold(0.0, f64::max)
}

/// Radial C¹ cutoff: 1 on r ≤ plateau, 0 on r ≥ outer, smoothstep ramp
/// between. The smoothstep's max slope is 1.5/(outer − plateau), i.e.
/// exactly 1/R_cut for the effective radius R_cut = (outer − plateau)/1.5.
pub fn cutoff_profile(r: f64, plateau: f64, outer: f64) -> f64 {
    if r <= plateau {
        1.0
    } else if r >= outer {
        0.0
    } else {
        let s = (r - plateau) / (outer - plateau);
        1.0 - s * s * (3.0 - 2.0 * s)
    }
}

/// A feasible member of the constraint set interpolating the nodal trace.
#[derive(Debug)]
pub struct FeasibleExtension {
    pub field: ScalarField,
    /// Effective cutoff radius: the ramp's max slope is 1/R_cut.
    pub r_cut: f64,
    pub plateau: f64,
    pub outer: f64,
    /// Lipschitz rate used for the McShane body, 1 − eps.
    pub rate: f64,
    pub sup_phi: f64,
    /// A priori cell-gradient bound sup|φ|/R_cut + rate.
    pub gradient_bound: f64,
    /// Nodal trace values pinned at boundary nodes (parallel to
    /// `grid.boundary_nodes()`).
    pub trace: Vec<f64>,
}

/// Choose the cutoff ramp: plateau just past the boundary crust, outer
/// edge just inside the far-field band (the widest admissible ramp, hence
/// the smallest slope). Fails if even that slope cannot keep
/// sup|φ|/R_cut below eps.
fn choose_cutoff(
    grid: &ExteriorGrid,
    sup_phi: f64,
    eps: f64,
) -> Result<(f64, f64, f64), BoundaryError> {
    let h = grid.spacing();
    let plateau = grid.obstacle_set().extent_from_origin() + 2.0 * h;
    let outer = grid.r_far() - 2.0 * h;
    if outer <= plateau {
        return Err(BoundaryError::CutoffTooTight {
            needed: plateau,
            available: outer,
        });
    }
    let r_cut = (outer - plateau) / 1.5;
    if sup_phi / r_cut >= eps {
        return Err(BoundaryError::CutoffTooTight {
            needed: sup_phi / eps,
            available: r_cut,
        });
    }
    Ok((plateau, outer, r_cut))
}

/// Build w ∈ 𝓧_φ: the clamped McShane midpoint body of rate 1 − eps,
/// multiplied by the radial cutoff. Exact at boundary nodes (their values
/// define the discrete trace), zero outside the ball of radius 2 R_cut.
pub fn extend_to_feasible(
    phi: &BoundaryDatum,
    grid: &Arc<ExteriorGrid>,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<FeasibleExtension, BoundaryError> {
    assert!(eps > 0.0 && eps < 1.0);
    let measured = boundary_lipschitz_constant(phi, grid, samples, seed);
    let rate = 1.0 - eps;
    if measured > rate + 1e-12 {
        return Err(BoundaryError::NotLipschitzEnough {
            measured,
            required: rate,
        });
    }
    if let Some(decl) = phi.declared_lipschitz() {
        if decl > rate + 1e-12 {
            return Err(BoundaryError::NotLipschitzEnough {
                measured: decl,
                required: rate,
            });
        }
    }
    let s = boundary_samples(phi, grid, samples.max(10), seed);
    let (plateau, outer, r_cut) = choose_cutoff(grid, s.sup_phi, eps)?;

    let mut field = ScalarField::zero(grid.clone());
    {
        let values = field.values_mut();
        for node in 0..grid.node_count() {
            if grid.tag(node) == crate::geometry::NodeTag::Obstacle
                || grid.tag(node) == crate::geometry::NodeTag::Farfield
            {
                continue;
            }
            let x = grid.node_point(node);
            let r = geometry::norm(&x);
            if r >= outer {
                continue;
            }
            let v = cutoff_profile(r, plateau, outer);
            if v == 0.0 {
                continue;
            }
            values[node] = v * mcshane_midpoint(&s, rate, &x);
        }
    }
    let trace: Vec<f64> = grid
        .boundary_nodes()
        .iter()
        .map(|&b| field.values()[b as usize])
        .collect();
    Ok(FeasibleExtension {
        field,
        r_cut,
        plateau,
        outer,
        rate,
        sup_phi: s.sup_phi,
        gradient_bound: s.sup_phi / r_cut + rate,
        trace,
    })
}

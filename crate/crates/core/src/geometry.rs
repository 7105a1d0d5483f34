//! Exterior-domain geometry: obstacle sets, the truncated Cartesian grid
//! with node classification, and segment visibility queries.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("obstacle closures intersect (pair {a}, {b}, gap {gap:.6})")]
    ObstaclesOverlap { a: usize, b: usize, gap: f64 },
    #[error("obstacle gap {gap:.6} is below 3*h_grid = {min:.6}")]
    GapUnresolved { gap: f64, min: f64 },
    #[error("obstacle extent {extent:.6} exceeds R_far/2 = {half:.6}")]
    TruncationTooTight { extent: f64, half: f64 },
    #[error("obstacle {index} contains no grid node at spacing {h}")]
    ObstacleUnresolved { index: usize, h: f64 },
    #[error("interior region is not connected on the grid")]
    DisconnectedInterior,
    #[error("point is not within 2*h_grid of the obstacle boundary (distance {dist:.6})")]
    NotNearBoundary { dist: f64 },
    #[error("invalid obstacle set: {0}")]
    InvalidObstacleSet(String),
}

/// A single closed obstacle: a ball or an axis-aligned box.
///
/// Both are bounded convex Lipschitz domains with analytic membership,
/// distance and surface projection.
#[derive(Debug, Clone, Serialize)]
pub enum Obstacle {
    Ball { center: Vec<f64>, radius: f64 },
    Box { min: Vec<f64>, max: Vec<f64> },
}

impl Obstacle {
    pub fn dim(&self) -> usize {
        match self {
            Obstacle::Ball { center, .. } => center.len(),
            Obstacle::Box { min, .. } => min.len(),
        }
    }

    /// Signed distance to the obstacle surface, negative inside.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match self {
            Obstacle::Ball { center, radius } => dist(x, center) - radius,
            Obstacle::Box { min, max } => {
                let mut out_sq = 0.0;
                let mut inner = f64::NEG_INFINITY;
                for i in 0..x.len() {
                    let q = (min[i] - x[i]).max(x[i] - max[i]);
                    if q > 0.0 {
                        out_sq += q * q;
                    }
                    inner = inner.max(q);
                }
                if out_sq > 0.0 {
                    out_sq.sqrt()
                } else {
                    inner // <= 0 inside
                }
            }
        }
    }

    /// Nearest point on the obstacle surface.
    pub fn project_to_surface(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Obstacle::Ball { center, radius } => {
                let d = dist(x, center);
                if d < 1e-14 {
                    let mut p = center.clone();
                    p[0] += radius;
                    return p;
                }
                center
                    .iter()
                    .zip(x.iter())
                    .map(|(c, xi)| c + (xi - c) * radius / d)
                    .collect()
            }
            Obstacle::Box { min, max } => {
                let inside = self.signed_distance(x) <= 0.0;
                if !inside {
                    return x
                        .iter()
                        .enumerate()
                        .map(|(i, xi)| xi.clamp(min[i], max[i]))
                        .collect();
                }
                // Push out through the nearest face.
                let mut best_axis = 0;
                let mut best_gap = f64::INFINITY;
                let mut best_val = 0.0;
                for i in 0..x.len() {
                    let lo = x[i] - min[i];
                    let hi = max[i] - x[i];
                    if lo < best_gap {
                        best_gap = lo;
                        best_axis = i;
                        best_val = min[i];
                    }
                    if hi < best_gap {
                        best_gap = hi;
                        best_axis = i;
                        best_val = max[i];
                    }
                }
                let mut p = x.to_vec();
                p[best_axis] = best_val;
                p
            }
        }
    }

    /// Largest Euclidean norm over the obstacle closure.
    pub fn extent_from_origin(&self) -> f64 {
        match self {
            Obstacle::Ball { center, radius } => norm(center) + radius,
            Obstacle::Box { min, max } => {
                let far_sq: f64 = min
                    .iter()
                    .zip(max.iter())
                    .map(|(a, b)| a.abs().max(b.abs()).powi(2))
                    .sum();
                far_sq.sqrt()
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidObstacleSet(m));
        if self.dim() != dim {
            return bad(format!("obstacle dimension {} != {}", self.dim(), dim));
        }
        match self {
            Obstacle::Ball { radius, .. } => {
                if !(*radius > 0.0) {
                    return bad(format!("ball radius {radius} must be positive"));
                }
            }
            Obstacle::Box { min, max } => {
                if min.len() != max.len() {
                    return bad("box min/max dimension mismatch".into());
                }
                for i in 0..min.len() {
                    if !(max[i] > min[i]) {
                        return bad(format!("box has empty interior on axis {i}"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Euclidean distance between the closures of two obstacles (0 on contact,
/// negative overlap depth is not resolved; any value <= 0 means contact).
fn pair_gap(a: &Obstacle, b: &Obstacle) -> f64 {
    match (a, b) {
        (Obstacle::Ball { center: ca, radius: ra }, Obstacle::Ball { center: cb, radius: rb }) => {
            dist(ca, cb) - ra - rb
        }
        (Obstacle::Ball { center, radius }, bx @ Obstacle::Box { .. })
        | (bx @ Obstacle::Box { .. }, Obstacle::Ball { center, radius }) => {
            bx.signed_distance(center) - radius
        }
        (Obstacle::Box { min: m1, max: x1 }, Obstacle::Box { min: m2, max: x2 }) => {
            let mut sq = 0.0;
            for i in 0..m1.len() {
                let g = (m2[i] - x1[i]).max(m1[i] - x2[i]);
                if g > 0.0 {
                    sq += g * g;
                }
            }
            // Inside overlap: report a non-positive separation.
            if sq > 0.0 {
                f64::sqrt(sq)
            } else {
                let mut depth = f64::NEG_INFINITY;
                for i in 0..m1.len() {
                    depth = depth.max((m2[i] - x1[i]).max(m1[i] - x2[i]));
                }
                depth.min(0.0)
            }
        }
    }
}

/// The union of disjoint closed obstacles defining the exterior domain.
#[derive(Debug, Clone, Serialize)]
pub struct ObstacleSet {
    obstacles: Vec<Obstacle>,
    dim: usize,
}

impl ObstacleSet {
    pub fn new(obstacles: Vec<Obstacle>, dim: usize) -> Result<Self, GeometryError> {
        if dim < 3 {
            return Err(GeometryError::InvalidObstacleSet(format!(
                "dimension {dim} < 3"
            )));
        }
        if obstacles.is_empty() {
            return Err(GeometryError::InvalidObstacleSet(
                "need at least one obstacle".into(),
            ));
        }
        for o in &obstacles {
            o.validate(dim)?;
        }
        let set = ObstacleSet { obstacles, dim };
        if let Some((a, b, gap)) = set.worst_pair_gap() {
            if gap <= 0.0 {
                return Err(GeometryError::ObstaclesOverlap { a, b, gap });
            }
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn len(&self) -> usize {
        self.obstacles.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Minimum closure-to-closure gap over obstacle pairs, with the pair.
    pub fn worst_pair_gap(&self) -> Option<(usize, usize, f64)> {
        let mut worst: Option<(usize, usize, f64)> = None;
        for i in 0..self.obstacles.len() {
            for j in (i + 1)..self.obstacles.len() {
                let g = pair_gap(&self.obstacles[i], &self.obstacles[j]);
                if worst.map_or(true, |(_, _, w)| g < w) {
                    worst = Some((i, j, g));
                }
            }
        }
        worst
    }

    /// Signed distance to the nearest obstacle and its index.
    pub fn nearest(&self, x: &[f64]) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (i, o) in self.obstacles.iter().enumerate() {
            let d = o.signed_distance(x);
            if d < best.0 {
                best = (d, i);
            }
        }
        best
    }

    pub fn inside_any(&self, x: &[f64]) -> bool {
        self.obstacles.iter().any(|o| o.signed_distance(x) <= 0.0)
    }

    pub fn extent_from_origin(&self) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.extent_from_origin())
            .fold(0.0, f64::max)
    }

    /// True when the exterior complement is convex, i.e. a single convex
    /// obstacle (every shape in our vocabulary is convex).
    pub fn is_single_convex(&self) -> bool {
        self.obstacles.len() == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum NodeTag {
    Obstacle,
    Boundary,
    Interior,
    Farfield,
}

/// Truncated Cartesian discretization of the exterior domain.
///
/// Nodes live on a uniform lattice over `[-R_far, R_far]^n` that contains
/// the origin; the domain is cut at the Euclidean sphere `|x| = R_far`
/// where the solution is pinned to zero. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ExteriorGrid {
    obstacle_set: ObstacleSet,
    r_far: f64,
    h: f64,
    /// Nodes per axis (same on every axis).
    nodes_per_axis: usize,
    origin: f64,
    strides: Vec<usize>,
    tags: Vec<NodeTag>,
    /// Base-node indices of cells entering the discrete energy.
    active_cells: Vec<u32>,
    /// Node-index offsets of the 2^n cell corners relative to the base node.
    corner_offsets: Vec<usize>,
    boundary_nodes: Vec<u32>,
    interior_count: usize,
    boundary_component_count: usize,
}

impl ExteriorGrid {
    pub fn obstacle_set(&self) -> &ObstacleSet {
        &self.obstacle_set
    }

    pub fn dim(&self) -> usize {
        self.obstacle_set.dim()
    }

    pub fn r_far(&self) -> f64 {
        self.r_far
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn node_count(&self) -> usize {
        self.tags.len()
    }

    pub fn cell_count(&self) -> usize {
        self.active_cells.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    pub fn tag(&self, node: usize) -> NodeTag {
        self.tags[node]
    }

    pub fn tags(&self) -> &[NodeTag] {
        &self.tags
    }

    pub fn is_free(&self, node: usize) -> bool {
        self.tags[node] == NodeTag::Interior
    }

    pub fn active_cells(&self) -> &[u32] {
        &self.active_cells
    }

    pub fn corner_offsets(&self) -> &[usize] {
        &self.corner_offsets
    }

    pub fn boundary_nodes(&self) -> &[u32] {
        &self.boundary_nodes
    }

    pub fn interior_count(&self) -> usize {
        self.interior_count
    }

    pub fn boundary_component_count(&self) -> usize {
        self.boundary_component_count
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    /// Lattice coordinates of a node index.
    pub fn node_point(&self, node: usize) -> Vec<f64> {
        let n = self.dim();
        let mut p = vec![0.0; n];
        let mut rem = node;
        for i in 0..n {
            p[i] = self.origin + (rem % self.nodes_per_axis) as f64 * self.h;
            rem /= self.nodes_per_axis;
        }
        p
    }

    pub fn node_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(self.strides.iter())
            .map(|(m, s)| m * s)
            .sum()
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let n = self.dim();
        let mut m = vec![0; n];
        let mut rem = node;
        for i in 0..n {
            m[i] = rem % self.nodes_per_axis;
            rem /= self.nodes_per_axis;
        }
        m
    }

    /// Center of the cell with base node `base`.
    pub fn cell_center(&self, base: usize) -> Vec<f64> {
        let mut p = self.node_point(base);
        for c in p.iter_mut() {
            *c += 0.5 * self.h;
        }
        p
    }

    /// Base node of the cell containing `x`, if inside the lattice box.
    pub fn cell_at(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for i in 0..self.dim() {
            let f = (x[i] - self.origin) / self.h;
            if f < 0.0 || f >= (self.nodes_per_axis - 1) as f64 {
                return None;
            }
            idx += (f as usize) * self.strides[i];
        }
        Some(idx)
    }

    /// Multilinear cell-center gradient of nodal values for one cell.
    pub fn cell_gradient(&self, values: &[f64], base: usize, out: &mut [f64]) {
        let n = self.dim();
        let scale = 1.0 / (self.h * (1 << (n - 1)) as f64);
        for g in out.iter_mut() {
            *g = 0.0;
        }
        for (b, off) in self.corner_offsets.iter().enumerate() {
            let u = values[base + off];
            for (i, g) in out.iter_mut().enumerate() {
                if b >> i & 1 == 1 {
                    *g += u;
                } else {
                    *g -= u;
                }
            }
        }
        for g in out.iter_mut() {
            *g *= scale;
        }
    }

    /// Mean of the corner values of one cell.
    pub fn cell_mean(&self, values: &[f64], base: usize) -> f64 {
        let inv = 1.0 / self.corner_offsets.len() as f64;
        self.corner_offsets
            .iter()
            .map(|off| values[base + off])
            .sum::<f64>()
            * inv
    }

    /// Copy the corner values of one cell into `out` (length 2^n, bit
    /// order matching [`ExteriorGrid::corner_offsets`]).
    #[inline]
    pub fn gather_corners(&self, values: &[f64], base: usize, out: &mut [f64]) {
        for (o, off) in out.iter_mut().zip(self.corner_offsets.iter()) {
            *o = values[base + off];
        }
    }
}

/// Tensor-product 2-point Gauss rule on a cell for the multilinear nodal
/// interpolant. Evaluating the gradient at the 2^n Gauss points
/// integrates the quadratic gradient energy exactly (full integration);
/// the one-point center rule leaves checkerboard modes energy-free and
/// lets a staircase boundary excite O(1) oscillations.
#[derive(Debug, Clone)]
pub struct CellQuadrature {
    dim: usize,
    corners: usize,
    /// coeff[(q·n + i)·2^n + b] = ∂ grad_i(ξ_q) / ∂ u_corner_b, with the
    /// 1/h factor folded in.
    coeff: Vec<f64>,
}

impl CellQuadrature {
    pub fn new(grid: &ExteriorGrid) -> Self {
        let n = grid.dim();
        let h = grid.spacing();
        let corners = 1usize << n;
        // Gauss abscissae on [0, 1]
        let xi = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
        let mut coeff = vec![0.0; corners * n * corners];
        for q in 0..corners {
            for i in 0..n {
                for b in 0..corners {
                    let mut c = if b >> i & 1 == 1 { 1.0 } else { -1.0 } / h;
                    for j in 0..n {
                        if j == i {
                            continue;
                        }
                        let t = xi[q >> j & 1];
                        c *= if b >> j & 1 == 1 { t } else { 1.0 - t };
                    }
                    coeff[(q * n + i) * corners + b] = c;
                }
            }
        }
        CellQuadrature {
            dim: n,
            corners,
            coeff,
        }
    }

    /// Number of quadrature points (2^n).
    pub fn point_count(&self) -> usize {
        self.corners
    }

    /// Weight of each point as a fraction of the cell volume.
    pub fn weight(&self) -> f64 {
        1.0 / self.corners as f64
    }

    /// ∂ grad_i(ξ_q) / ∂ u_corner_b (includes the 1/h factor).
    #[inline]
    pub fn coeff(&self, q: usize, i: usize, b: usize) -> f64 {
        self.coeff[(q * self.dim + i) * self.corners + b]
    }

    /// Gradient of the multilinear interpolant at Gauss point `q` from the
    /// cell's corner values.
    #[inline]
    pub fn gradient(&self, corner_vals: &[f64], q: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.coeff[(q * self.dim + i) * self.corners..][..self.corners];
            *o = row
                .iter()
                .zip(corner_vals.iter())
                .map(|(c, u)| c * u)
                .sum();
        }
    }
}

/// Build and classify the truncated grid.
pub fn build_grid(
    obstacle_set: ObstacleSet,
    r_far: f64,
    h: f64,
) -> Result<ExteriorGrid, GeometryError> {
    if !(h > 0.0) {
        return Err(GeometryError::InvalidObstacleSet(format!(
            "grid spacing {h} must be positive"
        )));
    }
    let extent = obstacle_set.extent_from_origin();
    if extent > 0.5 * r_far {
        return Err(GeometryError::TruncationTooTight {
            extent,
            half: 0.5 * r_far,
        });
    }
    if let Some((_, _, gap)) = obstacle_set.worst_pair_gap() {
        if gap < 3.0 * h {
            return Err(GeometryError::GapUnresolved { gap, min: 3.0 * h });
        }
    }

    let n = obstacle_set.dim();
    let half_cells = (r_far / h).floor() as usize;
    let nodes_per_axis = 2 * half_cells + 1;
    let origin = -(half_cells as f64) * h;
    let node_count = nodes_per_axis.pow(n as u32);
    let mut strides = vec![0usize; n];
    let mut s = 1usize;
    for (i, st) in strides.iter_mut().enumerate() {
        let _ = i;
        *st = s;
        s *= nodes_per_axis;
    }

    let grid_shell = ExteriorGrid {
        obstacle_set,
        r_far,
        h,
        nodes_per_axis,
        origin,
        strides: strides.clone(),
        tags: Vec::new(),
        active_cells: Vec::new(),
        corner_offsets: Vec::new(),
        boundary_nodes: Vec::new(),
        interior_count: 0,
        boundary_component_count: 0,
    };

    // Pass 1: obstacle membership and far-field band.
    let raw: Vec<u8> = (0..node_count)
        .into_par_iter()
        .map(|node| {
            let p = grid_shell.node_point(node);
            if grid_shell.obstacle_set.inside_any(&p) {
                0u8 // obstacle
            } else if norm(&p) >= r_far - h {
                3u8 // farfield
            } else {
                2u8 // interior, maybe boundary
            }
        })
        .collect();

    // Pass 2: boundary crust = exterior nodes with an axis neighbor inside
    // an obstacle; such nodes are within h of the surface.
    let tags: Vec<NodeTag> = (0..node_count)
        .into_par_iter()
        .map(|node| match raw[node] {
            0 => NodeTag::Obstacle,
            3 => NodeTag::Farfield,
            _ => {
                let multi = grid_shell.multi_index(node);
                for i in 0..n {
                    for dir in [-1isize, 1] {
                        let mi = multi[i] as isize + dir;
                        if mi < 0 || mi >= nodes_per_axis as isize {
                            continue;
                        }
                        let nb = (node as isize + dir * strides[i] as isize) as usize;
                        if raw[nb] == 0 {
                            return NodeTag::Boundary;
                        }
                    }
                }
                NodeTag::Interior
            }
        })
        .collect();

    // Every obstacle must be visible to the lattice.
    {
        let mut seen = vec![false; grid_shell.obstacle_set.len()];
        for node in 0..node_count {
            if tags[node] == NodeTag::Obstacle {
                let p = grid_shell.node_point(node);
                let (_, idx) = grid_shell.obstacle_set.nearest(&p);
                seen[idx] = true;
            }
        }
        if let Some(idx) = seen.iter().position(|s| !s) {
            return Err(GeometryError::ObstacleUnresolved { index: idx, h });
        }
    }

    // Active cells: no obstacle corner, center inside the truncation ball,
    // at least one non-farfield corner.
    let corner_offsets: Vec<usize> = (0..(1usize << n))
        .map(|b| {
            (0..n)
                .filter(|i| b >> i & 1 == 1)
                .map(|i| strides[i])
                .sum()
        })
        .collect();
    let cells_per_axis = nodes_per_axis - 1;
    let cell_count = cells_per_axis.pow(n as u32);
    let active_cells: Vec<u32> = (0..cell_count)
        .into_par_iter()
        .filter_map(|cell| {
            // cell multi-index -> base node index
            let mut rem = cell;
            let mut base = 0usize;
            for i in 0..n {
                base += (rem % cells_per_axis) * strides[i];
                rem /= cells_per_axis;
            }
            let mut any_domain = false;
            for off in &corner_offsets {
                match tags[base + off] {
                    NodeTag::Obstacle => return None,
                    NodeTag::Farfield => {}
                    _ => any_domain = true,
                }
            }
            if !any_domain {
                return None;
            }
            let c = grid_shell.cell_center(base);
            if norm(&c) > r_far + 1e-12 {
                return None;
            }
            Some(base as u32)
        })
        .collect();

    let boundary_nodes: Vec<u32> = tags
        .iter()
        .enumerate()
        .filter(|(_, t)| **t == NodeTag::Boundary)
        .map(|(i, _)| i as u32)
        .collect();
    let interior_count = tags.iter().filter(|t| **t == NodeTag::Interior).count();

    let mut grid = ExteriorGrid {
        tags,
        active_cells,
        corner_offsets,
        boundary_nodes,
        interior_count,
        ..grid_shell
    };

    check_connectivity(&grid)?;
    grid.boundary_component_count = boundary_components(&grid);
    Ok(grid)
}

/// Flood fill over interior+boundary nodes; every interior node must be
/// reachable from the first one.
fn check_connectivity(grid: &ExteriorGrid) -> Result<(), GeometryError> {
    let n = grid.dim();
    let total = grid.node_count();
    let mut visited = vec![false; total];
    let start = match (0..total).find(|&i| grid.tag(i) == NodeTag::Interior) {
        Some(s) => s,
        None => return Ok(()), // degenerate but not disconnected
    };
    let mut stack = vec![start];
    visited[start] = true;
    let mut reached = 0usize;
    while let Some(node) = stack.pop() {
        if grid.tag(node) == NodeTag::Interior {
            reached += 1;
        }
        let multi = grid.multi_index(node);
        for i in 0..n {
            for dir in [-1isize, 1] {
                let mi = multi[i] as isize + dir;
                if mi < 0 || mi >= grid.nodes_per_axis as isize {
                    continue;
                }
                let nb = (node as isize + dir * grid.strides[i] as isize) as usize;
                if !visited[nb] && matches!(grid.tag(nb), NodeTag::Interior | NodeTag::Boundary) {
                    visited[nb] = true;
                    stack.push(nb);
                }
            }
        }
    }
    if reached != grid.interior_count {
        return Err(GeometryError::DisconnectedInterior);
    }
    Ok(())
}

/// Connected components of the boundary crust under full lattice
/// (diagonal-inclusive) adjacency.
fn boundary_components(grid: &ExteriorGrid) -> usize {
    let n = grid.dim();
    let nodes = grid.boundary_nodes();
    let mut comp = 0usize;
    let mut seen = std::collections::HashSet::new();
    for &start in nodes {
        let start = start as usize;
        if seen.contains(&start) {
            continue;
        }
        comp += 1;
        let mut stack = vec![start];
        seen.insert(start);
        while let Some(node) = stack.pop() {
            let multi = grid.multi_index(node);
            // 3^n - 1 neighbors
            let mut offsets = vec![0isize];
            for i in 0..n {
                let mut next = Vec::with_capacity(offsets.len() * 3);
                for o in &offsets {
                    for d in [-1isize, 0, 1] {
                        let mi = multi[i] as isize + d;
                        if mi < 0 || mi >= grid.nodes_per_axis as isize {
                            continue;
                        }
                        next.push(o + d * grid.strides[i] as isize);
                    }
                }
                offsets = next;
            }
            for o in offsets {
                if o == 0 {
                    continue;
                }
                let nb = (node as isize + o) as usize;
                if grid.tag(nb) == NodeTag::Boundary && seen.insert(nb) {
                    stack.push(nb);
                }
            }
        }
    }
    comp
}

/// True iff every inner point of the open segment (x, y), sampled at
/// resolution h/4, lies outside all obstacle interiors.
pub fn segment_clear(x: &[f64], y: &[f64], grid: &ExteriorGrid) -> bool {
    let length = dist(x, y);
    if length < 1e-14 {
        return true;
    }
    let step = grid.spacing() / 4.0;
    let k = (length / step).ceil() as usize;
    let mut p = vec![0.0; x.len()];
    for i in 1..k {
        let t = i as f64 / k as f64;
        for (j, pj) in p.iter_mut().enumerate() {
            *pj = x[j] + t * (y[j] - x[j]);
        }
        let (d, _) = grid.obstacle_set().nearest(&p);
        if d < -1e-9 {
            return false;
        }
    }
    true
}

/// Nearest point on the analytic obstacle surface and the obstacle index.
pub fn project_to_boundary(
    x: &[f64],
    grid: &ExteriorGrid,
) -> Result<(Vec<f64>, usize), GeometryError> {
    let (d, idx) = grid.obstacle_set().nearest(x);
    if d.abs() > 2.0 * grid.spacing() {
        return Err(GeometryError::NotNearBoundary { dist: d });
    }
    Ok((grid.obstacle_set().obstacles()[idx].project_to_surface(x), idx))
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

//! Nodal scalar fields over an [`ExteriorGrid`] and the feasibility audit
//! for the gradient constraint |∇u| ≤ 1.

use std::sync::Arc;

use crate::geometry::{CellQuadrature, ExteriorGrid, NodeTag};

/// A scalar field given by one value per grid node. Obstacle nodes carry a
/// value for storage convenience but never enter any cell sum. When
/// `pinned` is set, boundary nodes carry the boundary datum and far-field
/// nodes carry zero; the optimizer only ever updates interior nodes.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<ExteriorGrid>,
    values: Vec<f64>,
    pinned: bool,
}

impl ScalarField {
    pub fn zero(grid: Arc<ExteriorGrid>) -> Self {
        let n = grid.node_count();
        ScalarField {
            grid,
            values: vec![0.0; n],
            pinned: true,
        }
    }

    pub fn from_values(grid: Arc<ExteriorGrid>, values: Vec<f64>, pinned: bool) -> Self {
        assert_eq!(values.len(), grid.node_count());
        ScalarField {
            grid,
            values,
            pinned,
        }
    }

    /// Sample a function of the node coordinates at every non-obstacle node.
    /// Far-field nodes are set to zero when `pinned`.
    pub fn from_fn(grid: Arc<ExteriorGrid>, pinned: bool, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut values = vec![0.0; grid.node_count()];
        for (node, v) in values.iter_mut().enumerate() {
            match grid.tag(node) {
                NodeTag::Obstacle => {}
                NodeTag::Farfield if pinned => {}
                _ => *v = f(&grid.node_point(node)),
            }
        }
        ScalarField {
            grid,
            values,
            pinned,
        }
    }

    pub fn grid(&self) -> &Arc<ExteriorGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn pinned(&self) -> bool {
        self.pinned
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid)
    }

    /// Max |u| over non-obstacle nodes.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.grid.tag(*i) != NodeTag::Obstacle)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max)
    }

    /// Max gradient magnitude over the Gauss points of all active cells
    /// (the measure the discrete energy sees), with the base node of the
    /// worst cell.
    pub fn max_cell_gradient(&self) -> (f64, usize) {
        let n = self.grid.dim();
        let quad = CellQuadrature::new(&self.grid);
        let mut corners = vec![0.0; self.grid.corner_offsets().len()];
        let mut g = vec![0.0; n];
        let mut worst = (0.0f64, 0usize);
        for &base in self.grid.active_cells() {
            let base = base as usize;
            self.grid.gather_corners(&self.values, base, &mut corners);
            for q in 0..quad.point_count() {
                quad.gradient(&corners, q, &mut g);
                let mag = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                if mag > worst.0 {
                    worst = (mag, base);
                }
            }
        }
        worst
    }

    /// Count of active cells with some Gauss-point gradient magnitude
    /// above `1 - band`.
    pub fn near_degenerate_cells(&self, band: f64) -> usize {
        let n = self.grid.dim();
        let quad = CellQuadrature::new(&self.grid);
        let mut corners = vec![0.0; self.grid.corner_offsets().len()];
        let mut g = vec![0.0; n];
        let mut count = 0;
        let cut = (1.0 - band) * (1.0 - band);
        for &base in self.grid.active_cells() {
            self.grid.gather_corners(&self.values, base as usize, &mut corners);
            for q in 0..quad.point_count() {
                quad.gradient(&corners, q, &mut g);
                let sq: f64 = g.iter().map(|x| x * x).sum();
                if sq > cut {
                    count += 1;
                    break;
                }
            }
        }
        count
    }

    /// a*x + b*y into a fresh field (grids must match; both pinned states
    /// combine only when compatible).
    pub fn axpby(a: f64, x: &ScalarField, b: f64, y: &ScalarField) -> ScalarField {
        assert!(x.same_grid(y));
        let values = x
            .values
            .iter()
            .zip(y.values.iter())
            .map(|(xv, yv)| a * xv + b * yv)
            .collect();
        ScalarField {
            grid: x.grid.clone(),
            values,
            pinned: x.pinned && y.pinned,
        }
    }
}

//! The discrete energy 𝓘 = 𝓘₀ + 𝒢, its first variation, the
//! frozen-coefficient functional, and the coercivity bound.
//!
//! Discretization: nodal multilinear elements. The area term is
//! integrated with the tensor 2-point Gauss rule (full integration — the
//! one-point center rule leaves checkerboard modes energy-free); the
//! zeroth-order potential term uses one cell-center point. Gradients at
//! quadrature points are linear in nodal values, so the discrete area
//! term inherits exact convexity, and `first_variation` is the exact
//! derivative of the discrete energy.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::expr::CoordExpr;
use crate::field::ScalarField;
use crate::geometry::{CellQuadrature, ExteriorGrid};
use crate::quad::{self, QuadError};

#[derive(Debug, Error)]
pub enum FunctionalError {
    #[error("field infeasible: cell {cell} has |grad u| = {mag:.6} > 1")]
    InfeasibleField { cell: usize, mag: f64 },
    #[error("degenerate cell {cell}: |grad u| = {mag:.17} too close to 1")]
    DegenerateCell { cell: usize, mag: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("invalid curvature spec: {0}")]
    InvalidSpec(String),
}

pub type XtFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type XFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type TFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The prescribed curvature H(x, t) in one of the recognized forms.
#[derive(Clone)]
pub enum CurvatureForm {
    Zero,
    XOnly {
        f: XFn,
    },
    /// H(x,t) = f(x) · g(t); `g_primitive` is ∫₀ᵗ g when known in closed
    /// form (otherwise quadrature).
    Separable {
        f: XFn,
        g: TFn,
        g_primitive: Option<TFn>,
    },
    General {
        h: XtFn,
        /// ∫₀ᵗ H(x,σ) dσ when known in closed form.
        primitive: Option<XtFn>,
    },
}

#[derive(Clone)]
pub struct CurvatureSpec {
    pub form: CurvatureForm,
    /// Envelope h(x) with n|H(x,t)| ≤ h(x); defaults to n|H(x)| for the
    /// zero and x-only forms.
    pub envelope: Option<XFn>,
    /// Exponent s of the envelope integrability assumption.
    pub s_exponent: f64,
    pub label: String,
}

impl std::fmt::Debug for CurvatureSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CurvatureSpec({}, s={})", self.label, self.s_exponent)
    }
}

impl CurvatureSpec {
    pub fn zero() -> Self {
        CurvatureSpec {
            form: CurvatureForm::Zero,
            envelope: None,
            s_exponent: 1.0,
            label: "H=0".into(),
        }
    }

    pub fn x_only(f: XFn, s_exponent: f64, label: &str) -> Self {
        CurvatureSpec {
            form: CurvatureForm::XOnly { f },
            envelope: None,
            s_exponent,
            label: label.into(),
        }
    }

    pub fn separable(
        f: XFn,
        g: TFn,
        g_primitive: Option<TFn>,
        envelope: XFn,
        s_exponent: f64,
        label: &str,
    ) -> Self {
        CurvatureSpec {
            form: CurvatureForm::Separable { f, g, g_primitive },
            envelope: Some(envelope),
            s_exponent,
            label: label.into(),
        }
    }

    pub fn general(h: XtFn, envelope: XFn, s_exponent: f64, label: &str) -> Self {
        CurvatureSpec {
            form: CurvatureForm::General { h, primitive: None },
            envelope: Some(envelope),
            s_exponent,
            label: label.into(),
        }
    }

    /// Build the general form from expression strings in x1..xn and t.
    pub fn from_exprs(
        h_src: &str,
        envelope_src: Option<&str>,
        s_exponent: f64,
        dim: usize,
    ) -> Result<Self, FunctionalError> {
        let h = CoordExpr::parse(h_src, dim, true)
            .map_err(|e| FunctionalError::InvalidSpec(e.to_string()))?;
        let env = match envelope_src {
            Some(src) => Some(
                CoordExpr::parse(src, dim, false)
                    .map_err(|e| FunctionalError::InvalidSpec(e.to_string()))?,
            ),
            None => None,
        };
        let label = format!("H={h_src}");
        let hh = h.clone();
        let h_fn: XtFn = Arc::new(move |x, t| hh.eval_with_t(x, t));
        let spec = match env {
            Some(env) => {
                let env_fn: XFn = Arc::new(move |x| env.eval(x));
                CurvatureSpec::general(h_fn, env_fn, s_exponent, &label)
            }
            None => {
                // Without a declared envelope the rule must be t-free.
                let f = h.clone();
                CurvatureSpec::x_only(Arc::new(move |x| f.eval(x)), s_exponent, &label)
            }
        };
        Ok(spec)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.form, CurvatureForm::Zero)
    }

    pub fn dimensionless_h(&self, x: &[f64], t: f64) -> f64 {
        match &self.form {
            CurvatureForm::Zero => 0.0,
            CurvatureForm::XOnly { f } => f(x),
            CurvatureForm::Separable { f, g, .. } => f(x) * g(t),
            CurvatureForm::General { h, .. } => h(x, t),
        }
    }

    /// Envelope value at x (the bound on n|H(x,·)|).
    pub fn envelope_at(&self, x: &[f64], dim: usize) -> f64 {
        match (&self.envelope, &self.form) {
            (Some(e), _) => e(x),
            (None, CurvatureForm::Zero) => 0.0,
            (None, CurvatureForm::XOnly { f }) => dim as f64 * f(x).abs(),
            _ => f64::INFINITY,
        }
    }

    /// Spot-check the assumption n|H(x,t)| ≤ h(x) on sample points over
    /// the stated t range.
    pub fn audit_envelope(
        &self,
        points: &[Vec<f64>],
        t_span: (f64, f64),
        dim: usize,
    ) -> Result<(), FunctionalError> {
        for p in points {
            let env = self.envelope_at(p, dim);
            for k in 0..=8 {
                let t = t_span.0 + (t_span.1 - t_span.0) * k as f64 / 8.0;
                let nh = dim as f64 * self.dimensionless_h(p, t).abs();
                if nh > env + 1e-9 {
                    return Err(FunctionalError::InvalidSpec(format!(
                        "envelope violated at x={p:?}, t={t}: n|H| = {nh} > h = {env}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// G(x, t) = n ∫₀ᵗ H(x, σ) dσ: closed form where available, adaptive
/// quadrature (tolerance 1e−10) otherwise.
pub fn potential_g(x: &[f64], t: f64, spec: &CurvatureSpec, dim: usize) -> Result<f64, QuadError> {
    let n = dim as f64;
    match &spec.form {
        CurvatureForm::Zero => Ok(0.0),
        CurvatureForm::XOnly { f } => Ok(n * f(x) * t),
        CurvatureForm::Separable {
            f,
            g,
            g_primitive,
        } => match g_primitive {
            Some(p) => Ok(n * f(x) * p(t)),
            None => Ok(n * f(x) * quad::adaptive(|s| g(s), 0.0, t, 1e-10)?),
        },
        CurvatureForm::General { h, primitive } => match primitive {
            Some(p) => Ok(n * p(x, t)),
            None => Ok(n * quad::adaptive(|s| h(x, s), 0.0, t, 1e-10)?),
        },
    }
}

/// Per-grid compilation of a curvature spec: x-dependent factors cached at
/// cell centers so the hot loops never re-evaluate closures over x.
pub struct CompiledCurvature {
    spec: CurvatureSpec,
    grid: Arc<ExteriorGrid>,
    /// n·f(x_cell) per active cell for the zero/x-only/separable forms;
    /// cell centers for the general form.
    nf_cells: Vec<f64>,
    centers: Vec<Vec<f64>>,
    /// Discrete ‖h‖_s of the envelope over active cells.
    envelope_norm: f64,
}

impl CompiledCurvature {
    pub fn compile(spec: CurvatureSpec, grid: Arc<ExteriorGrid>) -> Result<Self, FunctionalError> {
        let n = grid.dim() as f64;
        if spec.s_exponent < 1.0 || spec.s_exponent > 2.0 * n / (n + 2.0) + 1e-12 {
            return Err(FunctionalError::InvalidSpec(format!(
                "exponent s = {} outside [1, 2n/(n+2)] = [1, {}]",
                spec.s_exponent,
                2.0 * n / (n + 2.0)
            )));
        }
        let cells = grid.active_cells();
        let mut nf_cells = Vec::new();
        let mut centers = Vec::new();
        match &spec.form {
            CurvatureForm::Zero => {}
            CurvatureForm::XOnly { f } | CurvatureForm::Separable { f, .. } => {
                nf_cells = cells
                    .iter()
                    .map(|&b| n * f(&grid.cell_center(b as usize)))
                    .collect();
            }
            CurvatureForm::General { .. } => {
                centers = cells
                    .iter()
                    .map(|&b| grid.cell_center(b as usize))
                    .collect();
            }
        }
        let vol = grid.cell_volume();
        let s = spec.s_exponent;
        let envelope_norm = if spec.is_zero() {
            0.0
        } else {
            let terms: Vec<f64> = cells
                .iter()
                .map(|&b| {
                    let c = grid.cell_center(b as usize);
                    spec.envelope_at(&c, grid.dim()).powf(s) * vol
                })
                .collect();
            quad::stable_sum(&terms).powf(1.0 / s)
        };
        if !envelope_norm.is_finite() {
            return Err(FunctionalError::InvalidSpec(
                "envelope has non-finite discrete L^s norm".into(),
            ));
        }
        Ok(CompiledCurvature {
            spec,
            grid,
            nf_cells,
            centers,
            envelope_norm,
        })
    }

    pub fn spec(&self) -> &CurvatureSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Arc<ExteriorGrid> {
        &self.grid
    }

    pub fn envelope_norm(&self) -> f64 {
        self.envelope_norm
    }

    pub fn is_zero(&self) -> bool {
        self.spec.is_zero()
    }

    /// n·H at the center of active cell `k`, at height t.
    #[inline]
    pub fn nh_at(&self, k: usize, t: f64) -> f64 {
        match &self.spec.form {
            CurvatureForm::Zero => 0.0,
            CurvatureForm::XOnly { .. } => self.nf_cells[k],
            CurvatureForm::Separable { g, .. } => self.nf_cells[k] * g(t),
            CurvatureForm::General { h, .. } => self.grid.dim() as f64 * h(&self.centers[k], t),
        }
    }

    /// G(x_k, t) = n ∫₀ᵗ H at the center of active cell `k`.
    #[inline]
    pub fn big_g_at(&self, k: usize, t: f64) -> Result<f64, QuadError> {
        match &self.spec.form {
            CurvatureForm::Zero => Ok(0.0),
            CurvatureForm::XOnly { .. } => Ok(self.nf_cells[k] * t),
            CurvatureForm::Separable { g, g_primitive, .. } => match g_primitive {
                Some(p) => Ok(self.nf_cells[k] * p(t)),
                None => Ok(self.nf_cells[k] * quad::adaptive(|s| g(s), 0.0, t, 1e-10)?),
            },
            CurvatureForm::General { h, primitive } => {
                let x = &self.centers[k];
                let n = self.grid.dim() as f64;
                match primitive {
                    Some(p) => Ok(n * p(x, t)),
                    None => Ok(n * quad::adaptive(|s| h(x, s), 0.0, t, 1e-10)?),
                }
            }
        }
    }
}

/// Energy decomposition plus the norms of the coercivity chain.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyBreakdown {
    pub area: f64,
    pub potential: f64,
    pub total: f64,
    pub grad_l2: f64,
    pub u_dual_norm: f64,
}

struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn new() -> Self {
        Kahan { sum: 0.0, c: 0.0 }
    }
    #[inline]
    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

const FEAS_TOL: f64 = 1e-12;
const DEGEN_TOL: f64 = 1e-14;

/// 𝓘₀(u) = Σ_cells Σ_q w_q (1 − √(1 − |∇u(ξ_q)|²)) · h^n over active
/// cells and Gauss points. Tolerates |∇u| = 1 (contribution 1 per unit
/// volume).
pub fn area_energy(u: &ScalarField) -> Result<f64, FunctionalError> {
    let grid = u.grid();
    let n = grid.dim();
    let quad = CellQuadrature::new(grid);
    let wvol = quad.weight() * grid.cell_volume();
    let mut corners = vec![0.0; grid.corner_offsets().len()];
    let mut g = vec![0.0; n];
    let mut acc = Kahan::new();
    for &base in grid.active_cells() {
        let base = base as usize;
        grid.gather_corners(u.values(), base, &mut corners);
        for q in 0..quad.point_count() {
            quad.gradient(&corners, q, &mut g);
            let sq: f64 = g.iter().map(|x| x * x).sum();
            if sq > 1.0 + 2.0 * FEAS_TOL {
                return Err(FunctionalError::InfeasibleField {
                    cell: base,
                    mag: sq.sqrt(),
                });
            }
            acc.add((1.0 - (1.0 - sq).max(0.0).sqrt()) * wvol);
        }
    }
    Ok(acc.sum)
}

/// 𝒢(u) = Σ_cells G(x_cell, ū_cell) · h^n, together with the Hölder bound
/// ‖h‖_s ‖u‖_{s'}.
pub fn potential_energy(
    u: &ScalarField,
    cc: &CompiledCurvature,
) -> Result<(f64, f64), FunctionalError> {
    let grid = u.grid();
    let vol = grid.cell_volume();
    let mut acc = Kahan::new();
    for (k, &base) in grid.active_cells().iter().enumerate() {
        let mean = grid.cell_mean(u.values(), base as usize);
        acc.add(cc.big_g_at(k, mean)? * vol);
    }
    let bound = cc.envelope_norm() * dual_norm(u, cc.spec().s_exponent);
    debug_assert!(
        acc.sum.abs() <= bound + 1e-9 * (1.0 + bound),
        "Hölder bound violated: |G| = {} > {}",
        acc.sum.abs(),
        bound
    );
    Ok((acc.sum, bound))
}

/// Discrete ‖∇u‖₂ over active cells (Gauss quadrature; exact for the
/// multilinear interpolant).
pub fn grad_l2_norm(u: &ScalarField) -> f64 {
    let grid = u.grid();
    let n = grid.dim();
    let quad = CellQuadrature::new(grid);
    let wvol = quad.weight() * grid.cell_volume();
    let mut corners = vec![0.0; grid.corner_offsets().len()];
    let mut g = vec![0.0; n];
    let mut acc = Kahan::new();
    for &base in grid.active_cells() {
        grid.gather_corners(u.values(), base as usize, &mut corners);
        for q in 0..quad.point_count() {
            quad.gradient(&corners, q, &mut g);
            acc.add(g.iter().map(|x| x * x).sum::<f64>() * wvol);
        }
    }
    acc.sum.sqrt()
}

/// Discrete ‖u‖_{s'} with s' = s/(s−1) (cell means; s = 1 gives the sup).
pub fn dual_norm(u: &ScalarField, s: f64) -> f64 {
    let grid = u.grid();
    let vol = grid.cell_volume();
    if (s - 1.0).abs() < 1e-12 {
        let mut m = 0.0f64;
        for &base in grid.active_cells() {
            m = m.max(grid.cell_mean(u.values(), base as usize).abs());
        }
        return m;
    }
    let sp = s / (s - 1.0);
    let mut acc = Kahan::new();
    for &base in grid.active_cells() {
        acc.add(grid.cell_mean(u.values(), base as usize).abs().powf(sp) * vol);
    }
    acc.sum.powf(1.0 / sp)
}

pub fn total_energy(
    u: &ScalarField,
    cc: &CompiledCurvature,
) -> Result<EnergyBreakdown, FunctionalError> {
    let area = area_energy(u)?;
    let (potential, _) = potential_energy(u, cc)?;
    Ok(EnergyBreakdown {
        area,
        potential,
        total: area + potential,
        grad_l2: grad_l2_norm(u),
        u_dual_norm: dual_norm(u, cc.spec().s_exponent),
    })
}

/// δ𝓘(u)[v] = Σ_q w_q ∇u·∇v/√(1−|∇u|²) h^n + Σ n H(x_c, ū_c) v̄_c h^n.
/// Exact derivative of the discrete energy; v must vanish at pinned nodes.
pub fn first_variation(
    u: &ScalarField,
    v: &ScalarField,
    cc: &CompiledCurvature,
) -> Result<f64, FunctionalError> {
    assert!(u.same_grid(v));
    let grid = u.grid();
    let n = grid.dim();
    let quad = CellQuadrature::new(grid);
    let vol = grid.cell_volume();
    let wvol = quad.weight() * vol;
    let mut cu = vec![0.0; grid.corner_offsets().len()];
    let mut cv = vec![0.0; grid.corner_offsets().len()];
    let mut gu = vec![0.0; n];
    let mut gv = vec![0.0; n];
    let mut acc = Kahan::new();
    for (k, &base) in grid.active_cells().iter().enumerate() {
        let base = base as usize;
        grid.gather_corners(u.values(), base, &mut cu);
        grid.gather_corners(v.values(), base, &mut cv);
        let mut term = 0.0;
        for q in 0..quad.point_count() {
            quad.gradient(&cu, q, &mut gu);
            let sq: f64 = gu.iter().map(|x| x * x).sum();
            if sq >= 1.0 - DEGEN_TOL {
                return Err(FunctionalError::DegenerateCell {
                    cell: base,
                    mag: sq.sqrt(),
                });
            }
            quad.gradient(&cv, q, &mut gv);
            let dot: f64 = gu.iter().zip(gv.iter()).map(|(a, b)| a * b).sum();
            term += dot / (1.0 - sq).sqrt() * wvol;
        }
        if !cc.is_zero() {
            let mean_u = grid.cell_mean(u.values(), base);
            let mean_v = grid.cell_mean(v.values(), base);
            term += cc.nh_at(k, mean_u) * mean_v * vol;
        }
        acc.add(term);
    }
    Ok(acc.sum)
}

/// The nodal Euler–Lagrange residual: g_i = δ𝓘(u)[e_i] for every free
/// node i, zero at pinned nodes. Assembled in one cell sweep.
pub fn residual_gradient(
    u: &ScalarField,
    cc: &CompiledCurvature,
) -> Result<ScalarField, FunctionalError> {
    let grid = u.grid().clone();
    let n = grid.dim();
    let quad = CellQuadrature::new(&grid);
    let vol = grid.cell_volume();
    let wvol = quad.weight() * vol;
    let corners = grid.corner_offsets().to_vec();
    let inv_corners = 1.0 / corners.len() as f64;
    let mut cu = vec![0.0; corners.len()];
    let mut g = vec![0.0; n];
    let mut out = vec![0.0; grid.node_count()];
    for (k, &base) in grid.active_cells().iter().enumerate() {
        let base = base as usize;
        grid.gather_corners(u.values(), base, &mut cu);
        let nh = if cc.is_zero() {
            0.0
        } else {
            let mean_u = grid.cell_mean(u.values(), base);
            cc.nh_at(k, mean_u) * vol * inv_corners
        };
        for q in 0..quad.point_count() {
            quad.gradient(&cu, q, &mut g);
            let sq: f64 = g.iter().map(|x| x * x).sum();
            if sq >= 1.0 - DEGEN_TOL {
                return Err(FunctionalError::DegenerateCell {
                    cell: base,
                    mag: sq.sqrt(),
                });
            }
            let w = wvol / (1.0 - sq).sqrt();
            for (b, off) in corners.iter().enumerate() {
                let mut d = 0.0;
                for (i, gi) in g.iter().enumerate() {
                    d += gi * quad.coeff(q, i, b);
                }
                out[base + off] += w * d;
            }
        }
        if nh != 0.0 {
            for off in corners.iter() {
                out[base + off] += nh;
            }
        }
    }
    for (node, o) in out.iter_mut().enumerate() {
        if !grid.is_free(node) {
            *o = 0.0;
        }
    }
    Ok(ScalarField::from_values(grid, out, true))
}

/// Diagonal of the area Hessian in the nodal basis:
/// D_i = Σ_q w_q h^n [ |∇N_i|²/√(1−|∇u|²) + (∇u·∇N_i)²/(1−|∇u|²)^{3/2} ],
/// zero at pinned nodes. The barrier factor makes D the natural Jacobi
/// preconditioner: flat cells reduce to the h^{n−2} Laplacian scale while
/// near-degenerate cells are weighted up by (1−|∇u|²)^{−3/2}.
pub fn hessian_diag(u: &ScalarField) -> Result<Vec<f64>, FunctionalError> {
    let grid = u.grid().clone();
    let n = grid.dim();
    let quad = CellQuadrature::new(&grid);
    let wvol = quad.weight() * grid.cell_volume();
    let corners = grid.corner_offsets().to_vec();
    // |∇N_b|² at each quadrature point is field-independent
    let mut basis_sq = vec![0.0; quad.point_count() * corners.len()];
    for q in 0..quad.point_count() {
        for b in 0..corners.len() {
            basis_sq[q * corners.len() + b] =
                (0..n).map(|i| quad.coeff(q, i, b).powi(2)).sum();
        }
    }
    let mut cu = vec![0.0; corners.len()];
    let mut g = vec![0.0; n];
    let mut out = vec![0.0; grid.node_count()];
    for &base in grid.active_cells() {
        let base = base as usize;
        grid.gather_corners(u.values(), base, &mut cu);
        for q in 0..quad.point_count() {
            quad.gradient(&cu, q, &mut g);
            let sq: f64 = g.iter().map(|x| x * x).sum();
            if sq >= 1.0 - DEGEN_TOL {
                return Err(FunctionalError::DegenerateCell {
                    cell: base,
                    mag: sq.sqrt(),
                });
            }
            let om = 1.0 - sq;
            let w1 = wvol / om.sqrt();
            let w3 = wvol / (om * om.sqrt());
            for (b, off) in corners.iter().enumerate() {
                let mut d = 0.0;
                for (i, gi) in g.iter().enumerate() {
                    d += gi * quad.coeff(q, i, b);
                }
                out[base + off] += w1 * basis_sq[q * corners.len() + b] + w3 * d * d;
            }
        }
    }
    for (node, o) in out.iter_mut().enumerate() {
        if !grid.is_free(node) {
            *o = 0.0;
        }
    }
    Ok(out)
}

/// 𝓘*(v) with coefficients frozen along u_ref:
/// 𝓘₀(v) + Σ n H(x_c, ū_ref_c) v̄_c h^n.
pub fn frozen_energy(
    v: &ScalarField,
    u_ref: &ScalarField,
    cc: &CompiledCurvature,
) -> Result<f64, FunctionalError> {
    assert!(v.same_grid(u_ref));
    let area = area_energy(v)?;
    if cc.is_zero() {
        return Ok(area);
    }
    let grid = v.grid();
    let vol = grid.cell_volume();
    let mut acc = Kahan::new();
    for (k, &base) in grid.active_cells().iter().enumerate() {
        let base = base as usize;
        let mean_ref = grid.cell_mean(u_ref.values(), base);
        let mean_v = grid.cell_mean(v.values(), base);
        acc.add(cc.nh_at(k, mean_ref) * mean_v * vol);
    }
    Ok(area + acc.sum)
}

/// The coercivity chain 𝓘(u) ≥ ½‖∇u‖₂² − ‖h‖_s‖u‖_{s'} in discrete norms;
/// returns (lhs, rhs).
pub fn coercivity_bound(
    u: &ScalarField,
    cc: &CompiledCurvature,
) -> Result<(f64, f64), FunctionalError> {
    let e = total_energy(u, cc)?;
    let rhs = 0.5 * e.grad_l2 * e.grad_l2 - cc.envelope_norm() * e.u_dual_norm;
    Ok((e.total, rhs))
}

/// Plain energy value in one sweep, rejecting any cell whose gradient
/// magnitude exceeds `grad_cap`; the optimizer's line-search predicate.
pub fn energy_value_capped(
    u: &ScalarField,
    cc: &CompiledCurvature,
    grad_cap: f64,
) -> Result<f64, FunctionalError> {
    let grid = u.grid();
    let n = grid.dim();
    let quad = CellQuadrature::new(grid);
    let vol = grid.cell_volume();
    let wvol = quad.weight() * vol;
    let cap_sq = grad_cap * grad_cap;
    let mut cu = vec![0.0; grid.corner_offsets().len()];
    let mut g = vec![0.0; n];
    let mut acc = Kahan::new();
    for (k, &base) in grid.active_cells().iter().enumerate() {
        let base = base as usize;
        grid.gather_corners(u.values(), base, &mut cu);
        let mut term = 0.0;
        for q in 0..quad.point_count() {
            quad.gradient(&cu, q, &mut g);
            let sq: f64 = g.iter().map(|x| x * x).sum();
            if sq > cap_sq {
                return Err(FunctionalError::InfeasibleField {
                    cell: base,
                    mag: sq.sqrt(),
                });
            }
            term += (1.0 - (1.0 - sq).max(0.0).sqrt()) * wvol;
        }
        if !cc.is_zero() {
            term += cc.big_g_at(k, grid.cell_mean(u.values(), base))? * vol;
        }
        acc.add(term);
    }
    Ok(acc.sum)
}

/// Fused energy + residual used by the optimizer's hot loop; one sweep
/// over cells instead of three.
pub fn energy_and_gradient(
    u: &ScalarField,
    cc: &CompiledCurvature,
) -> Result<(f64, ScalarField), FunctionalError> {
    energy_and_gradient_capped(u, cc, f64::INFINITY)
}

/// `energy_and_gradient` that additionally rejects any cell whose gradient
/// magnitude exceeds `grad_cap` with `InfeasibleField`, so a line-search
/// trial can produce its gradient in the same sweep as its energy.
pub fn energy_and_gradient_capped(
    u: &ScalarField,
    cc: &CompiledCurvature,
    grad_cap: f64,
) -> Result<(f64, ScalarField), FunctionalError> {
    let cap_sq = grad_cap * grad_cap;
    let grid = u.grid().clone();
    let n = grid.dim();
    let quad = CellQuadrature::new(&grid);
    let vol = grid.cell_volume();
    let wvol = quad.weight() * vol;
    let corners = grid.corner_offsets().to_vec();
    let inv_corners = 1.0 / corners.len() as f64;
    let mut cu = vec![0.0; corners.len()];
    let mut g = vec![0.0; n];
    let mut out = vec![0.0; grid.node_count()];
    let mut acc = Kahan::new();
    for (k, &base) in grid.active_cells().iter().enumerate() {
        let base = base as usize;
        grid.gather_corners(u.values(), base, &mut cu);
        let mut cell_energy = 0.0;
        for q in 0..quad.point_count() {
            quad.gradient(&cu, q, &mut g);
            let sq: f64 = g.iter().map(|x| x * x).sum();
            if sq > cap_sq {
                return Err(FunctionalError::InfeasibleField {
                    cell: base,
                    mag: sq.sqrt(),
                });
            }
            if sq >= 1.0 - DEGEN_TOL {
                return Err(FunctionalError::DegenerateCell {
                    cell: base,
                    mag: sq.sqrt(),
                });
            }
            let root = (1.0 - sq).sqrt();
            cell_energy += (1.0 - root) * wvol;
            let w = wvol / root;
            for (b, off) in corners.iter().enumerate() {
                let mut d = 0.0;
                for (i, gi) in g.iter().enumerate() {
                    d += gi * quad.coeff(q, i, b);
                }
                out[base + off] += w * d;
            }
        }
        if !cc.is_zero() {
            let mean_u = grid.cell_mean(u.values(), base);
            cell_energy += cc.big_g_at(k, mean_u)? * vol;
            let nh = cc.nh_at(k, mean_u) * vol * inv_corners;
            for off in corners.iter() {
                out[base + off] += nh;
            }
        }
        acc.add(cell_energy);
    }
    for (node, o) in out.iter_mut().enumerate() {
        if !grid.is_free(node) {
            *o = 0.0;
        }
    }
    Ok((acc.sum, ScalarField::from_values(grid, out, true)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, norm, Obstacle, ObstacleSet};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_ball_grid(r_far: f64, h: f64) -> Arc<ExteriorGrid> {
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

    /// Smooth compactly supported random bump combination, scaled to a
    /// strictly feasible gradient.
    pub(crate) fn random_feasible(grid: &Arc<ExteriorGrid>, seed: u64, target: f64) -> ScalarField {
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
        // zero out pinned nodes, then scale to the target gradient
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

    fn zero_cc(grid: &Arc<ExteriorGrid>) -> CompiledCurvature {
        CompiledCurvature::compile(CurvatureSpec::zero(), grid.clone()).unwrap()
    }

    #[test]
    fn zero_field_zero_energy() {
        let grid = unit_ball_grid(6.0, 0.5);
        let u = ScalarField::zero(grid.clone());
        let e = total_energy(&u, &zero_cc(&grid)).unwrap();
        assert_eq!(e.total, 0.0);
        assert_eq!(e.area, 0.0);
    }

    #[test]
    fn linear_field_area_energy_exact() {
        // Unpinned linear field: each active cell contributes exactly
        // (1 - sqrt(1-0.36)) = 0.2 per unit volume.
        let grid = unit_ball_grid(6.0, 0.5);
        let u = ScalarField::from_fn(grid.clone(), false, |x| 0.6 * x[0]);
        let a = area_energy(&u).unwrap();
        let expected = 0.2 * grid.cell_count() as f64 * grid.cell_volume();
        assert!((a - expected).abs() < 1e-10 * expected, "{a} vs {expected}");
    }

    #[test]
    fn area_energy_rejects_infeasible() {
        let grid = unit_ball_grid(6.0, 0.5);
        let u = ScalarField::from_fn(grid.clone(), false, |x| 1.2 * x[0]);
        assert!(matches!(
            area_energy(&u),
            Err(FunctionalError::InfeasibleField { .. })
        ));
    }

    #[test]
    fn potential_g_closed_forms() {
        let grid = unit_ball_grid(6.0, 0.5);
        let dim = grid.dim();
        assert_eq!(potential_g(&[2.0, 0.0, 0.0], 5.0, &CurvatureSpec::zero(), dim).unwrap(), 0.0);
        let h0 = CurvatureSpec::x_only(Arc::new(|_| 0.7), 1.0, "const");
        let v = potential_g(&[2.0, 0.0, 0.0], 2.0, &h0, dim).unwrap();
        assert!((v - 3.0 * 0.7 * 2.0).abs() < 1e-14);
        // H(x,t) = t, t = 1, n = 3 -> 1.5, via quadrature path
        let ht = CurvatureSpec::general(Arc::new(|_, t| t), Arc::new(|_| 3.0), 1.0, "t");
        let v = potential_g(&[2.0, 0.0, 0.0], 1.0, &ht, dim).unwrap();
        assert!((v - 1.5).abs() < 1e-9, "{v}");
    }

    #[test]
    fn x_only_potential_linear_in_u() {
        let grid = unit_ball_grid(6.0, 0.5);
        let spec = CurvatureSpec::x_only(
            Arc::new(|x: &[f64]| (-norm(x)).exp()),
            1.0,
            "exp(-r)",
        );
        let cc = CompiledCurvature::compile(spec, grid.clone()).unwrap();
        let u = random_feasible(&grid, 3, 0.5);
        let (p1, _) = potential_energy(&u, &cc).unwrap();
        let u2 = ScalarField::axpby(2.0, &u, 0.0, &u);
        let (p2, _) = potential_energy(&u2, &cc).unwrap();
        assert!((p2 - 2.0 * p1).abs() < 1e-10 * (1.0 + p1.abs()), "{p2} vs {p1}");
    }

    #[test]
    fn breakdown_is_consistent() {
        let grid = unit_ball_grid(6.0, 0.5);
        let spec = CurvatureSpec::separable(
            Arc::new(|x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>()).exp()),
            Arc::new(|t| t),
            Some(Arc::new(|t| 0.5 * t * t)),
            Arc::new(|x: &[f64]| {
                3.0 * 2.0 * (-x.iter().map(|v| v * v).sum::<f64>()).exp()
            }),
            1.2,
            "t*gauss",
        );
        let cc = CompiledCurvature::compile(spec, grid.clone()).unwrap();
        let u = random_feasible(&grid, 11, 0.6);
        let e = total_energy(&u, &cc).unwrap();
        assert_eq!(e.total, e.area + e.potential);
        assert!(e.area >= 0.0);
    }

    #[test]
    fn first_variation_matches_finite_differences() {
        let grid = unit_ball_grid(6.0, 0.5);
        let spec = CurvatureSpec::separable(
            Arc::new(|x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>()).exp()),
            Arc::new(|t| t),
            Some(Arc::new(|t| 0.5 * t * t)),
            Arc::new(|x: &[f64]| 6.0 * (-x.iter().map(|v| v * v).sum::<f64>()).exp()),
            1.2,
            "t*gauss",
        );
        let cc = CompiledCurvature::compile(spec, grid.clone()).unwrap();
        let u = random_feasible(&grid, 5, 0.5);
        let v = random_feasible(&grid, 6, 0.4);
        let fv = first_variation(&u, &v, &cc).unwrap();
        let tau = 1e-5;
        let up = ScalarField::axpby(1.0, &u, tau, &v);
        let um = ScalarField::axpby(1.0, &u, -tau, &v);
        let ep = total_energy(&up, &cc).unwrap().total;
        let em = total_energy(&um, &cc).unwrap().total;
        let fd = (ep - em) / (2.0 * tau);
        assert!(
            (fv - fd).abs() <= 1e-6 * fd.abs().max(1e-6),
            "variation {fv} vs fd {fd}"
        );
    }

    #[test]
    fn first_variation_linear_in_v() {
        let grid = unit_ball_grid(6.0, 0.5);
        let cc = zero_cc(&grid);
        let u = random_feasible(&grid, 5, 0.5);
        let v1 = random_feasible(&grid, 8, 0.3);
        let v2 = random_feasible(&grid, 9, 0.3);
        let lhs = first_variation(&u, &ScalarField::axpby(2.0, &v1, -3.0, &v2), &cc).unwrap();
        let rhs = 2.0 * first_variation(&u, &v1, &cc).unwrap()
            - 3.0 * first_variation(&u, &v2, &cc).unwrap();
        assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn residual_gradient_matches_directional() {
        let grid = unit_ball_grid(6.0, 0.5);
        let cc = zero_cc(&grid);
        let u = random_feasible(&grid, 5, 0.5);
        let v = random_feasible(&grid, 12, 0.4);
        let g = residual_gradient(&u, &cc).unwrap();
        let dot: f64 = g
            .values()
            .iter()
            .zip(v.values().iter())
            .map(|(a, b)| a * b)
            .sum();
        let fv = first_variation(&u, &v, &cc).unwrap();
        assert!((dot - fv).abs() < 1e-9 * (1.0 + fv.abs()), "{dot} vs {fv}");
    }

    #[test]
    fn fused_matches_separate() {
        let grid = unit_ball_grid(6.0, 0.5);
        let spec = CurvatureSpec::separable(
            Arc::new(|x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>()).exp()),
            Arc::new(|t| t),
            Some(Arc::new(|t| 0.5 * t * t)),
            Arc::new(|x: &[f64]| 6.0 * (-x.iter().map(|v| v * v).sum::<f64>()).exp()),
            1.2,
            "t*gauss",
        );
        let cc = CompiledCurvature::compile(spec, grid.clone()).unwrap();
        let u = random_feasible(&grid, 21, 0.55);
        let (e, g) = energy_and_gradient(&u, &cc).unwrap();
        let e2 = total_energy(&u, &cc).unwrap().total;
        let g2 = residual_gradient(&u, &cc).unwrap();
        assert!((e - e2).abs() < 1e-11 * (1.0 + e2.abs()));
        for (a, b) in g.values().iter().zip(g2.values().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_energy_reductions() {
        let grid = unit_ball_grid(6.0, 0.5);
        let u = random_feasible(&grid, 5, 0.5);
        let v = random_feasible(&grid, 6, 0.5);
        // H = 0: frozen energy is the area energy.
        let cc = zero_cc(&grid);
        assert_eq!(
            frozen_energy(&v, &u, &cc).unwrap(),
            area_energy(&v).unwrap()
        );
        // x-only H: frozen energy equals the true energy for any u_ref.
        let spec = CurvatureSpec::x_only(Arc::new(|x: &[f64]| (-norm(x)).exp()), 1.0, "x-only");
        let cc = CompiledCurvature::compile(spec, grid.clone()).unwrap();
        let f = frozen_energy(&v, &u, &cc).unwrap();
        let t = total_energy(&v, &cc).unwrap().total;
        assert!((f - t).abs() < 1e-10 * (1.0 + t.abs()), "{f} vs {t}");
    }

    #[test]
    fn sandwich_and_convexity() {
        let grid = unit_ball_grid(6.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let t: f64 = rng.gen_range(0.0..1.0);
            let val = 1.0 - (1.0 - t).sqrt();
            assert!(0.5 * t <= val + 1e-12);
            assert!(val <= t + 1e-12);
        }
        let u = random_feasible(&grid, 31, 0.7);
        let v = random_feasible(&grid, 32, 0.7);
        let eu = area_energy(&u).unwrap();
        let ev = area_energy(&v).unwrap();
        for lam in [0.25, 0.5, 0.75] {
            let m = ScalarField::axpby(lam, &u, 1.0 - lam, &v);
            let em = area_energy(&m).unwrap();
            assert!(em <= lam * eu + (1.0 - lam) * ev + 1e-12);
        }
    }

    #[test]
    fn coercivity_zero_curvature() {
        let grid = unit_ball_grid(6.0, 0.5);
        let cc = zero_cc(&grid);
        let u = random_feasible(&grid, 41, 0.8);
        let (lhs, rhs) = coercivity_bound(&u, &cc).unwrap();
        assert!(lhs >= rhs - 1e-12, "{lhs} < {rhs}");
    }

    #[test]
    fn exponent_range_enforced() {
        let grid = unit_ball_grid(6.0, 0.5);
        let spec = CurvatureSpec::x_only(Arc::new(|_| 1.0), 1.5, "bad s");
        // 2n/(n+2) = 1.2 for n = 3
        assert!(matches!(
            CompiledCurvature::compile(spec, grid),
            Err(FunctionalError::InvalidSpec(_))
        ));
    }

    #[test]
    fn envelope_audit_catches_violation() {
        let spec = CurvatureSpec::general(
            Arc::new(|_, t| t),
            Arc::new(|_| 0.5),
            1.0,
            "unbounded",
        );
        let pts = vec![vec![2.0, 0.0, 0.0]];
        assert!(spec.audit_envelope(&pts, (0.0, 1.0), 3).is_err());
        assert!(spec.audit_envelope(&pts, (0.0, 0.1), 3).is_ok());
    }
}

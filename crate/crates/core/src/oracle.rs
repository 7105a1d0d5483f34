//! Independent radial reference solutions for H = 0 outside a centered
//! ball: the classical first integral gives
//!   u'(r) = −a / √(r^{2(n−1)} + a²),
//! so u is a pure quadrature. Used as ground truth by the acceptance
//! tests; deliberately shares no code with the energy discretization.

use std::sync::Arc;

use thiserror::Error;

use crate::field::ScalarField;
use crate::geometry::{norm, ExteriorGrid, Obstacle};
use crate::quad::{self, QuadError};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("boundary value {c} unattainable at r0 = {r0}")]
    Unattainable { c: f64, r0: f64 },
    #[error("grid is not a single origin-centered ball of radius {expected}")]
    GeometryMismatch { expected: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Tabulated radial solution u(r), r ∈ [r0, outer], with the convention
/// u(outer boundary) → 0: either the infinite-domain profile (decay at
/// infinity, with analytic tail) or a truncated profile vanishing at a
/// finite radius, matching the solver's far-field pinning.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub n: usize,
    pub a: f64,
    pub r0: f64,
    /// Some(R): u(R) = 0 at the truncation sphere; None: decay at infinity.
    pub truncated_at: Option<f64>,
    rs: Vec<f64>,
    us: Vec<f64>,
}

fn integrand(n: usize, a: f64, s: f64) -> f64 {
    a / (s.powi(2 * (n as i32 - 1)) + a * a).sqrt()
}

/// Analytic tail ∫_r^∞ a/s^{n−1} ds, valid once s^{2(n−1)} dominates a².
fn tail(n: usize, a: f64, r: f64) -> f64 {
    a * r.powi(2 - n as i32) / (n as f64 - 2.0)
}

fn tail_start(n: usize, a: f64) -> f64 {
    1e4 * a.abs().powf(1.0 / (n as f64 - 1.0)).max(1.0)
}

fn build_table(
    n: usize,
    a: f64,
    r0: f64,
    outer: f64,
    beyond: f64,
) -> Result<(Vec<f64>, Vec<f64>), QuadError> {
    // Fine enough that linear interpolation error is far below quadrature
    // tolerance for the smooth, slowly varying profile.
    let steps = (((outer - r0) / 0.002).ceil() as usize).clamp(64, 400_000);
    let dr = (outer - r0) / steps as f64;
    let rs: Vec<f64> = (0..=steps).map(|i| r0 + i as f64 * dr).collect();
    let mut us = vec![0.0; steps + 1];
    us[steps] = beyond;
    for i in (0..steps).rev() {
        let inc = quad::gauss_composite(|s| integrand(n, a, s), rs[i], rs[i + 1], 1);
        us[i] = us[i + 1] + inc;
    }
    Ok((rs, us))
}

/// Infinite-domain profile on [r0, r_max] (decay to 0 at infinity).
pub fn radial_profile(n: usize, a: f64, r0: f64, r_max: f64) -> Result<RadialProfile, OracleError> {
    assert!(n >= 3 && r0 > 0.0 && r_max > r0);
    if a == 0.0 {
        return Ok(RadialProfile {
            n,
            a,
            r0,
            truncated_at: None,
            rs: vec![r0, r_max],
            us: vec![0.0, 0.0],
        });
    }
    let ts = tail_start(n, a).max(r_max);
    // u(r_max) = ∫_{r_max}^{ts} + analytic tail
    let beyond = quad::adaptive(|s| integrand(n, a, s), r_max, ts, 1e-12)? + tail(n, a, ts);
    let (rs, us) = build_table(n, a, r0, r_max, beyond)?;
    Ok(RadialProfile {
        n,
        a,
        r0,
        truncated_at: None,
        rs,
        us,
    })
}

/// Truncated profile: u(r_far) = 0 exactly, matching a solver run with
/// far-field pinning at radius r_far.
pub fn radial_profile_truncated(
    n: usize,
    a: f64,
    r0: f64,
    r_far: f64,
) -> Result<RadialProfile, OracleError> {
    assert!(n >= 3 && r0 > 0.0 && r_far > r0);
    if a == 0.0 {
        return Ok(RadialProfile {
            n,
            a,
            r0,
            truncated_at: Some(r_far),
            rs: vec![r0, r_far],
            us: vec![0.0, 0.0],
        });
    }
    let (rs, us) = build_table(n, a, r0, r_far, 0.0)?;
    Ok(RadialProfile {
        n,
        a,
        r0,
        truncated_at: Some(r_far),
        rs,
        us,
    })
}

impl RadialProfile {
    /// Linear interpolation on the table; 0 beyond the outer edge and the
    /// boundary value below r0.
    pub fn eval(&self, r: f64) -> f64 {
        let rs = &self.rs;
        if r <= rs[0] {
            return self.us[0];
        }
        let last = rs.len() - 1;
        if r >= rs[last] {
            return self.us[last];
        }
        let dr = (rs[last] - rs[0]) / last as f64;
        let i = (((r - rs[0]) / dr) as usize).min(last - 1);
        let t = (r - rs[i]) / (rs[i + 1] - rs[i]);
        self.us[i] * (1.0 - t) + self.us[i + 1] * t
    }

    /// Exact derivative from the first integral.
    pub fn derivative(&self, r: f64) -> f64 {
        -integrand(self.n, self.a, r)
    }

    /// Boundary value u(r0).
    pub fn boundary_value(&self) -> f64 {
        self.us[0]
    }

    /// Spacelikeness margin 1 − max_r |u'|; the max is at r0.
    pub fn margin(&self) -> f64 {
        1.0 - integrand(self.n, self.a.abs(), self.r0)
    }

    /// First-integral residual r^{n−1} u'/√(1−u'²) + a at radius r; zero
    /// up to rounding by construction, used as a self-check.
    pub fn first_integral_residual(&self, r: f64) -> f64 {
        let d = self.derivative(r);
        r.powi(self.n as i32 - 1) * d / (1.0 - d * d).sqrt() + self.a
    }
}

/// Solve u_a(r0) = c for the flux constant a by bisection on the monotone
/// map a ↦ u_a(r0). `r_far = None` targets the infinite-domain profile.
pub fn match_boundary_value(
    n: usize,
    r0: f64,
    c: f64,
    r_far: Option<f64>,
) -> Result<f64, OracleError> {
    if c == 0.0 {
        return Ok(0.0);
    }
    let value = |a: f64| -> Result<f64, OracleError> {
        // Only the boundary value is needed; integrate directly instead of
        // building a table.
        match r_far {
            Some(rf) => Ok(quad::adaptive(|s| integrand(n, a, s), r0, rf, 1e-12)?),
            None => {
                let ts = tail_start(n, a);
                Ok(quad::adaptive(|s| integrand(n, a, s), r0, ts, 1e-12)? + tail(n, a, ts))
            }
        }
    };
    // The map is odd in a; bracket on the side of c.
    let sign = c.signum();
    let mut hi = sign;
    let mut grow = 0;
    while value(hi)?.abs() < c.abs() {
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(OracleError::Unattainable { c, r0 });
        }
    }
    let mut lo = 0.0;
    let mut hi = hi.abs();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if value(sign * mid)?.abs() < c.abs() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * (1.0 + hi) {
            break;
        }
    }
    let a = sign * 0.5 * (lo + hi);
    let res = (value(a)? - c).abs();
    if res > 1e-10 {
        return Err(OracleError::Unattainable { c, r0 });
    }
    Ok(a)
}

/// Nodal field u(|x|) on a grid whose obstacle set is the single centered
/// ball of the profile's inner radius.
pub fn sample_on_grid(
    profile: &RadialProfile,
    grid: &Arc<ExteriorGrid>,
) -> Result<ScalarField, OracleError> {
    let set = grid.obstacle_set();
    let ok = set.len() == 1
        && match &set.obstacles()[0] {
            Obstacle::Ball { center, radius } => {
                norm(center) < 1e-12 && (radius - profile.r0).abs() < 1e-12
            }
            _ => false,
        };
    if !ok {
        return Err(OracleError::GeometryMismatch {
            expected: profile.r0,
        });
    }
    Ok(ScalarField::from_fn(grid.clone(), true, |x| {
        profile.eval(norm(x))
    }))
}

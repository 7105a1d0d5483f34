//! One-dimensional quadrature used by the potential term and the radial
//! reference profiles.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("adaptive quadrature did not converge to tolerance {tol} on [{a}, {b}]")]
    QuadratureFailure { a: f64, b: f64, tol: f64 },
}

const MAX_DEPTH: u32 = 48;

fn simpson(_f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adapt(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, QuadError> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(f, a, fa, m, fm, flm);
    let right = simpson(f, m, fm, b, fb, frm);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || (b - a).abs() < 1e-14 * (a.abs() + b.abs() + 1.0) {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(QuadError::QuadratureFailure { a, b, tol });
    }
    let l = adapt(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)?;
    let r = adapt(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64, QuadError> {
    if a == b {
        return Ok(0.0);
    }
    let g: &dyn Fn(f64) -> f64 = &f;
    let fa = g(a);
    let fb = g(b);
    let fm = g(0.5 * (a + b));
    let whole = simpson(g, a, fa, b, fb, fm);
    adapt(g, a, fa, b, fb, fm, whole, tol, MAX_DEPTH)
}

// 5-point Gauss-Legendre nodes/weights on [-1, 1].
const GL5_X: [f64; 5] = [
    -0.906179845938663992797626878299,
    -0.538469310105683091036314420700,
    0.0,
    0.538469310105683091036314420700,
    0.906179845938663992797626878299,
];
const GL5_W: [f64; 5] = [
    0.236926885056189087514264040720,
    0.478628670499366468041291514836,
    0.568888888888888888888888888889,
    0.478628670499366468041291514836,
    0.236926885056189087514264040720,
];

/// Composite 5-point Gauss-Legendre rule with `panels` equal subintervals.
/// Independent of [`adaptive`]; used to cross-check oracle integrals.
pub fn gauss_composite(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let hp = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * hp;
        let mid = lo + 0.5 * hp;
        let mut s = 0.0;
        for (x, w) in GL5_X.iter().zip(GL5_W.iter()) {
            s += w * f(mid + 0.5 * hp * x);
        }
        total += 0.5 * hp * s;
    }
    total
}

/// Fixed-order blocked summation: sums in blocks of 256, then pairwise over
/// block results. The order never depends on data values, so repeated runs
/// are bit-identical, and the pairwise tree keeps rounding growth
/// logarithmic in the number of terms.
pub fn stable_sum(values: &[f64]) -> f64 {
    fn pairwise(v: &[f64]) -> f64 {
        match v.len() {
            0 => 0.0,
            1 => v[0],
            n => {
                let mid = n / 2;
                pairwise(&v[..mid]) + pairwise(&v[mid..])
            }
        }
    }
    if values.len() <= 256 {
        return values.iter().sum();
    }
    let blocks: Vec<f64> = values.chunks(256).map(|c| c.iter().sum()).collect();
    pairwise(&blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = adaptive(|x| 3.0 * x * x, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 8.0).abs() < 1e-10);
    }

    #[test]
    fn adaptive_vs_gauss() {
        let f = |s: f64| 1.0 / (s * s * s * s + 1.0).sqrt();
        let a = adaptive(f, 1.0, 50.0, 1e-12).unwrap();
        let g = gauss_composite(f, 1.0, 50.0, 2000);
        assert!((a - g).abs() < 1e-10, "{a} vs {g}");
    }

    #[test]
    fn stable_sum_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((stable_sum(&v) - naive).abs() < 1e-9);
    }
}

//! Small closed-form expression support for boundary data and curvature
//! rules read from config files.
//!
//! Expressions use the coordinates `x1 .. xn`, optionally `t`, the usual
//! arithmetic operators including `^`, and the functions provided by
//! `meval` (`sqrt`, `sin`, `cos`, `exp`, ...).

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("failed to parse expression {src:?}: {msg}")]
    Parse { src: String, msg: String },
    #[error("expression {src:?} uses coordinate {var} beyond dimension {dim}")]
    BadVariable { src: String, var: String, dim: usize },
}

/// A compiled scalar expression in the coordinates `x1..xn` and optionally `t`.
#[derive(Clone)]
pub struct CoordExpr {
    src: String,
    expr: Arc<meval::Expr>,
    dim: usize,
    uses_t: bool,
}

impl std::fmt::Debug for CoordExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CoordExpr({:?})", self.src)
    }
}

impl CoordExpr {
    /// Compile `src` for points of dimension `dim`. `allow_t` permits the
    /// extra variable `t` (used by curvature rules H(x, t)).
    pub fn parse(src: &str, dim: usize, allow_t: bool) -> Result<Self, ExprError> {
        let expr: meval::Expr = src.parse().map_err(|e| ExprError::Parse {
            src: src.to_string(),
            msg: format!("{e}"),
        })?;
        // Probe-evaluate to surface unknown identifiers early.
        let mut ctx = meval::Context::new();
        for i in 0..dim {
            ctx.var(format!("x{}", i + 1), 0.0);
        }
        let uses_t = allow_t && {
            // Evaluate once without `t`; if that fails but adding `t`
            // succeeds, the expression depends on it.
            let without = expr.eval_with_context(ctx.clone());
            if without.is_ok() {
                false
            } else {
                ctx.var("t", 0.0);
                true
            }
        };
        if uses_t {
            ctx.var("t", 0.0);
        }
        expr.eval_with_context(ctx).map_err(|e| ExprError::Parse {
            src: src.to_string(),
            msg: format!("{e}"),
        })?;
        Ok(CoordExpr {
            src: src.to_string(),
            expr: Arc::new(expr),
            dim,
            uses_t,
        })
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_with_t(x, 0.0)
    }

    pub fn eval_with_t(&self, x: &[f64], t: f64) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut ctx = meval::Context::new();
        for (i, xi) in x.iter().enumerate() {
            ctx.var(format!("x{}", i + 1), *xi);
        }
        if self.uses_t {
            ctx.var("t", t);
        }
        self.expr
            .eval_with_context(ctx)
            .expect("expression validated at parse time")
    }
}

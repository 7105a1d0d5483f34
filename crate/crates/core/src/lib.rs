//! Spacelike prescribed-mean-curvature graphs over exterior domains,
//! computed by direct minimization of a convex energy under the gradient
//! constraint |∇u| ≤ 1.

pub mod analysis;
pub mod boundary;
pub mod expr;
pub mod field;
pub mod functional;
pub mod geometry;
pub mod optimizer;
pub mod oracle;
pub mod quad;

//! Run configuration: a single JSON file with sections
//! {domain, boundary, curvature, solver, output}.

use serde::{Deserialize, Serialize};

use exmc::boundary::{BoundaryDatum, PhiRule};
use exmc::expr::CoordExpr;
use exmc::functional::CurvatureSpec;
use exmc::geometry::{Obstacle, ObstacleSet};
use exmc::optimizer::SolverParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Admissibility report only: Lipschitz estimate + displacing check.
    Check,
    /// Full pipeline: check, extend, minimize, diagnose.
    Solve,
    /// Solve a single-ball H = 0 instance and diff against the radial oracle.
    OracleCompare,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub domain: DomainConfig,
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub curvature: CurvatureConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Default mode; the --mode flag overrides.
    #[serde(default)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub dim: usize,
    pub r_far: f64,
    pub spacing: f64,
    pub obstacles: Vec<ObstacleConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObstacleConfig {
    Ball { center: Vec<f64>, radius: f64 },
    Box { min: Vec<f64>, max: Vec<f64> },
}

/// One boundary rule: a number (constant datum) or an expression in
/// x1..xn.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhiConfig {
    Constant(f64),
    Expr(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    /// A single rule applied to every obstacle, or one rule per obstacle.
    pub phi: PhiList,
    /// Declared Lipschitz constant of φ, if known.
    #[serde(default)]
    pub lipschitz: Option<f64>,
    /// Spacelike reserve: the extension is built (1 − epsilon)-Lipschitz.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Boundary samples per obstacle for the displacing scan.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Required displacing margin before a pair is flagged Marginal.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhiList {
    One(PhiConfig),
    PerObstacle(Vec<PhiConfig>),
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_samples() -> usize {
    200
}
fn default_margin() -> f64 {
    0.0
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CurvatureConfig {
    /// H(x, t) as an expression in x1..xn and t; omitted means H ≡ 0.
    #[serde(default)]
    pub h: Option<String>,
    /// Envelope h(x) with n|H(x,t)| ≤ h(x); required when `h` uses t.
    #[serde(default)]
    pub envelope: Option<String>,
    /// Integrability exponent s of the envelope, 1 ≤ s ≤ 2n/(n+2).
    #[serde(default)]
    pub s: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub tol_energy: f64,
    pub tol_residual: f64,
    pub delta_floor: f64,
    pub backtrack: f64,
    pub alpha0: f64,
    pub accelerate: bool,
    /// Seed for boundary sampling and diagnostics; SOLVER_SEED overrides.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let p = SolverParams::default();
        SolverConfig {
            max_iterations: p.max_iterations,
            tol_energy: p.tol_energy,
            tol_residual: p.tol_residual,
            delta_floor: p.delta_floor,
            backtrack: p.backtrack,
            alpha0: p.alpha0,
            accelerate: p.accelerate,
            seed: 7,
        }
    }
}

impl SolverConfig {
    pub fn params(&self) -> SolverParams {
        SolverParams {
            max_iterations: self.max_iterations,
            tol_energy: self.tol_energy,
            tol_residual: self.tol_residual,
            delta_floor: self.delta_floor,
            backtrack: self.backtrack,
            alpha0: self.alpha0,
            accelerate: self.accelerate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Legacy structured-points field file (written for dim = 3 only).
    pub field: Option<String>,
    /// Delimited text dump of nodal values (tab-separated, one node per row).
    pub dump: Option<String>,
    pub report: Option<String>,
    /// Shell radii for the decay profile; a default ladder when omitted.
    pub decay_radii: Option<Vec<f64>>,
    pub light_threshold: f64,
    pub weak_trials: usize,
    /// Final-shell fraction of ‖φ‖∞ for the decay verdict.
    pub decay_fraction: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            field: Some("solution.vtk".into()),
            dump: None,
            report: Some("report.json".into()),
            decay_radii: None,
            light_threshold: 1e-3,
            weak_trials: 8,
            decay_fraction: exmc::analysis::DECAY_FRACTION,
        }
    }
}

pub struct ConfigError(pub String);

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.domain;
        if d.dim < 3 {
            return Err(ConfigError(format!(
                "domain.dim must be at least 3, got {}",
                d.dim
            )));
        }
        if !(d.spacing > 0.0) || !(d.r_far > 0.0) {
            return Err(ConfigError(
                "domain.spacing and domain.r_far must be positive".into(),
            ));
        }
        if d.obstacles.is_empty() {
            return Err(ConfigError("domain.obstacles must be non-empty".into()));
        }
        if let PhiList::PerObstacle(rules) = &self.boundary.phi {
            if rules.len() != d.obstacles.len() {
                return Err(ConfigError(format!(
                    "boundary.phi lists {} rules for {} obstacles",
                    rules.len(),
                    d.obstacles.len()
                )));
            }
        }
        if !(self.boundary.epsilon > 0.0 && self.boundary.epsilon < 1.0) {
            return Err(ConfigError("boundary.epsilon must lie in (0, 1)".into()));
        }
        if !(self.output.light_threshold > 0.0 && self.output.light_threshold < 0.1) {
            return Err(ConfigError(
                "output.light_threshold must lie in (0, 0.1)".into(),
            ));
        }
        Ok(())
    }

    pub fn obstacle_set(&self) -> Result<ObstacleSet, ConfigError> {
        let obstacles = self
            .domain
            .obstacles
            .iter()
            .map(|o| match o {
                ObstacleConfig::Ball { center, radius } => Obstacle::Ball {
                    center: center.clone(),
                    radius: *radius,
                },
                ObstacleConfig::Box { min, max } => Obstacle::Box {
                    min: min.clone(),
                    max: max.clone(),
                },
            })
            .collect();
        ObstacleSet::new(obstacles, self.domain.dim)
            .map_err(|e| ConfigError(format!("domain.obstacles: {e}")))
    }

    pub fn boundary_datum(&self) -> Result<BoundaryDatum, ConfigError> {
        let dim = self.domain.dim;
        let one = |p: &PhiConfig| -> Result<PhiRule, ConfigError> {
            Ok(match p {
                PhiConfig::Constant(c) => PhiRule::Constant(*c),
                PhiConfig::Expr(src) => PhiRule::Expr(
                    CoordExpr::parse(src, dim, false)
                        .map_err(|e| ConfigError(format!("boundary.phi: {e}")))?,
                ),
            })
        };
        let rules = match &self.boundary.phi {
            PhiList::One(p) => vec![one(p)?; self.domain.obstacles.len()],
            PhiList::PerObstacle(ps) => ps.iter().map(one).collect::<Result<_, _>>()?,
        };
        BoundaryDatum::new(rules, self.boundary.lipschitz)
            .map_err(|e| ConfigError(format!("boundary: {e}")))
    }

    pub fn curvature_spec(&self) -> Result<CurvatureSpec, ConfigError> {
        let c = &self.curvature;
        let n = self.domain.dim as f64;
        let s = c.s.unwrap_or(1.0);
        let s_max = 2.0 * n / (n + 2.0);
        if !(1.0..=s_max + 1e-12).contains(&s) {
            return Err(ConfigError(format!(
                "curvature.s = {s} outside [1, 2n/(n+2)] = [1, {s_max}]"
            )));
        }
        match &c.h {
            None => Ok(CurvatureSpec::zero()),
            Some(src) if src.trim() == "0" => Ok(CurvatureSpec::zero()),
            Some(src) => {
                CurvatureSpec::from_exprs(src, c.envelope.as_deref(), s, self.domain.dim)
                    .map_err(|e| ConfigError(format!("curvature: {e}")))
            }
        }
    }
}

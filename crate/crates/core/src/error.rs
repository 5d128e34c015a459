use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("structure factorization `{0}` has no exact solution (residual {1:e})")]
    InconsistentFactorization(&'static str, f64),

    #[error("material tensor `{tensor}` has min eigenvalue {min_eig:e} < eta {eta:e} at node {node}, t = {t}")]
    PositivityViolation {
        tensor: &'static str,
        node: usize,
        t: f64,
        min_eig: f64,
        eta: f64,
    },

    #[error("material tensor `{tensor}` is not symmetric (|M - Mᵀ| = {asym:e}) at node {node}, t = {t}")]
    SymmetryViolation {
        tensor: &'static str,
        node: usize,
        t: f64,
        asym: f64,
    },

    #[error("A0(t0) not invertible at node {node} (min eigenvalue {min_eig:e})")]
    SingularMass { node: usize, min_eig: f64 },

    #[error("2x2 normal block of A0 lost definiteness at node {node}")]
    SingularTheta { node: usize },

    #[error("lifting order {order} exceeds the supported maximum {max}")]
    LiftFailure { order: usize, max: usize },

    #[error("coefficient A{index} is not in the span of the curl matrices at node {node} (residual {residual:e})")]
    NotInSpan {
        index: usize,
        node: usize,
        residual: f64,
    },

    #[error("normal-derivative system inconsistent: zero rows carry {residual:e}")]
    InconsistentSystem { residual: f64 },

    #[error("chart degenerate: mu33 = {mu33:e} < tau = {tau:e} at {location}")]
    DegenerateChart {
        mu33: f64,
        tau: f64,
        location: String,
    },

    #[error("mollifier scale epsilon = {epsilon} must be smaller than the shift delta = {delta}")]
    ScaleOrderError { epsilon: f64, delta: f64 },

    #[error("time step {dt:e} exceeds the CFL limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("non-finite field value at step {step}, t = {t}")]
    NonFiniteField { step: usize, t: f64 },

    #[error("compatibility conditions of order {order} fail (max residual {max_residual:e} > tol {tol:e})")]
    CompatibilityFailure {
        order: usize,
        max_residual: f64,
        tol: f64,
        report: Box<crate::compat::CompatReport>,
    },

    #[error("solver run failed: {0}")]
    RunFailure(String),

    #[error("expression error: {0}")]
    Expr(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

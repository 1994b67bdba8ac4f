use thiserror::Error;

/// Errors raised anywhere in the finite element pipeline.
#[derive(Debug, Error)]
pub enum FemError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inverted element: cell {cell}, quadrature point {quad}, det J = {det:e}")]
    InvertedElement { cell: usize, quad: usize, det: f64 },

    #[error(
        "inverted deformation (det F = {det:e}) in element {element}, quadrature point {quad}"
    )]
    InvertedDeformation {
        element: usize,
        quad: usize,
        det: f64,
    },

    #[error("non-finite value in element {element}, quadrature point {quad}")]
    NonFinite { element: usize, quad: usize },

    #[error("conflicting Dirichlet constraints on dof {dof}: {first} vs {second}")]
    ConflictingConstraint { dof: usize, first: f64, second: f64 },

    #[error("mesh parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported cell type {0} (only 8-node hexahedra are accepted)")]
    UnsupportedCell(u32),

    #[error("linear solver breakdown ({kind}) at iteration {iteration}")]
    Breakdown {
        kind: &'static str,
        iteration: usize,
    },

    #[error("linear solver did not converge in {iterations} iterations (residual {residual:e})")]
    LinearNotConverged { iterations: usize, residual: f64 },

    #[error("Newton did not converge in {} iterations (last residual {:e})", .history.len().saturating_sub(1), .history.last().copied().unwrap_or(f64::NAN))]
    NewtonNotConverged { history: Vec<f64> },

    #[error("load step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<FemError>,
    },

    #[error("non-finite objective at h = {h:e}")]
    NonFiniteObjective { h: f64 },

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FemError {
    /// True when the error originates from a solver failing to converge,
    /// possibly wrapped in a load-step failure.
    pub fn is_convergence_failure(&self) -> bool {
        match self {
            FemError::Breakdown { .. }
            | FemError::LinearNotConverged { .. }
            | FemError::NewtonNotConverged { .. }
            | FemError::NonFinite { .. }
            | FemError::InvertedDeformation { .. }
            | FemError::NonFiniteObjective { .. }
            | FemError::Optimizer(_) => true,
            FemError::StepFailed { source, .. } => source.is_convergence_failure(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, FemError>;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {0:?} lies on the focal set of the embedding")]
    DegenerateProjection(Vec<f64>),
    #[error("tangent vectors are not based at the same point")]
    FrameMismatch,
    #[error("points are {distance} apart, injectivity radius is {inj_radius}")]
    OutsideInjectivityRadius { distance: f64, inj_radius: f64 },
    #[error("resolution {0} is too small for this manifold")]
    ResolutionTooSmall(usize),
    #[error("image of face {face} has diameter {diameter}, not below the injectivity radius")]
    FaceImageTooSpread { face: usize, diameter: f64 },
    #[error("maps live on different meshes")]
    MeshMismatch,
    #[error("exponent p = {0} is outside the supported range (1.1, 10)")]
    InvalidExponent(f64),
    #[error("isometry fit is degenerate (correlation rank too low)")]
    DegenerateFit,
    #[error("gradient clamping hit the iteration cap ({0} sweeps)")]
    IterationCapExceeded(usize),
    #[error("face {face} has |df| = {norm}, above the bound {bound}")]
    LipschitzBoundViolated { face: usize, norm: f64, bound: f64 },
    #[error("heat-flow step rejected after {halvings} halvings of dt")]
    StepRejected { halvings: usize },
    #[error("vertex star at {0} is rank deficient")]
    DegenerateStar(usize),
    #[error("linear solver failed: {0}")]
    SolverFailure(String),
    #[error("line search failed in Killing minimization")]
    LineSearchFailure,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error: {0}")]
    Format(String),
}

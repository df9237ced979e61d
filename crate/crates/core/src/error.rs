use crate::FaceId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("point outside the chart domain: {0}")]
    OutOfDomain(String),
    #[error("{which} is not positive definite at {at}")]
    NotPositiveDefinite { which: &'static str, at: String },
    #[error("points belong to charts of different dimensions")]
    ChartMismatch,

    #[error("integration step size underflow at s = {s:e} (h = {h:e})")]
    StepFailure { s: f64, h: f64 },
    #[error("Hamilton vector field vanishes at the start point")]
    DegenerateVelocity,

    #[error("point is in the interior; no boundary face to classify")]
    InteriorPoint,
    #[error("face {0} is elliptic at this point; no real lifts")]
    EllipticFace(FaceId),
    #[error("point is not hyperbolic (margin {margin:e})")]
    NotHyperbolic { margin: f64 },
    #[error("no lift leaves face {0}")]
    NoOutgoingLift(FaceId),
    #[error("point is not glancing (margin {margin:e})")]
    NotGlancing { margin: f64 },
    #[error("glancing point on a face of codimension {0}")]
    CornerGlancing(usize),

    #[error("flow parameter {s} outside the ray range [{lo}, {hi}]")]
    OutOfRange { s: f64, lo: f64, hi: f64 },
    #[error("no ray of the family stays in the parameter box")]
    EmptyFamily,
    #[error("event {0} is not a reflection")]
    NotAnEvent(usize),
    #[error("rays do not cover the common interval [{a}, {b}]")]
    MismatchedIntervals { a: f64, b: f64 },
    #[error("chart metric is not the flat identity metric")]
    NotFlat,

    #[error("epsilon {eps} does not exceed the threshold {threshold}")]
    EpsilonTooSmall { eps: f64, threshold: f64 },
    #[error("invalid commutant parameters: {0}")]
    InvalidParams(String),
    #[error("no sample landed in the support of the symbol")]
    EmptySupport,
    #[error("sampling grid is empty")]
    EmptyGrid,
    #[error("symbol is not differentiable at the sample point")]
    NonDifferentiable,

    #[error("{0}")]
    Scenario(String),
    #[error("line {line}, column {column}: {message}")]
    ScenarioAt { line: usize, column: usize, message: String },
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
}

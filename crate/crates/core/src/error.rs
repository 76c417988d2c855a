use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("generator {index} is not orthogonal (residual {residual:e})")]
    NotOrthogonal { index: usize, residual: f64 },
    #[error("group closure exceeded {max_order} elements")]
    ClosureExceeded { max_order: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("table is not a group homomorphism at ({a}, {b})")]
    NotHomomorphism { a: usize, b: usize },
    #[error("sample point at radius {radius} lies outside the chart of radius {chart_radius}")]
    SampleOutOfChart { radius: f64, chart_radius: f64 },
    #[error("group does not preserve the model space: {0}")]
    InvalidModel(String),
    #[error("chart radius {radius} violates the separation bound {bound}")]
    RadiusTooLarge { radius: f64, bound: f64 },
    #[error("operation requires a flat model")]
    UnsupportedModel,
    #[error("equivariance violated: residual {residual:e} exceeds {tolerance:e}")]
    EquivarianceViolation { residual: f64, tolerance: f64 },
    #[error("atlas does not cover the orbifold near {witness:?}")]
    AtlasNotCovering { witness: Vec<f64> },
    #[error("lift image escapes the target chart at {witness:?}")]
    ImageEscapesChart { witness: Vec<f64> },
    #[error("continuation branches within {gap:e} of each other at {witness:?}")]
    BranchAmbiguity { gap: f64, witness: Vec<f64> },
    #[error("charts of the composed maps do not match: {0}")]
    ChartMismatch(String),
    #[error("curve is not differentiable at t = {t}")]
    NotDifferentiable { t: f64 },
    #[error("metric is not symmetric positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotSpd { min_eigenvalue: f64 },
    #[error("partition of unity has a cover gap at {witness:?}")]
    CoverGap { witness: Vec<f64> },
    #[error("outside the exponential map domain: {0}")]
    OutOfDomain(String),
    #[error("map is not close to the identity: distance {distance:e} >= {bound:e}")]
    NotCloseToIdentity { distance: f64, bound: f64 },
    #[error("isotropy homomorphism of chart {chart} is not the identity")]
    ThetaNotIdentity { chart: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("support of {0} escapes the grid box")]
    SupportEscapesBox(String),
    #[error("ball of radius {radius} escapes the grid box")]
    BallEscapesBox { radius: f64 },
    #[error("field is negative: min {min} below -tau = {neg_tau}")]
    Negativity { min: f64, neg_tau: f64 },
    #[error("data ordering violated: {0}")]
    OrderingViolation(String),
    #[error("support comes within {cells} cells of the box boundary")]
    BoxTooSmall { cells: usize },
    #[error("energy still decreasing after {iterations} outer iterations")]
    NonConvergence { iterations: usize },
    #[error("no member of the seed family dominates the others (gap {gap})")]
    FamilyDisagreement { gap: f64 },
    #[error("kernel evaluated at coincident points")]
    CoincidentPoints,
    #[error("radius {radius} is below the grid resolution 2h = {min}")]
    RadiusBelowGrid { radius: f64, min: f64 },
    #[error("phases overlap: max product {max_product} exceeds tau^2")]
    SegregationViolation { max_product: f64 },
    #[error("no admissible root: {0}")]
    NoRoot(String),
    #[error("radial solution does not vanish on the inversion sphere (value {0})")]
    NonvanishingAtSphere(f64),
    #[error("support straddles the reflection plane by {cells} cells")]
    Overlap { cells: usize },
}

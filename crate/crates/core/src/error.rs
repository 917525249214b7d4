use thiserror::Error;

/// Errors produced by the numerical routines in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point lies outside the finite-value box of potential `{0}`")]
    OutsideMask(String),

    #[error("potential `{0}` has a box mask; solvers require a finite-valued potential")]
    MaskedPotential(String),

    #[error("potential `{name}` is negative ({value:e}) at {point:?}")]
    NegativePotential {
        name: String,
        point: Vec<f64>,
        value: f64,
    },

    #[error("invalid potential spec: {0}")]
    InvalidSpec(String),

    #[error("{found} well candidates survived merging (max {max})")]
    TooManyWells { found: usize, max: usize },

    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("curve has zero chord length")]
    ZeroLengthCurve,

    #[error("point {point:?} is not a well (W = {value:e})")]
    NotAWell { point: Vec<f64>, value: f64 },

    #[error("point {0:?} lies outside the search box")]
    OutsideBox(Vec<f64>),

    #[error("delta {delta} too large: balls around wells overlap (min separation {separation})")]
    DeltaTooLarge { delta: f64, separation: f64 },

    #[error("no feasible iterate found (best distance {best} < eps {eps})")]
    Infeasible { eps: f64, best: f64 },

    #[error("relaxation diverged: {0}")]
    Divergence(String),

    #[error("time step underflow (dt = {0:e})")]
    StepUnderflow(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("averaged-potential table does not cover {0:?}")]
    OutsideTable(Vec<f64>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

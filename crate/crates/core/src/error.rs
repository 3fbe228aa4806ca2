use thiserror::Error;

/// Errors raised by the core library.
///
/// Numeric payloads are carried as `f64` regardless of the scalar type the
/// failing computation ran in.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {what} at component {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("density {value:e} at node {index} is below the floor {floor:e}")]
    DensityBelowFloor {
        index: usize,
        value: f64,
        floor: f64,
    },

    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    StabilityBound { dt: f64, bound: f64 },

    #[error("density went negative ({value:e}) at node {index} before flooring")]
    NegativeDensity { index: usize, value: f64 },

    #[error("wavefunction has nodes at grid positions {positions:?}")]
    Nodes {
        indices: Vec<usize>,
        positions: Vec<f64>,
    },

    #[error("impossible data: outcome {outcome} has zero total likelihood")]
    ImpossibleData { outcome: usize },

    #[error("pre- and post-selected states are orthogonal (|overlap| = {overlap:e})")]
    OrthogonalStates { overlap: f64 },

    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("vectors are not orthonormal (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("not normalized: total {total}")]
    NotNormalized { total: f64 },

    #[error("support labels of the two distributions differ")]
    LabelMismatch,

    #[error("joint support is not rectangular")]
    NotRectangular,

    #[error("pauli strings have different lengths ({left} vs {right})")]
    PauliLength { left: usize, right: usize },

    #[error("context {context} is not mutually commuting")]
    NonCommutingContext { context: usize },

    #[error("context {context} does not multiply to a signed identity")]
    ContextProductNotIdentity { context: usize },

    #[error("{cells} cells exceed the enumeration bound of {max}")]
    EnumerationBound { cells: usize, max: usize },

    #[error("cell ({row}, {col}) appears in {count} contexts; a parity proof needs an even count")]
    NotParityProof {
        row: usize,
        col: usize,
        count: usize,
    },

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

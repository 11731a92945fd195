use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("run lengths sum to {actual}, expected {expected}")]
    SumMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: {expected_width}x{expected_height} vs {width}x{height}")]
    DimensionMismatch {
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("pixel buffer has {actual} values, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon rasterizes to an empty mask")]
    DegeneratePolygon,
    #[error("mask is empty")]
    EmptyMask,
    #[error("both masks are empty")]
    BothEmpty,
    #[error("instance {0} has an empty mask")]
    EmptyInstance(u64),
    #[error("duplicate instance id {0}")]
    DuplicateId(u64),
    #[error("ground-truth instance {0} has no confidence level")]
    MissingConfidence(u64),
    #[error("blur window must be odd, got {0}")]
    EvenWindow(usize),
    #[error("histogram edges must be strictly ascending with at least 2 entries")]
    BadEdges,
    #[error("histograms have different edges")]
    EdgeMismatch,
    #[error("partition holds {partition} predictions, expected {expected}")]
    CountMismatch { expected: usize, partition: usize },
    #[error("ground-truth agglomeration mask is empty")]
    EmptyGroundTruth,
    #[error("could not place {requested} crystals within {attempts} attempts")]
    Infeasible { requested: usize, attempts: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

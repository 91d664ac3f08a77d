use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty cost matrix")]
    EmptyMatrix,
    #[error("cost matrix has a non-finite or negative entry at ({row}, {col})")]
    BadCost { row: usize, col: usize },
    #[error("cost matrix must be square before solving ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("duplicate minutiae at indices {first} and {second}")]
    DuplicateMinutia { first: usize, second: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },
    #[error("representative pool exhausted: found {found} of {wanted} vicinities")]
    PoolExhausted { found: usize, wanted: usize },
    #[error("incomparable vectors: {0}")]
    Incomparable(String),
    #[error("timestep {dt} exceeds the stability bound {bound}")]
    Unstable { dt: f64, bound: f64 },
    #[error("could not place {wanted} minutiae with separation {min_sep} (placed {placed})")]
    Placement {
        wanted: usize,
        placed: usize,
        min_sep: f64,
    },
    #[error("supporter references unknown score index {0}")]
    UnknownScore(usize),
    #[error("empty population")]
    EmptyPopulation,
    #[error("degenerate search grid: {0}")]
    DegenerateGrid(String),
    #[error("malformed feature vector: {0}")]
    MalformedVector(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

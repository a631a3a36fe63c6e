use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance is not SPD: smallest eigenvalue {smallest:e}")]
    NotSpd { smallest: f64 },

    #[error("factorization failed at lambda={lambda:e} (condition estimate {condition:e})")]
    Factorization { lambda: f64, condition: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("non-finite field value at node {node}")]
    NonFinite { node: usize },

    #[error("nonpositive slowness {value:e} at node {node}")]
    NonPositiveSlowness { node: usize, value: f64 },

    #[error("lower-level Hessian not SPD: smallest eigenvalue estimate {smallest:e}")]
    HessianNotSpd { smallest: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("pair {index}: {source}")]
    Pair {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sgd run failed: {skipped} of {total} steps skipped (limit 5%)")]
    TooManySkipped { skipped: usize, total: usize },

    #[error("study failed: {flagged} of {total} minimizers on the interval boundary (limit 10%)")]
    TooManyBoundary { flagged: usize, total: usize },

    #[error("preset: {0}")]
    Preset(String),

    #[error("rerun is not byte-identical: {0}")]
    NotReproducible(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_pair(index: usize, source: Error) -> Error {
        Error::Pair {
            index,
            source: Box::new(source),
        }
    }

    /// True for errors caused by bad input rather than by a numerical failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidMesh(_)
            | Error::InvalidParameter(_)
            | Error::Preset(_)
            | Error::Json(_)
            | Error::EmptyDataset => true,
            Error::Pair { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    /// Short machine-parsable tag used by the CLI on stderr.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::InvalidMesh(_) => "invalid-mesh",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::NotSpd { .. } => "not-spd",
            Error::Factorization { .. } => "factorization",
            Error::Singular(_) => "singular",
            Error::NonFinite { .. } => "non-finite",
            Error::NonPositiveSlowness { .. } => "nonpositive-slowness",
            Error::HessianNotSpd { .. } => "hessian-not-spd",
            Error::EmptyDataset => "empty-dataset",
            Error::Pair { source, .. } => source.tag(),
            Error::TooManySkipped { .. } => "sgd-skipped",
            Error::TooManyBoundary { .. } => "boundary-flags",
            Error::Preset(_) => "preset",
            Error::NotReproducible(_) => "not-reproducible",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

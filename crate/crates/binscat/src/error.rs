use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("column not found: {0}")]
    ColumnNotFound(String),
    #[error("column {column}, row {row}: cannot parse {value:?} as a number")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("frequency weight must be a positive integer, got {value:?} at row {row}")]
    BadWeight { row: usize, value: String },
    #[error("no usable rows after dropping missing values")]
    EmptyData,
    #[error("need at least {needed} observations, have {have}")]
    TooFewRows { needed: usize, have: usize },
    #[error("number of bins must be at least 1")]
    ZeroBins,
    #[error("x has zero range but {0} bins were requested")]
    ZeroRange(usize),
    #[error("inner knot {knot} lies outside the range of x ({lo}, {hi})")]
    KnotOutOfRange { knot: f64, lo: f64, hi: f64 },
    #[error("duplicate inner knot {0}")]
    DuplicateKnot(f64),
    #[error("evaluation point {x} is outside the support [{lo}, {hi}]")]
    OutOfSupport { x: f64, lo: f64, hi: f64 },
    #[error("smoothness s={s} exceeds degree p={p}")]
    SmoothnessExceedsDegree { p: usize, s: usize },
    #[error("derivative order v={v} exceeds degree p={p}")]
    DerivExceedsDegree { p: usize, v: usize },
    #[error("basis of degree {p} needs a partition with positive width")]
    DegeneratePartition { p: usize },
    #[error("bin {0} is empty; use quantile placement or fewer bins")]
    EmptyBin(usize),
    #[error("design has {cols} columns but only {rows} rows")]
    TooFewRowsForDesign { rows: usize, cols: usize },
    #[error("Q is singular near basis column {0}; check for empty or degenerate bins")]
    SingularQ(usize),
    #[error("vce(cluster) requested but no cluster column was given")]
    MissingClusterColumn,
    #[error("parametric-fit file: {0}")]
    ParFit(String),
    #[error("grid and fitted values have different lengths: {grid} vs {fit}")]
    LengthMismatch { grid: usize, fit: usize },
    #[error("global polynomial of degree {degree} needs degree+1 < {n_distinct} distinct x values")]
    PolyDegreeTooHigh { degree: usize, n_distinct: usize },
    #[error("file {0} exists; pass --replace to overwrite")]
    FileExists(PathBuf),
    #[error("invalid option: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{what} must divide {into} exactly ({fine} does not divide {coarse})")]
    Divisibility {
        what: &'static str,
        into: &'static str,
        fine: f64,
        coarse: f64,
    },
    #[error("point ({x}, {y}) lies outside {region}")]
    OutOfDomain { x: f64, y: f64, region: &'static str },
    #[error("invalid cell index {index} (mesh has {count} cells)")]
    InvalidCell { index: usize, count: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("singular matrix: zero pivot at row {row}")]
    Singular { row: usize },
    #[error("nonpositive coefficient {value} in sampling cell {cell} at ({x}, {y})")]
    NonPositive {
        cell: usize,
        x: f64,
        y: f64,
        value: f64,
    },
    #[error("unknown boundary marker `{0}`")]
    UnknownMarker(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

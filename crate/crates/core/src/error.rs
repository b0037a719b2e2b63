use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("index {index} out of range for population of size {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("distance matrix is not ultrametric at triple ({k}, {l}, {m}): excess {excess}")]
    NotUltrametric { k: usize, l: usize, m: usize, excess: f64 },
    #[error("distance matrix is not symmetric at ({k}, {l})")]
    NotSymmetric { k: usize, l: usize },
    #[error("replacement requires distinct parent and victim, got {0} twice")]
    SelfReplacement(usize),
    #[error("query time {time} outside log horizon [{start}, {end}]")]
    OutsideHorizon { time: f64, start: f64, end: f64 },
    #[error("sample of size {requested} exceeds population size {available} without replacement")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("polynomial `{name}` returned {value}, exceeding its declared bound {bound}")]
    BoundExceeded { name: String, value: f64, bound: f64 },
    #[error("dimension mismatch: need {needed}, got {got}")]
    Dimension { needed: usize, got: usize },
    #[error("singular linear system (condition number {0:e})")]
    Singular(f64),
    #[error("expression grew past {0} nodes")]
    ExpressionTooLarge(usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

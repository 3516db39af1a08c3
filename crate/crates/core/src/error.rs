use thiserror::Error;

use crate::label::Label;

/// Errors raised by the library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("label {0} is not in the tree")]
    LabelNotInTree(Label),
    #[error("label {0} is not a member of the line")]
    NotInLine(Label),
    #[error("invalid label path: {0}")]
    InvalidLabel(String),
    #[error("part grafted at {label} has birth time {got}, expected {expected}")]
    IncompatibleBirthTime { label: Label, expected: f64, got: f64 },
    #[error("part grafted at {label} has birth age {got}, expected {expected}")]
    IncompatibleAge { label: Label, expected: f64, got: f64 },
    #[error("keys overlap or collide with existing branches at {0}")]
    OverlappingKeys(Label),
    #[error("age mode of the part does not match the ambient tree")]
    ModeMismatch,

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("total event rate vanishes somewhere on the working domain")]
    ZeroTotalRate,
    #[error("branch-length law is defective (cumulative hazard bounded)")]
    DefectiveLength,
    #[error("length sampling failed at tau={tau}, alpha={alpha}")]
    SamplingFailure { tau: f64, alpha: f64 },

    #[error("population cap exceeded: {0}")]
    CapExceeded(String),
    #[error("tree is truncated before the requested horizon {0}")]
    TruncatedTree(f64),
    #[error("operation requires an asymmetric tree")]
    AsymmetricRequired,
    #[error("no extant branches at the observation time")]
    EmptyExtant,

    #[error("kernel has no Lebesgue length density (solver requires one)")]
    DensityMissing,
    #[error("grid too coarse: estimated error {estimate:e} exceeds tolerance {tolerance:e}")]
    GridTooCoarse { estimate: f64, tolerance: f64 },
    #[error("incompatible grid: {0}")]
    IncompatibleGrid(String),
    #[error("conditioning on survival is degenerate at tau={tau}, alpha={alpha} (p0={p0})")]
    ConditioningDegenerate { tau: f64, alpha: f64, p0: f64 },
    #[error("recursion cap of {0} exceeded")]
    RecursionCap(usize),

    #[error("argument out of domain: {0}")]
    OutOfDomain(String),
    #[error("table lookup out of range: {0}")]
    TableOutOfRange(String),
    #[error("genealogical node with {children} children has zero offspring mass")]
    ZeroMassNode { children: usize },
    #[error("genealogical density vanishes at tau={tau}, l={length}")]
    DensityVanishing { tau: f64, length: f64 },
    #[error("pgf inversion is ill-conditioned (residual {residual:e})")]
    IllConditionedInversion { residual: f64 },
    #[error("shape has {internal} internal nodes, limit is {limit}")]
    ShapeTooLarge { internal: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

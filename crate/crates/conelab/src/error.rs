//! Crate-wide error type.

use std::fmt;

#[derive(Debug, Clone)]
pub enum Error {
    /// A precondition on the inputs was violated.
    InvalidInput(String),
    /// An index addressed a boundary point where an interior stencil is needed.
    BoundaryIndex(usize),
    /// Mean curvature requested on a degenerate orbit (u = 0 or v = 0).
    OrbitDegenerate { index: usize },
    /// Normal projection left the tubular neighborhood of the base surface.
    OutsideTubularNeighborhood(String),
    /// A graph operation pushed the curve out of the quadrant {u, v >= 0}.
    GraphLeavesQuadrant { r: f64 },
    /// An iterative solver failed to converge.
    Numerical(String),
    /// A resonant (indicial) exponent was requested.
    ResonantExponent(f64),
    /// Requested data not covered by the stored grids.
    Coverage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(m) => write!(f, "invalid input: {m}"),
            Error::BoundaryIndex(i) => write!(f, "index {i} needs interior stencil"),
            Error::OrbitDegenerate { index } => write!(f, "orbit degenerate at index {index}"),
            Error::OutsideTubularNeighborhood(m) => write!(f, "outside tubular neighborhood: {m}"),
            Error::GraphLeavesQuadrant { r } => write!(f, "graph leaves quadrant at r = {r}"),
            Error::Numerical(m) => write!(f, "numerical failure: {m}"),
            Error::ResonantExponent(a) => write!(f, "resonant exponent a = {a}"),
            Error::Coverage(m) => write!(f, "coverage gap: {m}"),
        }
    }
}

impl std::error::Error for Error {}

use thiserror::Error;

use crate::network::Mlp;

/// Errors produced across the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported quadrature precision {precision} on the reference {element}")]
    UnsupportedPrecision {
        precision: usize,
        element: &'static str,
    },

    #[error("degenerate element (measure {measure:e})")]
    DegenerateElement { measure: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh file, line {line}: {msg}")]
    MeshParse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "point ({:.6}, {:.6}) of fine element {fine_element} lies outside its parent element {parent}",
        point[0],
        point[1]
    )]
    OutsideParent {
        fine_element: usize,
        parent: usize,
        point: [f64; 2],
    },

    #[error("domain is not a convex polygon")]
    NonConvexDomain,

    #[error("operation requires a smooth activation, network uses {0}")]
    UnsupportedActivation(&'static str),

    #[error("coefficient `{name}` is invalid at ({:.6}, {:.6}): {value}", point[0], point[1])]
    Coefficient {
        name: &'static str,
        point: [f64; 2],
        value: f64,
    },

    #[error("dense diagnostic limited to {limit} unknowns, got {n}")]
    DimensionGuard { n: usize, limit: usize },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, last_good: Box<Mlp> },

    #[error("rate fit needs at least 3 usable points, got {0}")]
    TooFewPoints(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Node and edge numbers in messages are 1-based, matching config files.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("topology needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),

    #[error("edge {edge} ({src} -> {dst}): {reason}")]
    InvalidEdge {
        edge: usize,
        src: usize,
        dst: usize,
        reason: &'static str,
    },

    #[error("graph not strongly connected: node {node} is unreachable")]
    NotStronglyConnected { node: usize },

    #[error("{what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("invalid {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("buffer offsets are tagged feasible-at-start and must be materialized with init_state first")]
    OffsetsNotMaterialized,

    #[error("step {dt} exceeds the explicit-method stability bound {bound} = 1/(k * max in-degree)")]
    StepTooLarge { dt: f64, bound: f64 },

    #[error("node {node} has already been reframed")]
    AlreadyReframed { node: usize },

    #[error("{0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
        if got == expected {
            Ok(())
        } else {
            Err(Error::Dimension {
                what,
                got,
                expected,
            })
        }
    }
}

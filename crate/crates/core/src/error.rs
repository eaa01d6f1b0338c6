use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("invalid generating system: {0}")]
    InvalidGenerators(String),

    #[error("ball size cap {cap} exceeded at depth {depth} ({size} elements)")]
    ResourceLimit { depth: usize, size: usize, cap: usize },

    #[error("restriction has no grid points")]
    EmptyRestriction,

    #[error("exact search refused: {candidates} candidates exceed cap {cap}; use the greedy estimate")]
    ExactCapExceeded { candidates: usize, cap: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("inconsistency: {0}")]
    Inconsistency(String),

    #[error("fundamental-domain count exceeded {max_iter} iterations")]
    UnboundedEll { max_iter: usize },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("distortion staircase does not cover argument {needed} (computed up to {available})")]
    Censored { needed: usize, available: usize },

    #[error("no non-wandering grid point between gaps {0} and {1}; refine delta")]
    ConstructionGap(usize, usize),

    #[error("{module}: {source}")]
    Stage {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_module(self, module: &'static str) -> Self {
        Error::Stage {
            module,
            source: Box::new(self),
        }
    }
}

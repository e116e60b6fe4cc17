use thiserror::Error;

/// Errors raised by the estimator, projection, detector and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("attack unidentifiable: condition number of G'C'R~CG is {cond:.3e}")]
    AttackUnidentifiable { cond: f64 },

    #[error("constraint set is infeasible")]
    Infeasible,

    #[error("active-set iteration limit {limit} exceeded (active rows {active:?}, max violation {violation:.3e})")]
    IterationLimit {
        limit: usize,
        active: Vec<usize>,
        violation: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("false-negative rate undefined: no attacked steps")]
    UndefinedRate,

    #[error("estimator failed at step {k}: {source}")]
    Step {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_step(self, k: usize) -> Self {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                k,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

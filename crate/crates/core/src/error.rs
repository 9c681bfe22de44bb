use thiserror::Error;

/// Errors raised by the eigensolver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{rule} node iteration did not converge for n = {n}")]
    NoConvergence { rule: &'static str, n: usize },

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite subnetwork output at node index {node}")]
    NonFiniteOutput { node: usize },

    #[error("degenerate component: tnn {tnn}, dimension {dim}, component {component} has norm {norm:e}")]
    DegenerateComponent {
        tnn: usize,
        dim: usize,
        component: usize,
        norm: f64,
    },

    #[error("non-finite factor for pair ({m},{n}), dimension {dim}, term {term}")]
    NonFiniteFactor {
        m: usize,
        n: usize,
        dim: usize,
        term: usize,
    },

    #[error("mass matrix not positive definite after jitter up to {max_delta:e} (min diagonal {min_diag:e}, max diagonal {max_diag:e})")]
    IllConditionedMass {
        max_delta: f64,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },

    #[error("singular Gram matrix in projection: {0}")]
    SingularGram(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{phase} step {step} failed")]
    Training {
        phase: &'static str,
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from user input rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Checkpoint(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

/// Errors raised by the retuning pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("operating point is not healthy: linearized plant has poles {0:?} and {1:?}")]
    UnstableOperatingPoint(num::Complex, num::Complex),

    #[error("tustin normalization failed: continuous pole at s = 2/T_s")]
    TustinSingular,

    #[error("controller dimensionality {got} does not match {expected}")]
    Dimension { expected: usize, got: usize },

    #[error("historian batch `{id}` is invalid: {reason}")]
    InvalidBatch { id: String, reason: String },

    #[error("could not draw {wanted} stabilizing controllers within {budget} attempts")]
    StabilizingDrawFailed { wanted: usize, budget: usize },

    #[error("labeled archive is degenerate: only class {class} present after {attempts} attempts")]
    DegenerateArchive { class: u8, attempts: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset contains a single class ({0})")]
    SingleClass(u8),

    #[error("kernel matrix is not positive definite even with jitter {0:e}")]
    NotPositiveDefinite(f64),

    #[error("laplace mode search did not converge: gradient norm {grad_norm:e} after {iterations} iterations")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("LOF needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Tiny complex pair used only for error reporting.
pub mod num {
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Complex {
        pub re: f64,
        pub im: f64,
    }
}

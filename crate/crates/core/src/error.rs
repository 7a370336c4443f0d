use thiserror::Error;

/// Errors raised by model evaluation, quadrature, solvers and the simulator.
#[derive(Debug, Error)]
pub enum PdmpError {
    /// A state or time lies outside the region where an operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Integration or root finding broke down; `last_time` is the last valid time reached.
    #[error("numeric error: {message} (last valid time {last_time})")]
    Numeric { message: String, last_time: f64 },

    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Hit-time detection could not decide between a finite exit and no exit.
    #[error("ambiguous hit-time detection: {0}")]
    AmbiguousHitTime(String),

    /// Truncation horizon too short for the requested tail tolerance.
    #[error("tail certificate failed: bound {bound:.3e} > tol {tol:.3e}; need t_max >= {required_t_max:.3}")]
    TailCertificate {
        bound: f64,
        tol: f64,
        required_t_max: f64,
    },

    /// An iterative scheme did not reach its tolerance.
    #[error("no convergence after {iterations} iterations (last residual {last_residual:.3e})")]
    Convergence {
        iterations: usize,
        last_residual: f64,
        trace: Vec<f64>,
    },

    /// A solver output broke a bound that must hold.
    #[error("diagnostic failure: {0}")]
    Diagnostic(String),

    /// More jumps than the explosion guard allows on a finite horizon.
    #[error("jump accumulation: {jumps} jumps before t = {time:.4}")]
    Explosion { jumps: usize, time: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown {kind} `{name}`; known: {known}")]
    UnknownName {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PdmpError>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "no connected geometric graph with {nodes} nodes at radius {radius} after {attempts} attempts; increase the radius"
    )]
    Disconnected {
        nodes: usize,
        radius: f64,
        attempts: usize,
    },

    #[error("topology is not connected")]
    NotConnected,

    #[error("combination matrix is invalid: {0}")]
    InvalidCombiner(String),

    #[error("unstable step size: mu * sigma_u^2 = {mu_sigma} must lie in (0, 2)")]
    Unstable { mu_sigma: f64 },

    #[error("run with seed {seed:#018x} diverged at iteration {iteration} (non-finite weights); reduce mu")]
    Diverged { seed: u64, iteration: usize },

    #[error("dense oracle limited to M*N <= {limit}, got {size}")]
    OracleTooLarge { size: usize, limit: usize },

    #[error("steady-state window of {window} does not fit a trace of length {len}")]
    WindowTooLong { window: usize, len: usize },

    #[error("series for the steady-state floor did not converge within {0} terms")]
    SeriesDiverged(usize),

    #[error("broken moment estimate: {0}")]
    BadEstimate(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("failed to build worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

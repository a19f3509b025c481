use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error(
        "ellipticity certificate fails: lambda0 - sum ||A_k||_2 = {margin:.6e} <= 0 \
         (lambda0 = {lambda0}, sum of mode norms = {mode_norm_sum})"
    )]
    EllipticityCertificate {
        lambda0: f64,
        mode_norm_sum: f64,
        margin: f64,
    },

    #[error("observed eigenvalue range [{observed_min}, {observed_max}] escapes certified [{lower}, {upper}]")]
    BoundViolation {
        observed_min: f64,
        observed_max: f64,
        lower: f64,
        upper: f64,
    },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e} < -{tol:e}")]
    NotPositiveSemidefinite { eigenvalue: f64, tol: f64 },

    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    TimeStepTooLarge { dt: f64, limit: f64 },

    #[error("negative density {value:e} at node {node} (t = {time}); reduce the time step (dt = {dt:e})")]
    NegativeDensity {
        value: f64,
        node: usize,
        time: f64,
        dt: f64,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infinite relative entropy: {0}")]
    InfiniteEntropy(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

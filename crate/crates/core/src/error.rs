use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("root finder did not converge after {iters} iterations (bracket [{lo:e}, {hi:e}])")]
    RootNonConvergence { iters: usize, lo: f64, hi: f64 },

    #[error("singular point at ({x}, {y}): {what}")]
    Singular { x: f64, y: f64, what: &'static str },

    #[error("newton solve failed at eps = {eps:e}: {reason} (last residual {last_norm:e})")]
    NewtonFailure {
        eps: f64,
        reason: String,
        last_norm: f64,
        norm_history: Vec<f64>,
        last_iterate: Vec<f64>,
    },

    #[error("linear solve failed: zero pivot in column {column}")]
    SingularMatrix { column: usize },

    #[error("no admissible box found within budget of {budget} candidates; best candidate fails on axis {failing_axis} at {failing_point:?}")]
    NondegeneracyViolation {
        budget: usize,
        best_center: Vec<f64>,
        best_half_lengths: Vec<f64>,
        failing_axis: usize,
        failing_point: Vec<f64>,
    },

    #[error("barrier construction failed after {tried} candidates (last m1 = {m1}, t1 = {t1}): {failing}")]
    BarrierConstruction {
        tried: usize,
        m1: f64,
        t1: f64,
        failing: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate element {element}: jacobian determinant {det:e} at quadrature point")]
    DegenerateElement { element: usize, det: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// The conjugate gradient iteration met a direction of nonpositive
    /// curvature, i.e. the operator is not symmetric positive definite.
    #[error("SPD violation{}: nonpositive curvature p'Ap = {curvature:e} at CG iteration {iteration}", .context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
    SpdViolation {
        iteration: usize,
        curvature: f64,
        context: Option<String>,
    },

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("Newton did not converge in {iterations} iterations; residual history {history:?}")]
    NewtonNotConverged {
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("solve failed for trajectory {trajectory} at t = {time}: {source}")]
    TrajectoryFailed {
        trajectory: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("checksum mismatch: file is corrupt or truncated")]
    Checksum,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors that mean the assembled operator was not SPD.
    pub fn is_spd_violation(&self) -> bool {
        match self {
            Error::SpdViolation { .. } => true,
            Error::TrajectoryFailed { source, .. } => source.is_spd_violation(),
            _ => false,
        }
    }
}

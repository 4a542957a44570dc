use thiserror::Error;

use crate::calibration::CalibrationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The tool point coincides with the wire anchor, so the wire direction is undefined.
    #[error("degenerate geometry: tool point is {distance:e} mm from the wire anchor")]
    DegenerateGeometry { distance: f64 },

    /// Loss became non-finite. The report holds everything up to the last good iterate.
    #[error("calibration diverged at iteration {iteration}")]
    Divergence {
        iteration: usize,
        report: Box<CalibrationReport>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be finite, got {value}"
        )))
    }
}

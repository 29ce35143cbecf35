use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Error taxonomy for the whole crate.
///
/// Exit-code mapping used by the CLI: usage/config problems are 2, bad or
/// missing data is 3, numerical failures during sampling are 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller passed arguments that can never be valid (bad config values,
    /// out-of-range parameters).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Input files exist but their content is unusable.
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    /// Homography sampling kept producing non-invertible matrices, or a
    /// warp hit a degenerate configuration.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// warp_point produced a point at infinity (homogeneous scale ~ 0).
    #[error("point at infinity: |w| = {scale:e}")]
    PointAtInfinity { scale: f64 },

    /// A referenced view does not exist in the scene or edit set.
    #[error("missing view {0}")]
    MissingView(u32),

    /// Non-finite values showed up mid-sampling; carries the schedule
    /// timestep and a short diagnostic.
    #[error("numerical failure at t={t}: {msg}")]
    Numerical { t: usize, msg: String },

    /// Engine error while editing a specific view.
    #[error("editing view {view_id}: {source}")]
    Edit { view_id: u32, source: Box<Error> },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }

    /// Process exit code for the CLI: 2 usage, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) => 2,
            Error::Parse { .. }
            | Error::Io { .. }
            | Error::DegenerateGeometry(_)
            | Error::PointAtInfinity { .. }
            | Error::MissingView(_) => 3,
            Error::Numerical { .. } => 4,
            Error::Edit { source, .. } => source.exit_code(),
        }
    }
}

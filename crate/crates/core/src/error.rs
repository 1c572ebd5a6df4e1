use std::fmt;

/// Errors raised by the calibration library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Rotation vector outside the region where the inverse right Jacobian is defined.
    JacobianDomain { angle: f64 },
    /// A vector or matrix had the wrong size for the state it was applied to.
    DimensionMismatch { expected: usize, found: usize },
    /// Camera index outside `[0, N)`.
    InvalidCamera { index: usize, cameras: usize },
    /// Propagation step outside `(0, 0.1]` seconds.
    InvalidTimeStep { dt: f64 },
    /// Innovation covariance could not be factorized.
    InnovationNotPositiveDefinite { camera: Option<usize> },
    /// Argument outside its valid range.
    OutOfRange { name: &'static str, value: f64 },
    /// The estimate became non-finite or the gate rejected too many updates in a row.
    Divergence(String),
    /// Configuration failed validation.
    Config(String),
    /// Measurement log could not be parsed.
    Parse { line: usize, message: String },
    /// Filesystem error.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::JacobianDomain { angle } => write!(
                f,
                "rotation angle {angle} rad is too close to pi for the inverse right Jacobian"
            ),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::InvalidCamera { index, cameras } => {
                write!(f, "camera index {index} out of range for {cameras} camera(s)")
            }
            Error::InvalidTimeStep { dt } => {
                write!(f, "propagation step {dt} s outside (0, 0.1]")
            }
            Error::InnovationNotPositiveDefinite { camera: Some(c) } => {
                write!(f, "innovation covariance not positive definite (camera {c})")
            }
            Error::InnovationNotPositiveDefinite { camera: None } => {
                write!(f, "innovation covariance not positive definite")
            }
            Error::OutOfRange { name, value } => write!(f, "{name} = {value} is out of range"),
            Error::Divergence(msg) => write!(f, "filter diverged: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Parse { line, message } => write!(f, "log line {line}: {message}"),
            Error::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

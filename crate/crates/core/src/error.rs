use crate::Point;

/// Errors raised by the library. Outcomes that the mathematics treats as
/// ordinary (no hit within the horizon, a boundary landing, a non-surviving
/// permanence trial) are variant results of the corresponding operation, not
/// errors.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("point {point:?} lies outside patch `{patch}`")]
    OutsidePatch { patch: String, point: Point },

    #[error("impulse inverse did not converge after {iterations} iterations (residual {residual:.3e})")]
    InverseDiverged { iterations: usize, residual: f64 },

    #[error("empty point set")]
    EmptySet,

    #[error("trajectory left the domain at t = {time} ({point:?})")]
    LeftDomain { time: f64, point: Point },

    #[error("step size underflow at t = {time}")]
    StepUnderflow { time: f64 },

    #[error("system failed validation: {0}")]
    InvalidSystem(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("fixed point on the boundary of the ball (margin {margin:.3e})")]
    FixedPointOnBoundary { margin: f64 },

    #[error("angle refinement budget exceeded; map too wild at this resolution")]
    AngleJump,

    #[error("dimension {0} unsupported (sections must be two-dimensional)")]
    DimensionUnsupported(usize),

    #[error("map undefined at {point:?}: {reason}")]
    MapUndefined { point: Point, reason: String },

    #[error("time {t} outside [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("no near-return within the recurrence budget")]
    NotRecurrent,

    #[error("bump would collide with other orbit points: {0}")]
    BumpCollision(String),

    #[error("perturbation tube intersects a section")]
    TubeIntersectsSection,

    #[error("perturbation did not close the orbit (residual {residual:.3e})")]
    VerificationFailed { residual: f64 },

    #[error("no free orbit segment for the perturbation")]
    NoFreeSegment,

    #[error("contraction not achieved (ratio {ratio:.4})")]
    ContractionNotAchieved { ratio: f64 },

    #[error("orbit crossings on the landing section are too close")]
    CrossingsTooClose,

    #[error("unknown builtin system `{0}`")]
    UnknownSystem(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

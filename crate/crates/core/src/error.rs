use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid gaussian: {0}")]
    InvalidGaussian(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("object {object} has only {points} surface points (need at least {min})")]
    ObjectTooSparse {
        object: usize,
        points: usize,
        min: usize,
    },

    #[error("simulation diverged at step {step}")]
    SimulationDiverged { step: usize },

    #[error("time step {dt:e} s exceeds the CFL bound {bound:e} s")]
    CflViolation { dt: f64, bound: f64 },

    #[error("scene bounds have zero volume")]
    DegenerateBounds,

    #[error("all gaussians were pruned at iteration {iteration}: {diagnostic}")]
    AllPruned { iteration: usize, diagnostic: String },

    #[error("unknown object id {0}")]
    UnknownObject(usize),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("no valid pixels to evaluate")]
    NoValidPixels,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("unsupported scene file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SimulationDiverged { .. }
                | Error::CflViolation { .. }
                | Error::AllPruned { .. }
                | Error::InvalidGaussian(_)
        )
    }
}

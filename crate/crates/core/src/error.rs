use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid weight nu = {nu}: {reason}")]
    InvalidWeight { nu: f64, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error(
        "inadmissible weight nu = {nu}: Neumann inversion of block {block} diverges \
         (|sqrt(2 pi) kernel transform| = {norm:.6} >= 1 at t = {freq})"
    )]
    InadmissibleWeight {
        nu: f64,
        block: &'static str,
        norm: f64,
        freq: f64,
    },

    #[error("weighted L1 norm {norm:.6} of the kernel is >= 1 at nu = {nu}")]
    NormTooLarge { nu: f64, norm: f64 },

    #[error("kernel hypotheses not satisfied: {0}")]
    HypothesesFailed(String),

    #[error("singular per-frequency system at index {index} (t = {freq}); positivity has likely failed")]
    SingularSystem { index: usize, freq: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("elasticity tensor and memory kernel do not commute (max commutator {commutator:.3e})")]
    NonCommuting { commutator: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("search failed: {0}")]
    SearchFailed(String),

    #[error("time stepping unstable: {0}")]
    Unstable(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics themselves rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem { .. }
                | Error::Singular(_)
                | Error::Unstable(_)
                | Error::InadmissibleWeight { .. }
                | Error::NormTooLarge { .. }
                | Error::SearchFailed(_)
                | Error::NonFinite(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

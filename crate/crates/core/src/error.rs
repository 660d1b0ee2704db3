use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("operator is not hermitian (residual {residual:.3e})")]
    NotHermitian { residual: f64 },
    #[error("operator is not unitary (residual {residual:.3e})")]
    NotUnitary { residual: f64 },
    #[error("operator is not a projection (residual {residual:.3e})")]
    NotProjection { residual: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("Schatten exponent must satisfy p >= 1, got {0}")]
    InvalidP(f64),
    #[error("adiabatic rate must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("inverse temperature must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("sample count must be positive")]
    NonPositiveN,
    #[error("flux commensurability violated: {0}")]
    FluxIncommensurate(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("Fermi energy {fermi} lies within {distance:.3e} of an eigenvalue")]
    FermiOnEigenvalue { fermi: f64, distance: f64 },
    #[error("operation requires a clean (disorder-free) model")]
    RequiresCleanModel,
    #[error("band gap closes on the momentum grid (separation {separation:.3e})")]
    GapClosure { separation: f64 },
    #[error("Chern number not converged under grid refinement: {coarse} vs {fine}")]
    ChernNotConverged { coarse: i64, fine: i64 },
    #[error("kernel offset ({0}, {1}) exceeds half the torus")]
    RangeExceedsHalfTorus(i64, i64),
    #[error("state does not commute with the Hamiltonian (residual {residual:.3e})")]
    NotEquilibrium { residual: f64 },
    #[error("finite-difference levels disagree: {difference:.3e} exceeds {bound:.3e}")]
    StepTooLarge { difference: f64, bound: f64 },
    #[error("modulation {0} has no closed-form resolvent evaluation")]
    UnsupportedModulation(&'static str),
    #[error("current {direction} has a Bohr-frequency-zero block pairing to {pairing:.3e}")]
    DiagonalObstruction { direction: usize, pairing: f64 },
    #[error("operator is not a spectral projection of the Hamiltonian (residual {residual:.3e})")]
    NotSpectralProjection { residual: f64 },
    #[error("box {0}x{1} does not fit in the torus")]
    BoxExceedsTorus(usize, usize),
    #[error("the open-position gauge is required: {0}")]
    RequiresOpenPositions(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("linear algebra failure: {0}")]
    Linalg(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

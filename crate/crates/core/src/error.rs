use thiserror::Error;

/// Failure modes of the toolkit. Variant names are reported verbatim by the
/// command-line runner, so they double as stable error identifiers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("operator is not Hermitian (relative anti-Hermitian part {0:e})")]
    NonHermitian(f64),
    #[error("symplectic form is degenerate at {point:?} (singular-value ratio {ratio:e})")]
    NonSymplecticPoint { point: Vec<f64>, ratio: f64 },
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("no closed orbit found: {0}")]
    NoClosureFound(String),
    #[error("no bracket for target n = {target} (family phase range [{lo}, {hi}])")]
    BracketNotFound { target: i64, lo: f64, hi: f64 },
    #[error("monodromy is not a pure phase (defect {0:e})")]
    NotACylinderOrbit(f64),
    #[error("time average vanishes (norm {0:e})")]
    ZeroAverage(f64),
    #[error("generator spectrum is not hbar-integral (max defect {0:e})")]
    SpectrumNotInteger(f64),
    #[error("minimizer did not converge: {0}")]
    NotConverged(String),
    #[error("critical point is a saddle (Hessian eigenvalue {0:e})")]
    SaddlePoint(f64),
    #[error("stability matrix has eigenvalue with real part {0:e}")]
    ComplexInstability(f64),
    #[error("mode phase functional is negative ({0:e}); conjugate pair must be relabelled")]
    NegativePhaseDirection(f64),
    #[error("constraint target unreachable: {0}")]
    TargetUnreachable(String),
    #[error("oscillator truncation insufficient: tail weight {0:e}")]
    TruncationInsufficient(f64),
    #[error("spectrum is not commensurate: {0}")]
    IncommensurateSpectrum(String),
}

impl Error {
    /// Variant name, used as the error kind in machine-readable reports.
    pub fn name(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::InvalidInput(_) => "InvalidInput",
            Error::NonHermitian(_) => "NonHermitian",
            Error::NonSymplecticPoint { .. } => "NonSymplecticPoint",
            Error::StepSizeUnderflow { .. } => "StepSizeUnderflow",
            Error::NoClosureFound(_) => "NoClosureFound",
            Error::BracketNotFound { .. } => "BracketNotFound",
            Error::NotACylinderOrbit(_) => "NotACylinderOrbit",
            Error::ZeroAverage(_) => "ZeroAverage",
            Error::SpectrumNotInteger(_) => "SpectrumNotInteger",
            Error::NotConverged(_) => "NotConverged",
            Error::SaddlePoint(_) => "SaddlePoint",
            Error::ComplexInstability(_) => "ComplexInstability",
            Error::NegativePhaseDirection(_) => "NegativePhaseDirection",
            Error::TargetUnreachable(_) => "TargetUnreachable",
            Error::TruncationInsufficient(_) => "TruncationInsufficient",
            Error::IncommensurateSpectrum(_) => "IncommensurateSpectrum",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

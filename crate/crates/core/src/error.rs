use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resolvent is singular at omega = {0} rad/s")]
    SingularAtFrequency(f64),

    #[error("algebraic loop: feedthrough loop matrix is singular")]
    AlgebraicLoop,

    #[error("system is not asymptotically stable")]
    UnstableSystem,

    #[error("Hamiltonian has eigenvalues on the imaginary axis")]
    ImaginaryAxisEigenvalue,

    #[error("no stabilizing Riccati solution: {0}")]
    NoStabilizingSolution(String),

    #[error("H-infinity problem infeasible at gamma_max = {0}")]
    InfeasibleAtGammaMax(f64),

    #[error("regularity failure: {0}")]
    RegularityFailure(String),

    #[error("nominal response is rank deficient at omega = {0} rad/s")]
    RankDeficientNominal(f64),

    #[error("residual ratio is singular at omega = {0} rad/s")]
    SingularRatio(f64),

    #[error("frequency grids do not match")]
    GridMismatch,

    #[error("magnitude fit infeasible: {0}")]
    InfeasibleFit(String),

    #[error("envelope has negative or non-finite entries")]
    NonPositiveEnvelope,

    #[error("scaling transfer function has zero feedthrough")]
    NonInvertibleScale,

    #[error("observer is not internally stable")]
    UnstableObserver,

    #[error("excited line {0} is at or above Nyquist")]
    LineAboveNyquist(usize),

    #[error("excitation is rank deficient at line {0}")]
    RankDeficientExcitation(usize),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("DK iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("bath discretization produced a non-finite value at mode {index}")]
    NonFiniteBath { index: usize },

    #[error("non-finite field value at step {step} (t = {time}); the time step is too large")]
    NonFiniteField { step: usize, time: f64 },

    #[error("local <sigma_z> has imaginary part {imag:e}; the psi/phi fields are no longer conjugate")]
    ComplexObservable { imag: f64 },

    #[error("log-density gradient has a non-zero off-diagonal entry ({row},{col})")]
    OffDiagonalLogDensity { row: usize, col: usize },

    #[error("trajectory {index} (master seed {seed}) failed: {source}")]
    Trajectory {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("operator evaluation is not finite at stencil point {point:?}")]
    NonFiniteOperator { point: Vec<f64> },

    #[error("operator is declared Hermitian but is not at {point:?}")]
    NotHermitian { point: Vec<f64> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("functional violates homogeneity by {violation:e}")]
    Homogeneity { violation: f64 },

    #[error("omega blocks are not antisymmetric (deviation {deviation:e})")]
    NotAntisymmetric { deviation: f64 },

    #[error("omega upper block is not anti-Hermitian (deviation {deviation:e})")]
    OmegaNotAntiHermitian { deviation: f64 },
}

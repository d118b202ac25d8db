use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate spectrum: eigenvalues {first} and {second} coincide within {tol:e}")]
    DegenerateSpectrum {
        first: String,
        second: String,
        tol: f64,
    },

    #[error("invalid subspace: {0}")]
    InvalidSubspace(String),

    #[error("spectral quotient undefined: {0}")]
    ZeroDenominator(String),

    #[error("inner resonance at degree {degree}: eigenvalue {eigenvalue} vs divisor magnitude {divisor:e}")]
    Resonance {
        degree: usize,
        eigenvalue: String,
        divisor: f64,
    },

    #[error("forcing resonance at degree {degree}, harmonic {harmonic}: eigenvalue {eigenvalue} (divisor magnitude {divisor:e})")]
    ForcingResonance {
        degree: usize,
        harmonic: i32,
        eigenvalue: String,
        divisor: f64,
    },

    #[error("controller harmonic {0} is outside the solver harmonic set")]
    HarmonicOutOfRange(i32),

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("optimizer aborted: {0}")]
    Optimizer(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}

use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numerical blow-up at t = {t}{}", step.map(|s| format!(" (step {s})")).unwrap_or_default())]
    Blowup { t: f64, step: Option<usize> },

    #[error("step size underflow at t = {t}: h = {h:e} fell below {h_min:e}")]
    StepUnderflow { t: f64, h: f64, h_min: f64 },

    #[error("maximum number of steps ({0}) exceeded")]
    TooManySteps(usize),

    #[error("non-finite value reached the loss; gradients are poisoned")]
    PoisonedGradient,

    #[error("non-finite gradient; optimizer update rejected")]
    NonFiniteGradient,

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}

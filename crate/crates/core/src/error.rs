use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("hamiltonian is not of the affine form <p, h(x)> + c psi(x)")]
    UnsupportedForm,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("step budget exhausted at t = {t}")]
    TooManySteps { t: f64 },
    #[error("event refinement did not converge near t = {t}")]
    EventRefinement { t: f64 },
    #[error("sampling too coarse to isolate zeros near t = {t}; tighten tolerances")]
    Resolution { t: f64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("tangential crossing of psi = 0 at t = {t} (|L_h psi| = {rate:e})")]
    NtViolation { t: f64, rate: f64 },
    #[error("psi vanishes within the exclusion window of switch {switch} (t = {t})")]
    SsViolation { switch: usize, t: f64 },
    #[error("shooting did not converge after {iterations} iterations (residual {residual:e})")]
    ShootingFailure { iterations: usize, residual: f64 },
    #[error("switching order violated: {0}")]
    StructureViolation(String),
    #[error("maximized flow left the reference structure: {0}")]
    StructureMismatch(String),
    #[error("degenerate switch: {0}")]
    DegenerateSwitch(String),
    #[error("ill-conditioned variational flow at t = {t}")]
    SingularFlow { t: f64 },
    #[error("incomplete pullback data: {0}")]
    IncompletePullback(String),
    #[error("branch inapplicable: {0}")]
    BranchInapplicable(String),
    #[error("unknown problem '{0}'")]
    UnknownProblem(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

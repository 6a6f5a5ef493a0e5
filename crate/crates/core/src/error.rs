use std::fmt;

/// Errors produced by the solver stack.
///
/// Each variant maps to a stable short code (see [`Error::code`]) used in CSV
/// status columns and by the C interface.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("negative wavenumber radicand: mu - g*n = {radicand:e} (mu = {mu}, g = {g}, n = {density})")]
    NegativeRadicand {
        mu: f64,
        g: f64,
        density: f64,
        radicand: f64,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no resonance index in the requested range gives a positive energy")]
    EmptyRange,
    #[error("energy is not a unit-transmission point: 1 - T = {deficit:e}")]
    NotResonant { deficit: f64 },
    #[error("step limit of {max_steps} exceeded at x = {x}")]
    StepLimitExceeded { x: f64, max_steps: usize },
    #[error("step size {step:e} fell below the minimum at x = {x}")]
    StepUnderflow { x: f64, step: f64 },
    #[error("non-finite wave state at x = {x}")]
    NonFiniteState { x: f64 },
    #[error("local wavenumber is evanescent at x = {x} (density {density})")]
    EvanescentLocal { x: f64, density: f64 },
    #[error("no real incoming amplitude: discriminant {discriminant:e} < 0")]
    ClosedIncomingChannel { discriminant: f64 },
    #[error("degenerate incoming amplitude (psi' +/- i k' psi vanishes)")]
    DegenerateAmplitude,
    #[error("no resonance in bracket: best mu = {mu}, T2 = {transmission}")]
    NoResonanceInBracket { mu: f64, transmission: f64 },
    #[error("time step became unstable at t = {t} (norm {norm:e})")]
    UnstableStep { t: f64, norm: f64 },
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("no steady state reached by t = {t} (last relative change {change:e})")]
    NoSteadyState { t: f64, change: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Stable machine-readable classification of an [`Error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    NegativeRadicand,
    Domain,
    EmptyRange,
    NotResonant,
    StepLimitExceeded,
    StepUnderflow,
    NonFiniteState,
    EvanescentLocal,
    ClosedIncomingChannel,
    DegenerateAmplitude,
    NoResonanceInBracket,
    UnstableStep,
    GridTooCoarse,
    NoSteadyState,
    Invalid,
    Parse,
    Io,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::NegativeRadicand => "negative-radicand",
            ErrorCode::Domain => "domain",
            ErrorCode::EmptyRange => "empty-range",
            ErrorCode::NotResonant => "not-resonant",
            ErrorCode::StepLimitExceeded => "step-limit",
            ErrorCode::StepUnderflow => "step-underflow",
            ErrorCode::NonFiniteState => "non-finite",
            ErrorCode::EvanescentLocal => "evanescent-local",
            ErrorCode::ClosedIncomingChannel => "closed-incoming",
            ErrorCode::DegenerateAmplitude => "degenerate-amplitude",
            ErrorCode::NoResonanceInBracket => "no-resonance",
            ErrorCode::UnstableStep => "unstable-step",
            ErrorCode::GridTooCoarse => "grid-too-coarse",
            ErrorCode::NoSteadyState => "no-steady-state",
            ErrorCode::Invalid => "invalid",
            ErrorCode::Parse => "parse",
            ErrorCode::Io => "io",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Error {
    /// Classification of the innermost error, looking through context wrappers.
    pub fn code(&self) -> ErrorCode {
        match self {
            Error::NegativeRadicand { .. } => ErrorCode::NegativeRadicand,
            Error::Domain(_) => ErrorCode::Domain,
            Error::EmptyRange => ErrorCode::EmptyRange,
            Error::NotResonant { .. } => ErrorCode::NotResonant,
            Error::StepLimitExceeded { .. } => ErrorCode::StepLimitExceeded,
            Error::StepUnderflow { .. } => ErrorCode::StepUnderflow,
            Error::NonFiniteState { .. } => ErrorCode::NonFiniteState,
            Error::EvanescentLocal { .. } => ErrorCode::EvanescentLocal,
            Error::ClosedIncomingChannel { .. } => ErrorCode::ClosedIncomingChannel,
            Error::DegenerateAmplitude => ErrorCode::DegenerateAmplitude,
            Error::NoResonanceInBracket { .. } => ErrorCode::NoResonanceInBracket,
            Error::UnstableStep { .. } => ErrorCode::UnstableStep,
            Error::GridTooCoarse(_) => ErrorCode::GridTooCoarse,
            Error::NoSteadyState { .. } => ErrorCode::NoSteadyState,
            Error::Invalid(_) => ErrorCode::Invalid,
            Error::Parse { .. } => ErrorCode::Parse,
            Error::Io(_) => ErrorCode::Io,
            Error::Context { source, .. } => source.code(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

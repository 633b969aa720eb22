use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The harmonic blend of the observed and predicted statistic has no
    /// usable denominator (or the two statistics disagree in sign).
    #[error("degenerate weight: observed {observed} and predicted {predicted} cannot be blended")]
    DegenerateWeight { observed: f64, predicted: f64 },

    /// No events in the population at the analysis cut.
    #[error("log-rank statistic undefined: no events in {0}")]
    UndefinedStatistic(&'static str),

    /// Inputs that are individually valid but inconsistent with each other.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("value out of validity range: {0}")]
    Range(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no signal: {0}")]
    NoSignal(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("gmf evaluation failed at column {column}: {source}")]
    Column {
        column: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! precondition {
    ($($arg:tt)*) => {
        $crate::error::Error::Precondition(alloc::format!($($arg)*))
    };
}
pub(crate) use precondition;

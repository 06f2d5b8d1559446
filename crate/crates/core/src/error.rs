use thiserror::Error;

/// Everything that can go wrong inside the core crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("one-step policy does not factorize into an option model at state {state} (max deviation {deviation:e})")]
    Inconsistent { state: usize, deviation: f64 },
    #[error("enumeration of {count} option sequences exceeds the limit of {limit}")]
    EnumerationTooLarge { count: u128, limit: u128 },
    #[error("trajectory is impossible under the policy at step {step}")]
    ImpossibleTrajectory { step: usize },
    #[error("demo {demo}: trajectory is impossible under the policy at step {step}")]
    ImpossibleDemo { demo: usize, step: usize },
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
    #[error("linear solve failed: {0}")]
    SolveFailed(&'static str),
    #[error("index out of range: {0}")]
    IndexOutOfRange(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("unknown environment `{0}`")]
    UnknownEnv(alloc::string::String),
}

pub type Result<T> = core::result::Result<T, Error>;

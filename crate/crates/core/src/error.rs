use thiserror::Error;

/// Broad failure classes. The CLI maps each one to its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Config,
    Physics,
    Numerical,
    Runtime,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error("coordinate {axis} = {value} outside domain [{min}, {max}]")]
    Domain {
        axis: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("normalization: {0}")]
    Normalization(String),
    #[error("memory budget exceeded: {requested} bytes requested, {budget} allowed")]
    Memory { requested: usize, budget: usize },
    #[error("unstable time step: dt*max|V|/hbar = {0:.3} (must be < 0.5)")]
    Stability(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("sampler acceptance rate {rate:.2e} below 1e-4; retune the envelope")]
    SamplerFailure { rate: f64 },
    #[error("no flux through detector: integral of |j| = {0:.3e}")]
    NoFlux(f64),
    #[error("pointer packets not separated: overlap {0:.3e} >= 1e-6")]
    NotSeparated(f64),
    #[error("node of the wavefunction: density {0:.3e} below floor")]
    Node(f64),
    #[error("causality violation: |v| = {0}")]
    CausalityViolation(f64),
    #[error("physics: {0}")]
    Physics(String),
    #[error("construction bug: {0}")]
    Construction(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("degenerate observer vector: P.P = {0:.3e}")]
    DegenerateObserver(f64),
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Memory { .. } | Error::Unsupported(_) => {
                Category::Config
            }
            Error::Domain { .. }
            | Error::Normalization(_)
            | Error::Physics(_)
            | Error::NotSeparated(_)
            | Error::NoFlux(_)
            | Error::DegenerateObserver(_) => Category::Physics,
            Error::Stability(_) | Error::SamplerFailure { .. } | Error::Node(_) => {
                Category::Numerical
            }
            Error::CausalityViolation(_)
            | Error::Construction(_)
            | Error::InvariantViolation(_) => Category::Runtime,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

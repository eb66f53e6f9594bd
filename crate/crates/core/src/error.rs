use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error: {0}")]
    Syntax(String),

    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),

    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),

    #[error("enumeration cap exceeded: requested {requested}, cap {cap}")]
    CapExceeded { requested: usize, cap: usize },

    #[error("invalid solver options: {0}")]
    InvalidOptions(String),

    #[error("invalid automaton: {0}")]
    InvalidAutomaton(String),

    #[error("matrix is singular at working tolerance (condition ratio {ratio:e})")]
    SingularMatrix { ratio: f64 },

    #[error("alphabet mismatch between automata")]
    AlphabetMismatch,

    #[error("rank {requested} out of range 1..={max}")]
    BadRank { requested: usize, max: usize },

    #[error("fixed-point iteration diverged after {iterations} iterations: {reason}")]
    Diverged { iterations: usize, reason: String },

    #[error(
        "fixed-point iteration did not converge in {iterations} iterations (residual {residual:e})"
    )]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("linear system I - E is singular at working tolerance")]
    SingularSystem,

    #[error("all Gram eigenvalues fall below the rank cutoff")]
    RankZero,

    #[error("series still strongly convergent at gamma = {last_convergent}; no upper bracket")]
    NoUpperBracket { last_convergent: f64 },

    #[error("duplicate rule: {0}")]
    DuplicateRule(String),

    #[error("symbol `{0}` used both as terminal and nonterminal")]
    NameClash(String),

    #[error("tree bank is empty")]
    EmptyBank,

    #[error("empty string")]
    EmptyString,

    #[error("non-positive weight {weight:e} for test tree {index}")]
    NonPositiveWeight { index: usize, weight: f64 },

    #[error("empty test set")]
    EmptyTestSet,

    #[error("negative radicand {0:e} in l2 distance")]
    NegativeRadicand(f64),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl Error {
    /// True for failures of the numerical machinery (divergence, singular
    /// systems), as opposed to malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularMatrix { .. }
                | Error::Diverged { .. }
                | Error::MaxIterations { .. }
                | Error::SingularSystem
                | Error::RankZero
                | Error::NoUpperBracket { .. }
                | Error::NegativeRadicand(_)
        )
    }
}

//! Error type shared across the crate.
//!
//! Every fallible public operation returns [`crate::Result`]. Variants carry
//! enough context (dimensions, indices, offending values) that a caller can
//! report a failure without re-deriving what went wrong.

use thiserror::Error;

/// Unified error type for certificate synthesis and verification.
#[derive(Debug, Error)]
pub enum Error {
    /// Two objects that must agree in dimension do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        /// What was being checked.
        context: String,
        /// Dimension required by the operation.
        expected: usize,
        /// Dimension actually supplied.
        actual: usize,
    },

    /// An operation that needs a differentiable activation met a kinked one.
    #[error("activation {activation} is not smooth enough for {context}")]
    NonSmoothActivation {
        /// Offending activation tag.
        activation: String,
        /// Operation that rejected it.
        context: String,
    },

    /// A network does not satisfy the structural requirements of a role
    /// (certificate function, controller, ...).
    #[error("network unsuitable as {role}: {reason}")]
    BadNetworkRole {
        /// Role the network was offered for.
        role: String,
        /// Why it was rejected.
        reason: String,
    },

    /// A symmetric matrix expected to be positive (semi)definite is not.
    #[error("matrix not positive definite: pivot {pivot:.6e} at index {index}")]
    NotPositiveDefinite {
        /// Index of the first failing pivot.
        index: usize,
        /// Value of that pivot.
        pivot: f64,
    },

    /// Reverse-mode sweep reached a black-box dynamics node that was recorded
    /// without a finite-difference Jacobian.
    #[error("gradient requested through a black-box dynamics node recorded without a Jacobian")]
    MissingJacobian,

    /// A requested sample cover would exceed the point budget.
    #[error("cover would need {required} points, exceeding the budget of {budget}")]
    CoverBudgetExceeded {
        /// Points the requested resolution needs.
        required: usize,
        /// Configured ceiling.
        budget: usize,
    },

    /// A Lipschitz budget is missing a constant needed to compose the
    /// overall validity constant.
    #[error("incomplete Lipschitz budget: missing {missing}")]
    IncompleteBudget {
        /// Name of the absent constant.
        missing: String,
    },

    /// Numerical integration produced a non-finite state.
    #[error("trajectory diverged at t = {t:.6}: state no longer finite")]
    Divergence {
        /// Time of the first non-finite step.
        t: f64,
        /// Last finite state, for diagnostics.
        last_state: Vec<f64>,
    },

    /// A point lies outside the domain that an operation requires.
    #[error("domain violation in {context}: {detail}")]
    DomainViolation {
        /// Operation that detected the violation.
        context: String,
        /// Human-readable description of the offending value.
        detail: String,
    },

    /// A configuration file failed to parse or validate.
    #[error("config error in {path}: {detail}")]
    Config {
        /// File that was being read.
        path: String,
        /// Parse or validation failure description.
        detail: String,
    },

    /// A weight or data file is malformed.
    #[error("format error in {path} at line {line}: {detail}")]
    Format {
        /// File that was being read.
        path: String,
        /// 1-based line number of the offending record.
        line: usize,
        /// What was wrong.
        detail: String,
    },

    /// A subprocess plant violated the line protocol.
    #[error("plant protocol error: {detail}")]
    Protocol {
        /// Description of the violation, including the offending line if any.
        detail: String,
    },

    /// Underlying I/O failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        /// Path involved in the operation.
        path: String,
        /// OS-level error.
        #[source]
        source: std::io::Error,
    },

    /// A value that must be finite and/or positive is not.
    #[error("invalid value for {name}: {value} ({requirement})")]
    InvalidValue {
        /// Parameter name.
        name: String,
        /// Offending value.
        value: f64,
        /// Constraint that was violated.
        requirement: String,
    },
}

impl Error {
    /// Shorthand for an I/O error tagged with the path it concerns.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

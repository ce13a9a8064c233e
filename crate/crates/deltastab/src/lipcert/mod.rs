//! Lipschitz certification: exact semidefinite feasibility tests for network
//! Lipschitz bounds and statistical estimation of dynamics constants.
//!
//! * [`ldlt`] — a small, permutation-free LDLᵀ factorization used both as the
//!   positive-definiteness test behind every certificate and as the `logdet`
//!   kernel inside the training loss.
//! * [`lipsdp`] — assembles the feasibility matrix whose positive
//!   semidefiniteness proves an ℓ₂ Lipschitz bound for a feedforward network
//!   with slope-restricted activations, in both a plain form (for
//!   certification) and a tape form (for training through `logdet`).
//! * [`weibull`] — reverse-Weibull tail fitting that estimates Lipschitz
//!   constants of black-box functions from sampled difference quotients.

pub mod ldlt;
pub mod lipsdp;
pub mod weibull;

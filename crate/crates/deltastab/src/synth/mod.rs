//! The synthesis pipeline: scenario residuals, training losses, the
//! composite Lipschitz constant, the training loop, the certificate,
//! and the comparison-function envelopes.
//!
//! The flow mirrors how the toolkit is used end to end:
//!
//! 1. [`hyper::HyperParams`] fixes the class-𝒦∞ template, rates, loss
//!    weights, and optimizer settings.
//! 2. [`budget::LipschitzBudget`] collects every regularity constant and
//!    [`budget::compose_overall_l`] folds them into the single constant ℒ
//!    that links sampled to continuous satisfaction.
//! 3. [`residuals`] evaluates the four scenario conditions on tuples drawn
//!    from the covers; [`losses`] turns them into trainable objectives on
//!    the autodiff tape.
//! 4. [`train`] runs the optimizer until the convergence conditions hold on
//!    the full dataset or the epoch budget runs out.
//! 5. [`certify`] re-verifies everything exhaustively and issues the
//!    machine-readable certificate.
//! 6. [`envelope::KlEnvelope`] turns the certified template constants into
//!    the closed-form incremental-stability envelopes.

pub mod budget;
pub mod certify;
pub mod envelope;
pub mod graph;
pub mod hyper;
pub mod losses;
pub mod residuals;
pub mod train;

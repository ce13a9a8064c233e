//! Sampling-based estimation of the dynamics' regularity constants.
//!
//! The certification pipeline needs three numbers about the black-box vector
//! field: its Lipschitz constant in the state (`ℒ_x`), its Lipschitz constant
//! in the control input (`ℒ_u`), and a bound on its magnitude (`M_f`) over
//! the working region. None of them can be read off an unknown system, so
//! they are estimated statistically: draw difference quotients (or values),
//! keep batch maxima, and fit a reverse-Weibull tail whose location parameter
//! estimates the supremum.

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::lipcert::weibull::{estimate_from_slopes, SlopeSampling, WeibullFit};

use super::Plant;

/// Estimated regularity constants of a plant over a state and input box.
#[derive(Debug, Clone)]
pub struct DynamicsBounds {
    /// Lipschitz constant of `f` in the state, input held fixed.
    pub l_x: WeibullFit,
    /// Lipschitz constant of `f` in the control input, state held fixed.
    pub l_u: WeibullFit,
    /// Magnitude bound `sup |f(x, u)|`.
    pub m_f: WeibullFit,
}

/// Draws a pair of distinct points from `domain`, resampling degenerate
/// draws so difference quotients are always well defined.
fn distinct_pair(domain: &BoxDomain, rng: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>, f64) {
    loop {
        let a = domain.sample_uniform(rng);
        let b = domain.sample_uniform(rng);
        let dist = (&a - &b).norm();
        if dist > 1e-12 {
            return (a, b, dist);
        }
    }
}

/// Estimates `ℒ_x`, `ℒ_u`, and `M_f` for `plant` over `state_box × input_box`.
///
/// Each constant gets its own tail fit drawn from `cfg.batches` independent
/// batches; the three estimates use decorrelated seeds derived from `seed`.
/// Evaluation costs `3 · batches · pairs_per_batch` queries for the slope
/// estimates plus one batch set for the magnitude, so external simulators
/// may want a smaller [`SlopeSampling`] than the default.
pub fn estimate_dynamics_bounds<P>(
    plant: &mut P,
    state_box: &BoxDomain,
    input_box: &BoxDomain,
    cfg: &SlopeSampling,
    seed: u64,
) -> Result<DynamicsBounds>
where
    P: Plant + ?Sized,
{
    if state_box.dim() != plant.dim_x() {
        return Err(Error::DimensionMismatch {
            context: "dynamics bounds: state box".into(),
            expected: plant.dim_x(),
            actual: state_box.dim(),
        });
    }
    if input_box.dim() != plant.dim_u() {
        return Err(Error::DimensionMismatch {
            context: "dynamics bounds: input box".into(),
            expected: plant.dim_u(),
            actual: input_box.dim(),
        });
    }

    let l_x = estimate_from_slopes(
        |rng| {
            let (xa, xb, dist) = distinct_pair(state_box, rng);
            let u = input_box.sample_uniform(rng);
            let fa = plant.eval(&xa, &u)?;
            let fb = plant.eval(&xb, &u)?;
            Ok((fa - fb).norm() / dist)
        },
        cfg,
        seed,
    )?;

    let l_u = estimate_from_slopes(
        |rng| {
            let x = state_box.sample_uniform(rng);
            let (ua, ub, dist) = distinct_pair(input_box, rng);
            let fa = plant.eval(&x, &ua)?;
            let fb = plant.eval(&x, &ub)?;
            Ok((fa - fb).norm() / dist)
        },
        cfg,
        seed ^ 0x5d5c_1a2b_3c4d_5e6f,
    )?;

    let m_f = estimate_from_slopes(
        |rng| {
            let x = state_box.sample_uniform(rng);
            let u = input_box.sample_uniform(rng);
            Ok(plant.eval(&x, &u)?.norm())
        },
        cfg,
        seed ^ 0xa0b1_c2d3_e4f5_0617,
    )?;

    Ok(DynamicsBounds { l_x, l_u, m_f })
}

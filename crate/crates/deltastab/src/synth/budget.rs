//! The composite Lipschitz constant ℒ of the scenario conditions.
//!
//! The validity argument transfers satisfaction of the sampled conditions to
//! the whole continuum at the price of the margin `ℒ·ε`, where ℒ bounds how
//! fast any of the four residuals can vary between sample points. It is a
//! four-term maximum assembled from every regularity constant in play:
//!
//! ```text
//! ℒ = max{ √2·ℒ_L + 2𝖫₁,
//!          √2·ℒ_L + 2𝖫₂,
//!          √2·κ·ℒ_L + 2𝖫_u + 2(M_f·ℒ_dL + M_L(ℒ_x + √2·ℒ_u·ℒ_C)),
//!          M_f·ℒ_dh + M_h(ℒ_x + √2·ℒ_u·ℒ_C) + μ_h·ℒ_h }
//! ```
//!
//! Every field of [`LipschitzBudget`] is optional so the pipeline can fill
//! them in as they become known (estimated from data, computed from the
//! barrier, chosen as training targets); composing with a hole reports
//! exactly which constant is missing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every regularity constant entering the composite bound.
///
/// `None` means "not yet known". Sources differ per field: `l_x`, `l_u`,
/// `m_f` are estimated from plant samples; `l_l`, `l_dl`, `l_c` are the
/// network training targets; `sl1`, `sl2`, `sl_u` come from the class-𝒦∞
/// templates over the relevant diameters; `l_h`, `l_dh`, `m_h` from the
/// barrier; `m_l` equals `l_l` (the gradient of an `ℒ_L`-Lipschitz scalar
/// function is bounded by `ℒ_L`).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LipschitzBudget {
    /// Plant sensitivity in the state, `ℒ_x`.
    pub l_x: Option<f64>,
    /// Plant sensitivity in the control input, `ℒ_u`.
    pub l_u: Option<f64>,
    /// Certificate-network target `ℒ_L`.
    pub l_l: Option<f64>,
    /// Derivative-network target `ℒ_dL`.
    pub l_dl: Option<f64>,
    /// Controller target `ℒ_C`.
    pub l_c: Option<f64>,
    /// Template constant `𝖫₁` of `α₁` over the pair-distance range.
    pub sl1: Option<f64>,
    /// Template constant `𝖫₂` of `α₂`.
    pub sl2: Option<f64>,
    /// Template constant `𝖫_u` of `σ` over the input-distance range.
    pub sl_u: Option<f64>,
    /// Barrier Lipschitz constant `ℒ_h`.
    pub l_h: Option<f64>,
    /// Barrier gradient Lipschitz constant `ℒ_dh`.
    pub l_dh: Option<f64>,
    /// Barrier gradient magnitude bound `M_h`.
    pub m_h: Option<f64>,
    /// Certificate gradient magnitude bound `M_L` (equal to `ℒ_L`).
    pub m_l: Option<f64>,
    /// Plant magnitude bound `M_f`.
    pub m_f: Option<f64>,
}

/// The composed constant together with the four individual terms, so
/// reports can show which condition dominates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ComposedL {
    /// The four-term maximum.
    pub value: f64,
    /// Lower sandwich, upper sandwich, decrease, barrier terms in order.
    pub terms: [f64; 4],
}

impl LipschitzBudget {
    fn require(&self, field: Option<f64>, name: &str) -> Result<f64> {
        match field {
            Some(v) if v.is_finite() && v >= 0.0 => Ok(v),
            Some(v) => Err(Error::InvalidValue {
                name: name.into(),
                value: v,
                requirement: "a finite non-negative constant".into(),
            }),
            None => Err(Error::IncompleteBudget {
                missing: name.into(),
            }),
        }
    }
}

/// Folds the budget into the exact four-term maximum.
///
/// Fails with [`Error::IncompleteBudget`] naming the first missing constant,
/// so pipelines can report precisely what still needs estimating.
pub fn compose_overall_l(budget: &LipschitzBudget, kappa: f64, mu_h: f64) -> Result<ComposedL> {
    let b = budget;
    let l_l = b.require(b.l_l, "L_L")?;
    let sl1 = b.require(b.sl1, "sL_1")?;
    let sl2 = b.require(b.sl2, "sL_2")?;
    let sl_u = b.require(b.sl_u, "sL_u")?;
    let m_f = b.require(b.m_f, "M_f")?;
    let l_dl = b.require(b.l_dl, "L_dL")?;
    let m_l = b.require(b.m_l, "M_L")?;
    let l_x = b.require(b.l_x, "L_x")?;
    let l_u = b.require(b.l_u, "L_u")?;
    let l_c = b.require(b.l_c, "L_C")?;
    let m_h = b.require(b.m_h, "M_h")?;
    let l_dh = b.require(b.l_dh, "L_dh")?;
    let l_h = b.require(b.l_h, "L_h")?;
    let rt2 = std::f64::consts::SQRT_2;
    let closed_loop = l_x + rt2 * l_u * l_c;
    let terms = [
        rt2 * l_l + 2.0 * sl1,
        rt2 * l_l + 2.0 * sl2,
        rt2 * kappa * l_l + 2.0 * sl_u + 2.0 * (m_f * l_dl + m_l * closed_loop),
        m_f * l_dh + m_h * closed_loop + mu_h * l_h,
    ];
    Ok(ComposedL {
        value: terms.iter().fold(f64::NEG_INFINITY, |a, &t| a.max(t)),
        terms,
    })
}

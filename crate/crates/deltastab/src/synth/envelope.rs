//! Closed-form incremental-stability envelopes.
//!
//! Once a certificate `V` with sandwich gains `α₁, α₂`, decrease rate `κ`,
//! and input gain `σ` is certified, the incremental bound on trajectories
//! follows with explicit comparison functions:
//!
//! ```text
//! β(s, t) = α₁⁻¹(2 e^{−κt} α₂(s)),    γ(r) = α₁⁻¹((2/κ) σ(r)),
//! ```
//!
//! which for the power templates reduce to closed forms evaluated here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::hyper::HyperParams;

/// The 𝒦ℒ/𝒦∞ envelope pair of a certified run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KlEnvelope {
    k1: f64,
    gamma1: f64,
    k2: f64,
    gamma2: f64,
    k_w: f64,
    gamma_w: f64,
    kappa: f64,
}

impl KlEnvelope {
    /// Builds the envelope pair from the template parameters.
    pub fn new(hp: &HyperParams, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidValue {
                name: "kappa".into(),
                value: kappa,
                requirement: "a finite positive decrease rate".into(),
            });
        }
        if hp.k1 <= 0.0 || hp.k1.is_nan() {
            return Err(Error::InvalidValue {
                name: "k1".into(),
                value: hp.k1,
                requirement: "a positive lower sandwich gain (α₁ must be invertible)".into(),
            });
        }
        Ok(Self {
            k1: hp.k1,
            gamma1: hp.gamma1,
            k2: hp.k2,
            gamma2: hp.gamma2,
            k_w: hp.k_w,
            gamma_w: hp.gamma_w,
            kappa,
        })
    }

    /// Transient envelope `β(s, t) = (2 k₂ s^{γ₂} e^{−κt} / k₁)^{1/γ₁}`.
    #[must_use]
    pub fn beta(&self, s: f64, t: f64) -> f64 {
        (2.0 * self.k2 * s.powf(self.gamma2) * (-self.kappa * t).exp() / self.k1)
            .powf(1.0 / self.gamma1)
    }

    /// Input-gain envelope `γ(r) = (2 k_w r^{γ_w} / (κ k₁))^{1/γ₁}`.
    #[must_use]
    pub fn gain(&self, r: f64) -> f64 {
        (2.0 * self.k_w * r.powf(self.gamma_w) / (self.kappa * self.k1)).powf(1.0 / self.gamma1)
    }

    /// The decrease rate the envelope decays with.
    #[must_use]
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(k1: f64, gamma1: f64, k2: f64, gamma2: f64, k_w: f64, gamma_w: f64) -> HyperParams {
        HyperParams {
            k1,
            k2,
            k_w,
            gamma1,
            gamma2,
            gamma_w,
            kappa: 1.0,
            mu_h: 1.0,
            c: [1.0; 4],
            c_lip: [1.0; 3],
            l_l: 1.0,
            l_dl: 1.0,
            l_c: 1.0,
            epsilon: 0.01,
            epochs: 1,
            batch_size: 1,
            batches_per_epoch: 1,
            lr_net: 1e-3,
            lr_aux: 1e-2,
            seed: 0,
        }
    }

    #[test]
    fn quadratic_sandwich_at_time_zero_gives_root_two_scaling() {
        // k₁ = k₂ = 1, γ₁ = γ₂ = 2: β(s, 0) = (2s²)^{1/2} = √2·s.
        let env = KlEnvelope::new(&hp(1.0, 2.0, 1.0, 2.0, 1.0, 1.0), 1.0).unwrap();
        for s in [0.0, 0.3, 1.0, 2.5] {
            assert!((env.beta(s, 0.0) - 2.0_f64.sqrt() * s).abs() < 1e-12);
        }
    }

    #[test]
    fn envelopes_vanish_at_zero_argument() {
        let env = KlEnvelope::new(&hp(0.5, 1.0, 2.0, 3.0, 0.25, 2.0), 0.7).unwrap();
        assert_eq!(env.beta(0.0, 0.0), 0.0);
        assert_eq!(env.beta(0.0, 5.0), 0.0);
        assert_eq!(env.gain(0.0), 0.0);
    }

    #[test]
    fn beta_decays_monotonically_in_time() {
        let env = KlEnvelope::new(&hp(0.1, 2.0, 3.0, 2.0, 1.0, 1.0), 0.8).unwrap();
        let s = 1.7;
        let mut last = f64::INFINITY;
        for t in [0.0, 1.0, 10.0, 100.0] {
            let b = env.beta(s, t);
            assert!(b < last, "β must strictly decrease, got {b} after {last}");
            last = b;
        }
        assert!(env.beta(s, 100.0) < 1e-10, "β must vanish in the limit");
        // And the decay is exactly exponential with rate κ/γ₁.
        let ratio = env.beta(s, 2.0) / env.beta(s, 1.0);
        assert!((ratio - (-0.8_f64 / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn beta_and_gain_increase_in_their_first_argument() {
        let env = KlEnvelope::new(&hp(0.2, 1.5, 1.0, 2.0, 0.3, 1.0), 0.5).unwrap();
        let mut last_b = -1.0;
        let mut last_g = -1.0;
        for s in [0.0, 0.1, 0.5, 1.0, 3.0] {
            let b = env.beta(s, 1.0);
            let g = env.gain(s);
            assert!(b > last_b || s == 0.0);
            assert!(g > last_g || s == 0.0);
            last_b = b;
            last_g = g;
        }
    }

    #[test]
    fn gain_matches_the_closed_form_by_hand() {
        // k₁ = 4, γ₁ = 2, k_w = 1, γ_w = 1, κ = 0.5:
        // γ(r) = (2·r / (0.5·4))^{1/2} = √r.
        let env = KlEnvelope::new(&hp(4.0, 2.0, 1.0, 1.0, 1.0, 1.0), 0.5).unwrap();
        for r in [0.25, 1.0, 4.0] {
            assert!((env.gain(r) - r.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_rates_are_rejected() {
        assert!(KlEnvelope::new(&hp(1.0, 1.0, 1.0, 1.0, 1.0, 1.0), 0.0).is_err());
        assert!(KlEnvelope::new(&hp(1.0, 1.0, 1.0, 1.0, 1.0, 1.0), f64::NAN).is_err());
        let mut bad = hp(1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        bad.k1 = 0.0;
        assert!(KlEnvelope::new(&bad, 1.0).is_err());
    }
}

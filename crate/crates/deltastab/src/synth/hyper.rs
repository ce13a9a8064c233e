//! Hyper-parameters of the synthesis problem.
//!
//! The class-𝒦∞ template is fixed to powers: `α₁(s) = k₁ s^{γ₁}`,
//! `α₂(s) = k₂ s^{γ₂}`, `σ(s) = k_w s^{γ_w}`. Exponents stay ≥ 1 so each
//! template is Lipschitz on compact sets (with constant `k·γ·D^{γ−1}` on a
//! set of diameter `D`), which the composite-constant arithmetic relies on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All scalar knobs of one synthesis run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperParams {
    /// Lower sandwich gain `k₁`.
    pub k1: f64,
    /// Upper sandwich gain `k₂`.
    pub k2: f64,
    /// Input-gain coefficient `k_w`.
    pub k_w: f64,
    /// Lower sandwich exponent `γ₁ ≥ 1`.
    pub gamma1: f64,
    /// Upper sandwich exponent `γ₂ ≥ 1`.
    pub gamma2: f64,
    /// Input-gain exponent `γ_w ≥ 1`.
    pub gamma_w: f64,
    /// Exponential decrease rate `κ`.
    pub kappa: f64,
    /// Barrier gain `μ_h`.
    pub mu_h: f64,
    /// Weights of the four residual hinge families (sandwich lower/upper,
    /// decrease, barrier).
    pub c: [f64; 4],
    /// Weights of the three log-det Lipschitz losses (certificate network,
    /// its derivative network, controller).
    pub c_lip: [f64; 3],
    /// Lipschitz budget targets for the three networks: `ℒ_L`, `ℒ_dL`, `ℒ_C`.
    pub l_l: f64,
    /// Target for the derivative network.
    pub l_dl: f64,
    /// Target for the controller.
    pub l_c: f64,
    /// Cover radius ε entering the validity condition.
    pub epsilon: f64,
    /// Epoch budget.
    pub epochs: usize,
    /// Tuples per batch.
    pub batch_size: usize,
    /// Batches per epoch.
    pub batches_per_epoch: usize,
    /// Adam learning rate for network weights and biases.
    pub lr_net: f64,
    /// Adam learning rate for the margin η and the multiplier parameters.
    pub lr_aux: f64,
    /// Default seed recorded with the run (the training entry point takes
    /// the operative seed explicitly so a command line can override it).
    pub seed: u64,
}

impl HyperParams {
    /// Checks every invariant: positive gains, weights, budgets, radius and
    /// learning rates; exponents at least 1; non-degenerate batch shape.
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("k1", self.k1),
            ("k2", self.k2),
            ("k_w", self.k_w),
            ("kappa", self.kappa),
            ("mu_h", self.mu_h),
            ("l_l", self.l_l),
            ("l_dl", self.l_dl),
            ("l_c", self.l_c),
            ("epsilon", self.epsilon),
            ("lr_net", self.lr_net),
            ("lr_aux", self.lr_aux),
        ];
        for (name, value) in positives {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidValue {
                    name: name.into(),
                    value,
                    requirement: "a finite positive number".into(),
                });
            }
        }
        for (name, value) in [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("gamma_w", self.gamma_w),
        ] {
            if !(value >= 1.0 && value.is_finite()) {
                return Err(Error::InvalidValue {
                    name: name.into(),
                    value,
                    requirement: "an exponent ≥ 1 (power templates must stay Lipschitz on compacts)"
                        .into(),
                });
            }
        }
        for (i, &w) in self.c.iter().enumerate() {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidValue {
                    name: format!("c[{i}]"),
                    value: w,
                    requirement: "a finite positive loss weight".into(),
                });
            }
        }
        for (i, &w) in self.c_lip.iter().enumerate() {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidValue {
                    name: format!("c_lip[{i}]"),
                    value: w,
                    requirement: "a finite positive loss weight".into(),
                });
            }
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(Error::InvalidValue {
                name: "batch shape".into(),
                value: 0.0,
                requirement: "batch_size and batches_per_epoch must be positive".into(),
            });
        }
        Ok(())
    }

    /// Lower sandwich template `α₁(s) = k₁ s^{γ₁}`.
    #[must_use]
    pub fn alpha1(&self, s: f64) -> f64 {
        self.k1 * s.powf(self.gamma1)
    }

    /// Upper sandwich template `α₂(s) = k₂ s^{γ₂}`.
    #[must_use]
    pub fn alpha2(&self, s: f64) -> f64 {
        self.k2 * s.powf(self.gamma2)
    }

    /// Input-gain template `σ(s) = k_w s^{γ_w}`.
    #[must_use]
    pub fn sigma_w(&self, s: f64) -> f64 {
        self.k_w * s.powf(self.gamma_w)
    }

    /// Lipschitz constants of the three templates over sets of diameter
    /// `d_pair` (state-pair distances) and `d_input` (input-pair distances):
    /// `k·γ·D^{γ−1}` each, returned as `(𝖫₁, 𝖫₂, 𝖫_u)`.
    #[must_use]
    pub fn template_lipschitz(&self, d_pair: f64, d_input: f64) -> (f64, f64, f64) {
        (
            self.k1 * self.gamma1 * d_pair.powf(self.gamma1 - 1.0),
            self.k2 * self.gamma2 * d_pair.powf(self.gamma2 - 1.0),
            self.k_w * self.gamma_w * d_input.powf(self.gamma_w - 1.0),
        )
    }
}

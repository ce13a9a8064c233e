//! Scalar activation functions with the derivative and slope data the
//! certification machinery needs.
//!
//! Every activation used here has chordal slopes confined to a known interval
//! `[alpha, beta]`; that interval feeds the quadratic constraint in the
//! Lipschitz certificate, and the per-function Lipschitz constant feeds the
//! derivative-network construction. Second derivatives are required wherever
//! a loss differentiates through a gradient of the certificate function, so
//! the smooth activations expose them too.

use serde::{Deserialize, Serialize};

/// Elementwise nonlinearity applied after a hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// Hyperbolic tangent; smooth, slopes in `[0, 1]`.
    Tanh,
    /// `ln(1 + exp(x))`; smooth, slopes in `(0, 1)`.
    Softplus,
    /// `max(0, x)`; piecewise linear, slopes in `{0, 1}`.
    Relu,
    /// `clamp(x, -1, 1)`; piecewise linear, slopes in `{0, 1}`.
    HardTanh,
}

impl Activation {
    /// Applies the activation to one scalar.
    #[must_use]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            // Stable softplus: max(x, 0) + ln(1 + exp(-|x|)).
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Relu => x.max(0.0),
            Activation::HardTanh => x.clamp(-1.0, 1.0),
        }
    }

    /// First derivative. For the kinked activations this is the almost-
    /// everywhere derivative, with the convention that the kink itself maps
    /// to the left limit (0 for ReLU at 0, 1 for hard-tanh at the borders).
    #[must_use]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Softplus => sigmoid(x),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::HardTanh => {
                if x > -1.0 && x < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Second derivative; only meaningful for the smooth activations, zero
    /// almost everywhere for the piecewise-linear ones.
    #[must_use]
    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Relu | Activation::HardTanh => 0.0,
        }
    }

    /// Interval containing every chordal slope of the activation.
    #[must_use]
    pub fn slope_range(self) -> (f64, f64) {
        match self {
            Activation::Tanh | Activation::Softplus | Activation::Relu | Activation::HardTanh => {
                (0.0, 1.0)
            }
        }
    }

    /// Lipschitz constant of the activation itself.
    #[must_use]
    pub fn lipschitz(self) -> f64 {
        1.0
    }

    /// Whether first and second derivatives exist everywhere.
    #[must_use]
    pub fn is_smooth(self) -> bool {
        matches!(self, Activation::Tanh | Activation::Softplus)
    }

    /// Stable tag used by the weight-file format.
    #[must_use]
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Relu => "relu",
            Activation::HardTanh => "hardtanh",
        }
    }

    /// Parses a weight-file tag.
    #[must_use]
    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "tanh" => Some(Activation::Tanh),
            "softplus" => Some(Activation::Softplus),
            "relu" => Some(Activation::Relu),
            "hardtanh" => Some(Activation::HardTanh),
            _ => None,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Activation; 4] = [
        Activation::Tanh,
        Activation::Softplus,
        Activation::Relu,
        Activation::HardTanh,
    ];

    #[test]
    fn values_at_zero() {
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert!((Activation::Softplus.apply(0.0) - 2.0_f64.ln()).abs() < 1e-15);
        assert_eq!(Activation::Relu.apply(0.0), 0.0);
        assert_eq!(Activation::HardTanh.apply(0.0), 0.0);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        // Naive ln(1 + exp(x)) overflows near x = 710; the stable form must not.
        let y = Activation::Softplus.apply(1000.0);
        assert!((y - 1000.0).abs() < 1e-9);
        let y_neg = Activation::Softplus.apply(-1000.0);
        assert!((0.0..1e-300).contains(&y_neg));
    }

    #[test]
    fn derivatives_match_finite_differences_for_smooth_activations() {
        let h = 1e-6;
        for act in [Activation::Tanh, Activation::Softplus] {
            for i in -40..=40 {
                let x = f64::from(i) * 0.1;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!(
                    (act.derivative(x) - fd).abs() < 1e-8,
                    "{act:?} first derivative mismatch at {x}"
                );
                let fd2 = (act.derivative(x + h) - act.derivative(x - h)) / (2.0 * h);
                assert!(
                    (act.second_derivative(x) - fd2).abs() < 1e-7,
                    "{act:?} second derivative mismatch at {x}"
                );
            }
        }
    }

    #[test]
    fn chordal_slopes_stay_inside_declared_range() {
        for act in ALL {
            let (lo, hi) = act.slope_range();
            for i in -30..30 {
                for j in 1..20 {
                    let a = f64::from(i) * 0.17;
                    let b = a + f64::from(j) * 0.21;
                    let slope = (act.apply(b) - act.apply(a)) / (b - a);
                    assert!(
                        slope >= lo - 1e-12 && slope <= hi + 1e-12,
                        "{act:?} chordal slope {slope} outside [{lo}, {hi}]"
                    );
                }
            }
        }
    }

    #[test]
    fn tag_round_trip() {
        for act in ALL {
            assert_eq!(Activation::from_tag(act.tag()), Some(act));
        }
        assert_eq!(Activation::from_tag("sigmoid"), None);
    }
}

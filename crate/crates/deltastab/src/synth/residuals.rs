//! Scenario residuals: the four certificate conditions evaluated on sampled
//! tuples.
//!
//! Each tuple `(q, r, s, p)` indexes two cover states `x_q, x_r` and two
//! cover inputs `w_s, w_p`. The residuals are signed violations — every
//! condition holds on the sample set with margin `η` exactly when all
//! residuals are `≤ η`:
//!
//! * `r_a = α₁(|x_q − x_r|) − V(x_q, x_r)` — lower sandwich bound,
//! * `r_b = V(x_q, x_r) − α₂(|x_q − x_r|)` — upper sandwich bound,
//! * `r_c = ∇_x V·f(x_q, u_qs) + ∇_x̂ V·f(x_r, u_rp) + κ V − σ(|w_s − w_p|)`
//!   — the decrease condition along both closed-loop copies,
//! * `r_d = −∇h(x_q)·f(x_q, u_qs) − μ_h h(x_q)` — barrier invariance,
//!
//! with `u_qs = sat(g(x_q, w_s))` and `u_rp = sat(g(x_r, w_p))`.
//!
//! Pairs closer than the separation threshold arrive flagged from the
//! sampler. Flagged tuples contribute no sandwich residuals — `α₁ ≤ V ≤ α₂`
//! cannot hold with margin on coincident points, where `V` vanishes — and no
//! decrease residual either: at `x_q = x_r` the decrease condition collapses
//! to `κV(x,x) ≤ η + σ(|Δw|)`, which a strictly negative margin rules out no
//! matter how well the networks are trained. Such pairs are covered by the
//! continuity argument around their separated neighbors instead. The barrier
//! residual has no pair structure and is always evaluated.

use nalgebra::DVector;

use crate::barrier::BoxBarrier;
use crate::error::{Error, Result};
use crate::net::{FeedforwardNet, SaturationBox};
use crate::plant::Plant;
use crate::sampling::TupleSample;
use crate::synth::hyper::HyperParams;

/// Residuals of one batch, grouped by condition. A batch of `n` tuples with
/// `k` flagged yields `n − k` entries in each of `r_a`, `r_b`, `r_c` and `n`
/// entries in `r_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBundle {
    /// Lower sandwich violations.
    pub r_a: Vec<f64>,
    /// Upper sandwich violations.
    pub r_b: Vec<f64>,
    /// Decrease-condition violations.
    pub r_c: Vec<f64>,
    /// Barrier-invariance violations.
    pub r_d: Vec<f64>,
}

fn slice_max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

impl ResidualBundle {
    /// The batch margin: the largest residual across all four conditions.
    /// `NEG_INFINITY` for an empty bundle.
    #[must_use]
    pub fn eta_star(&self) -> f64 {
        self.family_max().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest residual per condition, in `[r_a, r_b, r_c, r_d]` order.
    /// Empty families report `NEG_INFINITY`.
    #[must_use]
    pub fn family_max(&self) -> [f64; 4] {
        [
            slice_max(&self.r_a),
            slice_max(&self.r_b),
            slice_max(&self.r_c),
            slice_max(&self.r_d),
        ]
    }

    /// Total number of residual entries.
    #[must_use]
    pub fn len(&self) -> usize {
        self.r_a.len() + self.r_b.len() + self.r_c.len() + self.r_d.len()
    }

    /// Whether the bundle holds no residuals at all.
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The decrease-condition kernel shared by the sampled evaluation and the
/// exhaustive scan: `∇_x V·f_q + ∇_x̂ V·f_r + κV − σ(|Δw|)` with the sigma
/// term already evaluated.
pub(crate) fn decrease_residual(
    v: f64,
    grad_x: &DVector<f64>,
    grad_xh: &DVector<f64>,
    f_q: &DVector<f64>,
    f_r: &DVector<f64>,
    kappa: f64,
    sigma_dw: f64,
) -> f64 {
    grad_x.dot(f_q) + grad_xh.dot(f_r) + kappa * v - sigma_dw
}

/// Checks the static dimension contract between all pieces of the scenario
/// evaluation, so index arithmetic below cannot silently mix spaces.
pub(crate) fn check_problem_dims(
    dim_x: usize,
    dim_w: usize,
    dim_u: usize,
    v_net: &FeedforwardNet,
    g_net: &FeedforwardNet,
    barrier: &BoxBarrier,
    saturation: &SaturationBox,
) -> Result<()> {
    if v_net.input_dim() != 2 * dim_x || v_net.output_dim() != 1 {
        return Err(Error::DimensionMismatch {
            context: "certificate network input (state pair)".into(),
            expected: 2 * dim_x,
            actual: v_net.input_dim(),
        });
    }
    if g_net.input_dim() != dim_x + dim_w {
        return Err(Error::DimensionMismatch {
            context: "controller network input (state ++ external)".into(),
            expected: dim_x + dim_w,
            actual: g_net.input_dim(),
        });
    }
    if g_net.output_dim() != dim_u || saturation.dim() != dim_u {
        return Err(Error::DimensionMismatch {
            context: "controller output vs plant input".into(),
            expected: dim_u,
            actual: g_net.output_dim(),
        });
    }
    if barrier.domain().dim() != dim_x {
        return Err(Error::DimensionMismatch {
            context: "barrier domain".into(),
            expected: dim_x,
            actual: barrier.domain().dim(),
        });
    }
    Ok(())
}

/// Evaluates the four scenario residuals on a batch of tuples.
///
/// `xs` and `ws` are the cover points the tuple indices refer to. The
/// hyper-parameters are assumed validated; this function only uses the
/// template evaluations `α₁`, `α₂`, `σ` and the rates `κ`, `μ_h`.
#[allow(clippy::too_many_arguments)]
pub fn scp_residuals<P: Plant + ?Sized>(
    plant: &mut P,
    v_net: &FeedforwardNet,
    g_net: &FeedforwardNet,
    barrier: &BoxBarrier,
    saturation: &SaturationBox,
    xs: &[DVector<f64>],
    ws: &[DVector<f64>],
    batch: &[TupleSample],
    hp: &HyperParams,
) -> Result<ResidualBundle> {
    let (dim_x, dim_w) = match (xs.first(), ws.first()) {
        (Some(x), Some(w)) => (x.len(), w.len()),
        _ => {
            return Err(Error::DomainViolation {
                context: "scenario batch".into(),
                detail: "empty state or input cover".into(),
            })
        }
    };
    check_problem_dims(dim_x, dim_w, plant.dim_u(), v_net, g_net, barrier, saturation)?;

    let mut out = ResidualBundle {
        r_a: Vec::new(),
        r_b: Vec::new(),
        r_c: Vec::new(),
        r_d: Vec::with_capacity(batch.len()),
    };
    let mut pair = DVector::zeros(2 * dim_x);

    for t in batch {
        if t.q >= xs.len() || t.r >= xs.len() || t.s >= ws.len() || t.p >= ws.len() {
            return Err(Error::DomainViolation {
                context: "scenario batch".into(),
                detail: format!(
                    "tuple ({}, {}, {}, {}) exceeds cover sizes {} / {}",
                    t.q,
                    t.r,
                    t.s,
                    t.p,
                    xs.len(),
                    ws.len()
                ),
            });
        }
        let (x_q, x_r) = (&xs[t.q], &xs[t.r]);
        let (w_s, w_p) = (&ws[t.s], &ws[t.p]);

        let u_qs = g_net.saturated_forward(x_q, w_s, saturation)?;
        let f_qs = plant.eval(x_q, &u_qs)?;

        // Barrier invariance at (x_q, u_qs); independent of the pair flag.
        out.r_d
            .push(-barrier.gradient(x_q).dot(&f_qs) - hp.mu_h * barrier.value(x_q));

        if t.flagged {
            continue;
        }

        let u_rp = g_net.saturated_forward(x_r, w_p, saturation)?;
        let f_rp = plant.eval(x_r, &u_rp)?;

        pair.rows_mut(0, dim_x).copy_from(x_q);
        pair.rows_mut(dim_x, dim_x).copy_from(x_r);
        let v = v_net.forward(&pair)?[0];
        let grad = v_net.input_gradient(&pair)?;
        let grad_x = grad.rows(0, dim_x).into_owned();
        let grad_xh = grad.rows(dim_x, dim_x).into_owned();

        let dist = (x_q - x_r).norm();
        let dw = (w_s - w_p).norm();

        out.r_a.push(hp.alpha1(dist) - v);
        out.r_b.push(v - hp.alpha2(dist));
        out.r_c.push(decrease_residual(
            v,
            &grad_x,
            &grad_xh,
            &f_qs,
            &f_rp,
            hp.kappa,
            hp.sigma_w(dw),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BoxDomain;
    use crate::net::{Activation, Layer};
    use crate::plant::{ClosurePlant, ScalarNonAffine};
    use nalgebra::DMatrix;

    fn hp_for_tests() -> HyperParams {
        let mut hp = crate::synth::hyper::tests::base();
        hp.k1 = 0.5;
        hp.k2 = 2.0;
        hp.k_w = 0.1;
        hp.kappa = 0.25;
        hp.mu_h = 0.5;
        hp
    }

    /// `[-1, 1]` scalar barrier and saturation-free controller box.
    fn scalar_setup() -> (BoxBarrier, SaturationBox) {
        let dom = BoxDomain::new(
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 1.0),
        )
        .expect("valid box");
        let barrier = BoxBarrier::new(dom);
        let sat = SaturationBox::new(
            DVector::from_element(1, -100.0),
            DVector::from_element(1, 100.0),
        )
        .expect("valid box");
        (barrier, sat)
    }

    /// Pass-through controller `g(x, w) = w` as a single affine layer.
    fn passthrough_controller() -> FeedforwardNet {
        let layer = Layer {
            weight: DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            bias: DVector::zeros(1),
        };
        FeedforwardNet::new(vec![layer], vec![]).expect("valid net")
    }

    fn tuple(q: usize, r: usize, s: usize, p: usize, flagged: bool) -> TupleSample {
        TupleSample { q, r, s, p, flagged }
    }

    /// Hand oracle for the decrease kernel: `V = (x − x̂)²`, `f = −x + u`,
    /// controller `g = w`, tuple `(x_q, x_r, w_s, w_p) = (1, 0, 0, 0)`,
    /// `κ = k_w = 0`. Then `∇_x V = 2`, `∇_x̂ V = −2`, `f_q = −1`, `f_r = 0`,
    /// so the residual is exactly `−2`.
    #[test]
    fn decrease_kernel_matches_the_hand_example() {
        let v = 1.0;
        let grad_x = DVector::from_element(1, 2.0);
        let grad_xh = DVector::from_element(1, -2.0);
        let f_q = DVector::from_element(1, -1.0);
        let f_r = DVector::from_element(1, 0.0);
        let r = decrease_residual(v, &grad_x, &grad_xh, &f_q, &f_r, 0.0, 0.0);
        assert_eq!(r, -2.0);

        // With κ = 0.25 the same tuple shifts by κV = 0.25 exactly.
        let r = decrease_residual(v, &grad_x, &grad_xh, &f_q, &f_r, 0.25, 0.0);
        assert_eq!(r, -1.75);
        // A sigma credit enters with a minus sign.
        let r = decrease_residual(v, &grad_x, &grad_xh, &f_q, &f_r, 0.25, 0.1);
        assert_eq!(r, -1.85);
    }

    /// Full wiring check against an independent reassembly of each residual
    /// from the public network and plant evaluations.
    #[test]
    fn residuals_match_independent_assembly() {
        let hp = hp_for_tests();
        let (barrier, sat) = scalar_setup();
        let v_net = FeedforwardNet::with_shape(2, &[6], 1, Activation::Tanh, 3).expect("net");
        let g_net = FeedforwardNet::with_shape(2, &[4], 1, Activation::Tanh, 4).expect("net");
        let mut plant = ScalarNonAffine::default();

        let xs: Vec<DVector<f64>> = [-0.8, -0.1, 0.4, 0.9]
            .iter()
            .map(|&v| DVector::from_element(1, v))
            .collect();
        let ws: Vec<DVector<f64>> = [-0.3, 0.2]
            .iter()
            .map(|&v| DVector::from_element(1, v))
            .collect();
        let batch = vec![tuple(0, 2, 1, 0, false), tuple(3, 1, 0, 1, false)];

        let got = scp_residuals(
            &mut plant, &v_net, &g_net, &barrier, &sat, &xs, &ws, &batch, &hp,
        )
        .expect("residuals");
        assert_eq!(got.r_a.len(), 2);
        assert_eq!(got.r_d.len(), 2);

        for (k, t) in batch.iter().enumerate() {
            let (x_q, x_r, w_s, w_p) = (&xs[t.q], &xs[t.r], &ws[t.s], &ws[t.p]);
            let u_qs = g_net.saturated_forward(x_q, w_s, &sat).expect("controller");
            let u_rp = g_net.saturated_forward(x_r, w_p, &sat).expect("controller");
            let f_qs = plant.eval(x_q, &u_qs).expect("plant");
            let f_rp = plant.eval(x_r, &u_rp).expect("plant");
            let mut pair = DVector::zeros(2);
            pair[0] = x_q[0];
            pair[1] = x_r[0];
            let v = v_net.forward(&pair).expect("forward")[0];
            let grad = v_net.input_gradient(&pair).expect("gradient");
            let dist = (x_q - x_r).norm();

            assert_eq!(got.r_a[k], hp.k1 * dist.powf(hp.gamma1) - v);
            assert_eq!(got.r_b[k], v - hp.k2 * dist.powf(hp.gamma2));
            let dw = (w_s - w_p).norm();
            let want_c = grad[0] * f_qs[0] + grad[1] * f_rp[0] + hp.kappa * v
                - hp.k_w * dw.powf(hp.gamma_w);
            assert!((got.r_c[k] - want_c).abs() < 1e-15);
            let want_d = -barrier.gradient(x_q)[0] * f_qs[0] - hp.mu_h * barrier.value(x_q);
            assert!((got.r_d[k] - want_d).abs() < 1e-15);
        }
    }

    /// On an unflagged coincident tuple the sigma term vanishes and the
    /// decrease residual reduces to `(∇_x V + ∇_x̂ V)·f + κV` at the doubled
    /// point.
    #[test]
    fn coincident_tuple_reduces_to_the_doubled_point_form() {
        let hp = hp_for_tests();
        let (barrier, sat) = scalar_setup();
        let v_net = FeedforwardNet::with_shape(2, &[5], 1, Activation::Softplus, 9).expect("net");
        let g_net = passthrough_controller();
        let mut plant = ScalarNonAffine::default();

        let xs = vec![DVector::from_element(1, 0.6)];
        let ws = vec![DVector::from_element(1, 0.25)];
        let batch = vec![tuple(0, 0, 0, 0, false)];
        let got = scp_residuals(
            &mut plant, &v_net, &g_net, &barrier, &sat, &xs, &ws, &batch, &hp,
        )
        .expect("residuals");

        let pair = DVector::from_vec(vec![0.6, 0.6]);
        let v = v_net.forward(&pair).expect("forward")[0];
        let grad = v_net.input_gradient(&pair).expect("gradient");
        let f = plant
            .eval(&xs[0], &ws[0]) // g = w and |w| < 100: saturation is inert
            .expect("plant");
        let want = (grad[0] + grad[1]) * f[0] + hp.kappa * v;
        assert!((got.r_c[0] - want).abs() < 1e-15);
        // And the sandwich residuals collapse to ±V at distance zero.
        assert_eq!(got.r_a[0], -v);
        assert_eq!(got.r_b[0], v);
    }

    #[test]
    fn flagged_tuples_contribute_only_the_barrier_residual() {
        let hp = hp_for_tests();
        let (barrier, sat) = scalar_setup();
        let v_net = FeedforwardNet::with_shape(2, &[4], 1, Activation::Tanh, 5).expect("net");
        let g_net = passthrough_controller();
        let mut plant = ScalarNonAffine::default();

        let xs: Vec<DVector<f64>> = [-0.5, 0.5]
            .iter()
            .map(|&v| DVector::from_element(1, v))
            .collect();
        let ws = vec![DVector::from_element(1, 0.1)];
        let batch = vec![
            tuple(0, 0, 0, 0, true),
            tuple(0, 1, 0, 0, false),
            tuple(1, 1, 0, 0, true),
        ];
        let got = scp_residuals(
            &mut plant, &v_net, &g_net, &barrier, &sat, &xs, &ws, &batch, &hp,
        )
        .expect("residuals");
        assert_eq!(got.r_a.len(), 1);
        assert_eq!(got.r_b.len(), 1);
        assert_eq!(got.r_c.len(), 1);
        assert_eq!(got.r_d.len(), 3);
        assert_eq!(got.len(), 6);
        assert!(!got.is_empty());
    }

    /// A zero certificate network with `k₁ = 0` yields exactly zero lower
    /// sandwich residuals — the degenerate template boundary.
    #[test]
    fn zero_network_and_zero_k1_pin_the_lower_sandwich_at_zero() {
        let mut hp = hp_for_tests();
        hp.k1 = 0.0;
        let (barrier, sat) = scalar_setup();
        let mut v_net = FeedforwardNet::with_shape(2, &[4], 1, Activation::Tanh, 5).expect("net");
        for layer in v_net.layers_mut() {
            layer.weight.fill(0.0);
            layer.bias.fill(0.0);
        }
        let g_net = passthrough_controller();
        let mut plant = ScalarNonAffine::default();

        let xs: Vec<DVector<f64>> = [-0.5, 0.5]
            .iter()
            .map(|&v| DVector::from_element(1, v))
            .collect();
        let ws = vec![DVector::from_element(1, 0.0)];
        let batch = vec![tuple(0, 1, 0, 0, false), tuple(1, 0, 0, 0, false)];
        let got = scp_residuals(
            &mut plant, &v_net, &g_net, &barrier, &sat, &xs, &ws, &batch, &hp,
        )
        .expect("residuals");
        assert_eq!(got.r_a, vec![0.0, 0.0]);
    }

    #[test]
    fn saturation_clamps_the_control_before_the_plant_sees_it() {
        let hp = hp_for_tests();
        let dom = BoxDomain::new(
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 1.0),
        )
        .expect("valid box");
        let barrier = BoxBarrier::new(dom);
        let sat = SaturationBox::new(
            DVector::from_element(1, -0.2),
            DVector::from_element(1, 0.2),
        )
        .expect("valid box");
        // Controller with a large positive bias: always saturates high.
        let layer = Layer {
            weight: DMatrix::zeros(1, 2),
            bias: DVector::from_element(1, 50.0),
        };
        let g_net = FeedforwardNet::new(vec![layer], vec![]).expect("net");
        let v_net = FeedforwardNet::with_shape(2, &[4], 1, Activation::Tanh, 6).expect("net");
        // Plant that reports u directly so the test can observe the clamp.
        let mut plant = ClosurePlant::from_fn(1, 1, |_, u| u.clone());

        let xs = vec![DVector::from_element(1, 0.3), DVector::from_element(1, -0.4)];
        let ws = vec![DVector::from_element(1, 0.0)];
        let batch = vec![tuple(0, 1, 0, 0, false)];
        let got = scp_residuals(
            &mut plant, &v_net, &g_net, &barrier, &sat, &xs, &ws, &batch, &hp,
        )
        .expect("residuals");

        // r_d = −h'(x_q)·u_sat − μ_h·h(x_q) with u_sat = 0.2.
        let want = -barrier.gradient(&xs[0])[0] * 0.2 - hp.mu_h * barrier.value(&xs[0]);
        assert!((got.r_d[0] - want).abs() < 1e-15);
    }

    #[test]
    fn family_max_and_eta_star_track_the_extremes() {
        let bundle = ResidualBundle {
            r_a: vec![-3.0, -1.0],
            r_b: vec![-2.5],
            r_c: vec![-0.25, -4.0],
            r_d: vec![-9.0],
        };
        assert_eq!(bundle.family_max(), [-1.0, -2.5, -0.25, -9.0]);
        assert_eq!(bundle.eta_star(), -0.25);

        let empty = ResidualBundle {
            r_a: vec![],
            r_b: vec![],
            r_c: vec![],
            r_d: vec![],
        };
        assert_eq!(empty.eta_star(), f64::NEG_INFINITY);
        assert!(empty.is_empty());
    }

    #[test]
    fn dimension_and_index_errors_are_reported() {
        let hp = hp_for_tests();
        let (barrier, sat) = scalar_setup();
        let g_net = passthrough_controller();
        let mut plant = ScalarNonAffine::default();
        let xs = vec![DVector::from_element(1, 0.0)];
        let ws = vec![DVector::from_element(1, 0.0)];

        // Certificate net with the wrong input arity.
        let bad_v = FeedforwardNet::with_shape(3, &[4], 1, Activation::Tanh, 7).expect("net");
        let err = scp_residuals(
            &mut plant,
            &bad_v,
            &g_net,
            &barrier,
            &sat,
            &xs,
            &ws,
            &[tuple(0, 0, 0, 0, false)],
            &hp,
        )
        .expect_err("must reject");
        assert!(matches!(err, Error::DimensionMismatch { .. }));

        // Tuple index past the cover.
        let v_net = FeedforwardNet::with_shape(2, &[4], 1, Activation::Tanh, 8).expect("net");
        let err = scp_residuals(
            &mut plant,
            &v_net,
            &g_net,
            &barrier,
            &sat,
            &xs,
            &ws,
            &[tuple(0, 1, 0, 0, false)],
            &hp,
        )
        .expect_err("must reject");
        assert!(matches!(err, Error::DomainViolation { .. }));

        // Empty covers.
        let err = scp_residuals(
            &mut plant, &v_net, &g_net, &barrier, &sat, &[], &ws, &[], &hp,
        )
        .expect_err("must reject");
        assert!(matches!(err, Error::DomainViolation { .. }));
    }
}

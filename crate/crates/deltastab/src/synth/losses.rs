//! Training objectives: the scenario hinge loss, the spectral
//! (Lipschitz-feasibility) loss, and the validity loss, in two synchronized
//! forms — plain `f64` evaluation for monitoring and convergence checks, and
//! a tape graph for gradient steps. The two forms share formulas and
//! constants; tests pin them against each other.
//!
//! Total objective:
//!
//! ```text
//! L = Σ_i c_i Σ_j max(0, r_i(j) − η)          (scenario violations)
//!   + Σ_k c_lip_k · spectral_k                (network Lipschitz feasibility)
//!   + η + ℒ·ε                                 (validity slack)
//! ```
//!
//! where `spectral_k` is `−ln det M_k` while the feasibility matrix is
//! positive definite, and a hinge on its smallest eigenvalue otherwise. The
//! three matrices certify the certificate network against `ℒ_L`, its
//! derivative surrogate against `ℒ_dL`, and the controller against `ℒ_C`.
//! Multipliers are parameterized as `λ = l ∘ l` so gradient steps on `l`
//! cannot leave the admissible cone `λ ≥ 0`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::barrier::BoxBarrier;
use crate::error::{Error, Result};
use crate::lipcert::{ldlt, lipsdp};
use crate::net::{FeedforwardNet, SaturationBox};
use crate::plant::{jacobian_u_fd, Plant};
use crate::sampling::TupleSample;
use crate::synth::graph::NetVars;
use crate::synth::hyper::HyperParams;
use crate::synth::residuals::{check_problem_dims, ResidualBundle};
use crate::tape::{Tape, Var};

/// Slope of the eigenvalue hinge that replaces the log-det barrier when a
/// feasibility matrix loses positive definiteness. Steep enough that the
/// optimizer prioritizes re-entering the barrier's domain.
pub const NONPD_GAIN: f64 = 1_000.0;

/// The smallest eigenvalue is pushed back above this margin before the
/// log-det barrier takes over again.
pub const PD_MARGIN: f64 = 1e-9;

/// Number of hidden neurons across a network's hidden layers — the length of
/// its feasibility multiplier vector.
fn hidden_total(net: &FeedforwardNet) -> usize {
    let n = net.layers().len();
    net.layers()[..n - 1].iter().map(|l| l.weight.nrows()).sum()
}

/// Multiplier vectors `λ ≥ 0` for the three feasibility matrices:
/// certificate, derivative surrogate, controller.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSet {
    /// Multipliers for the certificate network.
    pub v: DVector<f64>,
    /// Multipliers for the derivative surrogate (same hidden layout as the
    /// certificate network).
    pub dv: DVector<f64>,
    /// Multipliers for the controller network.
    pub c: DVector<f64>,
}

/// Trainable square roots of the multipliers: `λ = l ∘ l`.
#[derive(Debug, Clone, PartialEq)]
pub struct SqrtMultipliers {
    /// Certificate-network multiplier roots.
    pub v: DVector<f64>,
    /// Derivative-surrogate multiplier roots.
    pub dv: DVector<f64>,
    /// Controller multiplier roots.
    pub c: DVector<f64>,
}

impl SqrtMultipliers {
    /// Fresh multipliers `λ = 1/2` (`l = √½`) sized for the given networks.
    pub fn for_networks(v_net: &FeedforwardNet, g_net: &FeedforwardNet) -> Self {
        let half = 0.5_f64.sqrt();
        let nv = hidden_total(v_net);
        SqrtMultipliers {
            v: DVector::from_element(nv, half),
            dv: DVector::from_element(nv, half),
            c: DVector::from_element(hidden_total(g_net), half),
        }
    }

    /// The multipliers themselves.
    #[must_use]
    pub fn lambdas(&self) -> LambdaSet {
        LambdaSet {
            v: self.v.component_mul(&self.v),
            dv: self.dv.component_mul(&self.dv),
            c: self.c.component_mul(&self.c),
        }
    }
}

/// Scenario hinge loss `Σ_i c_i Σ_j max(0, r_i(j) − η)`.
#[must_use]
pub fn loss_main(bundle: &ResidualBundle, eta: f64, hp: &HyperParams) -> f64 {
    let families = [&bundle.r_a, &bundle.r_b, &bundle.r_c, &bundle.r_d];
    families
        .iter()
        .zip(hp.c)
        .map(|(rs, c)| c * rs.iter().map(|r| (r - eta).max(0.0)).sum::<f64>())
        .sum()
}

/// One network's contribution to the spectral loss, and whether its
/// feasibility matrix was positive definite.
fn spectral_term(m: &DMatrix<f64>, weight: f64) -> (f64, bool) {
    match ldlt::factor(m) {
        Ok(f) => (-weight * f.logdet(), true),
        Err(_) => {
            let sym = (m + m.transpose()) * 0.5;
            let min_eig = SymmetricEigen::new(sym)
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            (weight * NONPD_GAIN * (PD_MARGIN - min_eig).max(0.0), false)
        }
    }
}

/// Value and positive-definiteness flags of the spectral loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralLoss {
    /// Weighted sum of the three terms.
    pub value: f64,
    /// Positive definiteness per matrix: certificate, derivative surrogate,
    /// controller.
    pub pd: [bool; 3],
}

/// Spectral loss over the three feasibility matrices, using the targets
/// `ℒ_L`, `ℒ_dL`, `ℒ_C` from the hyper-parameters.
pub fn loss_lipschitz(
    v_net: &FeedforwardNet,
    g_net: &FeedforwardNet,
    lambda: &LambdaSet,
    hp: &HyperParams,
) -> Result<SpectralLoss> {
    let m_v = lipsdp::feasibility_matrix(v_net, hp.l_l, &lambda.v)?;
    let dnet = v_net.derivative_network()?;
    let m_dv = lipsdp::feasibility_matrix(&dnet, hp.l_dl, &lambda.dv)?;
    let m_c = lipsdp::feasibility_matrix(g_net, hp.l_c, &lambda.c)?;

    let (t0, pd0) = spectral_term(&m_v, hp.c_lip[0]);
    let (t1, pd1) = spectral_term(&m_dv, hp.c_lip[1]);
    let (t2, pd2) = spectral_term(&m_c, hp.c_lip[2]);
    Ok(SpectralLoss {
        value: t0 + t1 + t2,
        pd: [pd0, pd1, pd2],
    })
}

/// Validity loss `η + ℒ·ε`: drives the trained margin below the continuity
/// slack so sampled satisfaction extends to the whole domain.
#[must_use]
pub fn loss_validity(eta: f64, overall_l: f64, epsilon: f64) -> f64 {
    eta + overall_l * epsilon
}

/// A fully built batch objective on the tape, ready for one backward pass.
pub struct BatchGraph {
    /// The tape holding the whole graph.
    pub tape: Tape,
    /// Root of the objective.
    pub loss: Var,
    /// Certificate-network leaves.
    pub v_vars: NetVars,
    /// Controller-network leaves.
    pub g_vars: NetVars,
    /// Margin leaf.
    pub eta: Var,
    /// Multiplier-root leaves, in [`SqrtMultipliers`] field order.
    pub l_v: Var,
    /// Derivative-surrogate multiplier roots.
    pub l_dv: Var,
    /// Controller multiplier roots.
    pub l_c: Var,
    /// Scenario hinge loss value.
    pub loss_main: f64,
    /// Spectral loss value.
    pub loss_lip: f64,
    /// Validity loss value.
    pub loss_validity: f64,
    /// Positive definiteness per feasibility matrix.
    pub pd: [bool; 3],
    /// Largest residual per condition in this batch (`NEG_INFINITY` when a
    /// family is empty).
    pub family_max: [f64; 4],
}

/// Builds the complete batch objective on a fresh tape.
///
/// The graph mirrors [`crate::synth::residuals::scp_residuals`] term for
/// term; the plant enters through finite-difference black boxes so the
/// controller receives exact chain-rule credit for how it steers `f`.
#[allow(clippy::too_many_arguments)]
pub fn build_batch_graph<P: Plant + ?Sized>(
    plant: &mut P,
    v_net: &FeedforwardNet,
    g_net: &FeedforwardNet,
    barrier: &BoxBarrier,
    saturation: &SaturationBox,
    xs: &[DVector<f64>],
    ws: &[DVector<f64>],
    batch: &[TupleSample],
    hp: &HyperParams,
    overall_l: f64,
    eta0: f64,
    roots: &SqrtMultipliers,
) -> Result<BatchGraph> {
    let (dim_x, dim_w) = match (xs.first(), ws.first()) {
        (Some(x), Some(w)) => (x.len(), w.len()),
        _ => {
            return Err(Error::DomainViolation {
                context: "batch objective".into(),
                detail: "empty state or input cover".into(),
            })
        }
    };
    check_problem_dims(dim_x, dim_w, plant.dim_u(), v_net, g_net, barrier, saturation)?;

    let mut tape = Tape::new();
    let v_vars = NetVars::leaves(&mut tape, v_net);
    let g_vars = NetVars::leaves(&mut tape, g_net);
    let eta = tape.scalar(eta0);
    let l_v = tape.vector(roots.v.clone());
    let l_dv = tape.vector(roots.dv.clone());
    let l_c = tape.vector(roots.c.clone());

    // ----- scenario residuals -----
    let mut r_vars: [Vec<Var>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let mut pair = DVector::zeros(2 * dim_x);
    for t in batch {
        if t.q >= xs.len() || t.r >= xs.len() || t.s >= ws.len() || t.p >= ws.len() {
            return Err(Error::DomainViolation {
                context: "batch objective".into(),
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

        let f_qs = closed_loop_f(&mut tape, plant, &g_vars, saturation, x_q, w_s)?;

        // Barrier residual: constants except for f's dependence on the
        // controller.
        let neg_grad_h = tape.vector(-barrier.gradient(x_q));
        let dh = tape.dot(neg_grad_h, f_qs);
        let r_d = tape.add_const_s(dh, -hp.mu_h * barrier.value(x_q));
        r_vars[3].push(r_d);

        if t.flagged {
            continue;
        }

        let f_rp = closed_loop_f(&mut tape, plant, &g_vars, saturation, x_r, w_p)?;

        pair.rows_mut(0, dim_x).copy_from(x_q);
        pair.rows_mut(dim_x, dim_x).copy_from(x_r);
        let input = tape.vector(pair.clone());
        let fwd = v_vars.forward_graph(&mut tape, input);
        let v = tape.index_s(fwd.output, 0);
        let grad = v_vars.input_gradient_graph(&mut tape, &fwd)?;
        let grad_x = tape.segment_v(grad, 0, dim_x);
        let grad_xh = tape.segment_v(grad, dim_x, dim_x);

        let dist = (x_q - x_r).norm();
        let dw = (w_s - w_p).norm();

        let neg_v = tape.neg_s(v);
        r_vars[0].push(tape.add_const_s(neg_v, hp.alpha1(dist)));
        r_vars[1].push(tape.add_const_s(v, -hp.alpha2(dist)));

        let d1 = tape.dot(grad_x, f_qs);
        let d2 = tape.dot(grad_xh, f_rp);
        let sum = tape.add_s(d1, d2);
        let kv = tape.scale_s(v, hp.kappa);
        let sum = tape.add_s(sum, kv);
        r_vars[2].push(tape.add_const_s(sum, -hp.sigma_w(dw)));
    }

    let mut family_max = [f64::NEG_INFINITY; 4];
    let mut weighted = Vec::with_capacity(4);
    for (i, rs) in r_vars.iter().enumerate() {
        let mut hinges = Vec::with_capacity(rs.len());
        for &r in rs {
            family_max[i] = family_max[i].max(tape.value_s(r));
            let gap = tape.sub_s(r, eta);
            hinges.push(tape.hinge(gap));
        }
        let total = tape.sum_s(&hinges);
        weighted.push(tape.scale_s(total, hp.c[i]));
    }
    let loss_main_var = tape.sum_s(&weighted);

    // ----- spectral loss -----
    let lam_v = tape.had_v(l_v, l_v);
    let lam_dv = tape.had_v(l_dv, l_dv);
    let lam_c = tape.had_v(l_c, l_c);
    let m_v = lipsdp::feasibility_matrix_tape(&mut tape, v_vars.weights(), hp.l_l, lam_v);
    let dws = v_vars.derivative_weights_graph(&mut tape)?;
    let m_dv = lipsdp::feasibility_matrix_tape(&mut tape, &dws, hp.l_dl, lam_dv);
    let m_c = lipsdp::feasibility_matrix_tape(&mut tape, g_vars.weights(), hp.l_c, lam_c);

    let mut pd = [true; 3];
    let mut lip_terms = Vec::with_capacity(3);
    for (i, m) in [m_v, m_dv, m_c].into_iter().enumerate() {
        match tape.logdet(m) {
            Ok(ld) => {
                let neg = tape.neg_s(ld);
                lip_terms.push(tape.scale_s(neg, hp.c_lip[i]));
            }
            Err(_) => {
                pd[i] = false;
                let e = tape.min_eig_sym(m);
                let neg = tape.neg_s(e);
                let gap = tape.add_const_s(neg, PD_MARGIN);
                let h = tape.hinge(gap);
                lip_terms.push(tape.scale_s(h, hp.c_lip[i] * NONPD_GAIN));
            }
        }
    }
    let loss_lip_var = tape.sum_s(&lip_terms);

    // ----- validity loss -----
    let loss_validity_var = tape.add_const_s(eta, overall_l * hp.epsilon);

    let loss = tape.sum_s(&[loss_main_var, loss_lip_var, loss_validity_var]);
    Ok(BatchGraph {
        loss_main: tape.value_s(loss_main_var),
        loss_lip: tape.value_s(loss_lip_var),
        loss_validity: tape.value_s(loss_validity_var),
        loss,
        tape,
        v_vars,
        g_vars,
        eta,
        l_v,
        l_dv,
        l_c,
        pd,
        family_max,
    })
}

/// Closed-loop vector field on the tape: `f(x, sat(g(x, w)))` with `x`, `w`
/// constant and the plant entering as a finite-difference black box in `u`.
fn closed_loop_f<P: Plant + ?Sized>(
    tape: &mut Tape,
    plant: &mut P,
    g_vars: &NetVars,
    saturation: &SaturationBox,
    x: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<Var> {
    let mut joint = DVector::zeros(x.len() + w.len());
    joint.rows_mut(0, x.len()).copy_from(x);
    joint.rows_mut(x.len(), w.len()).copy_from(w);
    let input = tape.vector(joint);
    let fwd = g_vars.forward_graph(tape, input);
    let u = tape.clamp_v(fwd.output, saturation.lo(), saturation.hi());
    let u_val = tape.value_v(u).clone();
    let f_val = plant.eval(x, &u_val)?;
    let jac = jacobian_u_fd(plant, x, &u_val)?;
    Ok(tape.black_box_v(u, f_val, Some(jac)))
}

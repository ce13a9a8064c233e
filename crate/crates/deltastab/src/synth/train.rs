//! Stochastic first-order synthesis of the certificate, controller, margin,
//! and spectral multipliers.
//!
//! Every trainable quantity lives in one flat parameter vector — certificate
//! weights, controller weights, the margin `η`, and the multiplier square
//! roots — and is updated by Adam from the gradient of one sampled batch
//! objective per step. Network parameters and the auxiliary variables move
//! at separate learning rates.
//!
//! Convergence is declared in two stages, both against the quantity the
//! certificate actually needs — residuals at or below `−ℒ·ε` — rather than
//! against the trained margin, which merely pivots the hinges. After each
//! epoch a cheap gate checks what the epoch already computed: every sampled
//! residual within the validity threshold and positive definite feasibility
//! matrices. Only when the gate passes does the trainer pay for the
//! authoritative confirmation — strict spectral certification plus an
//! exhaustive residual scan, short-circuited at the first residual above
//! `−ℒ·ε`. Training stops at the first confirmed epoch.

use std::collections::{HashSet, VecDeque};

use nalgebra::DVector;

use crate::barrier::BoxBarrier;
use crate::error::{Error, Result};
use crate::net::{Activation, FeedforwardNet, SaturationBox};
use crate::plant::Plant;
use crate::sampling::{make_pair_batches, Cover, TupleSample};
use crate::synth::certify::{
    full_residual_scan, verify_networks, FullScan, ScanOptions, DEFAULT_MAX_TUPLES,
};
use crate::synth::graph::{assign_net, flatten_net, net_gradients, param_count};
use crate::synth::hyper::HyperParams;
use crate::synth::losses::{build_batch_graph, LambdaSet, SqrtMultipliers};

/// What to synthesize: the fixed geometry and architecture around the
/// trainable parameters.
#[derive(Debug, Clone)]
pub struct Problem {
    /// Barrier encoding the state box.
    pub barrier: BoxBarrier,
    /// Input saturation box.
    pub saturation: SaturationBox,
    /// Certificate hidden widths.
    pub v_hidden: Vec<usize>,
    /// Certificate activation (must be smooth).
    pub v_activation: Activation,
    /// Controller hidden widths.
    pub g_hidden: Vec<usize>,
    /// Controller activation.
    pub g_activation: Activation,
    /// Composed Lipschitz constant ℒ of the residual maps.
    pub overall_l: f64,
    /// Pair-separation threshold below which sandwich and decrease
    /// residuals are not imposed.
    pub d_min: f64,
    /// Tuple ceiling for the confirmation scan.
    pub scan_budget: u64,
}

impl Problem {
    /// Problem over a state box with the given architecture and default
    /// scan budget.
    #[must_use]
    pub fn new(
        barrier: BoxBarrier,
        saturation: SaturationBox,
        v_hidden: Vec<usize>,
        v_activation: Activation,
        g_hidden: Vec<usize>,
        g_activation: Activation,
        overall_l: f64,
        d_min: f64,
    ) -> Self {
        Problem {
            barrier,
            saturation,
            v_hidden,
            v_activation,
            g_hidden,
            g_activation,
            overall_l,
            d_min,
            scan_budget: DEFAULT_MAX_TUPLES,
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Epoch index, from zero.
    pub epoch: usize,
    /// Mean total batch loss.
    pub loss_total: f64,
    /// Mean scenario hinge loss.
    pub loss_main: f64,
    /// Mean spectral loss.
    pub loss_lip: f64,
    /// Mean validity loss.
    pub loss_validity: f64,
    /// Margin after the epoch's last step.
    pub eta: f64,
    /// Largest sampled residual across the epoch's batches — a stochastic
    /// estimate of the exhaustive `η*`.
    pub eta_s_batch: f64,
    /// Largest sampled residual per family (`NEG_INFINITY` where every
    /// batch left a family empty).
    pub family_max: [f64; 4],
    /// Feasibility-matrix positive definiteness at the epoch's last batch.
    pub pd: [bool; 3],
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Trained certificate network.
    pub v_net: FeedforwardNet,
    /// Trained controller network.
    pub g_net: FeedforwardNet,
    /// Trained multiplier square roots.
    pub roots: SqrtMultipliers,
    /// The multipliers themselves.
    pub lambda: LambdaSet,
    /// Trained margin.
    pub eta: f64,
    /// Whether the confirmation (spectral certification plus exhaustive
    /// scan under the trained margin) succeeded.
    pub converged: bool,
    /// Epochs actually run (early exit on confirmation).
    pub epochs_run: usize,
    /// Per-epoch records.
    pub history: Vec<EpochStats>,
    /// The confirming scan when one ran at the final parameters.
    pub final_scan: Option<FullScan>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Violations gathered per failed confirmation scan.
const HARD_MINE_PER_SCAN: usize = 64;
/// Ceiling on retained hard examples; oldest are evicted first.
const HARD_BUFFER_CAP: usize = 256;

/// Adam state over the flat parameter vector, with a per-index learning
/// rate so networks and auxiliaries can move at different speeds.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lrs: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grads[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lrs[i] * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Derives the batch-sampling seed for one epoch from the run seed.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Views into the flat parameter vector.
struct Layout {
    v_len: usize,
    g_len: usize,
    lv_len: usize,
    ldv_len: usize,
    lc_len: usize,
}

impl Layout {
    fn eta_index(&self) -> usize {
        self.v_len + self.g_len
    }

    fn total(&self) -> usize {
        self.v_len + self.g_len + 1 + self.lv_len + self.ldv_len + self.lc_len
    }

    fn unpack(
        &self,
        flat: &[f64],
        v_net: &mut FeedforwardNet,
        g_net: &mut FeedforwardNet,
    ) -> Result<(f64, SqrtMultipliers)> {
        let mut at = 0;
        assign_net(v_net, &flat[at..at + self.v_len])?;
        at += self.v_len;
        assign_net(g_net, &flat[at..at + self.g_len])?;
        at += self.g_len;
        let eta = flat[at];
        at += 1;
        let roots = SqrtMultipliers {
            v: DVector::from_column_slice(&flat[at..at + self.lv_len]),
            dv: DVector::from_column_slice(&flat[at + self.lv_len..at + self.lv_len + self.ldv_len]),
            c: DVector::from_column_slice(
                &flat[at + self.lv_len + self.ldv_len..at + self.lv_len + self.ldv_len + self.lc_len],
            ),
        };
        Ok((eta, roots))
    }
}

/// Runs the full synthesis loop.
///
/// Networks are initialized from `hp.seed`, batches are drawn per epoch
/// from seeds derived from it, and every floating-point operation is
/// ordered deterministically, so identical inputs reproduce the history
/// bit for bit.
pub fn train<P: Plant + ?Sized>(
    plant: &mut P,
    xs: &Cover,
    ws: &Cover,
    problem: &Problem,
    hp: &HyperParams,
) -> Result<TrainResult> {
    hp.validate()?;
    if !(problem.overall_l > 0.0 && problem.overall_l.is_finite()) {
        return Err(Error::InvalidValue {
            name: "overall Lipschitz constant".into(),
            value: problem.overall_l,
            requirement: "a finite positive number".into(),
        });
    }
    if !(problem.d_min >= 0.0 && problem.d_min.is_finite()) {
        return Err(Error::InvalidValue {
            name: "d_min".into(),
            value: problem.d_min,
            requirement: "a finite nonnegative number".into(),
        });
    }

    let dim_x = xs.domain.dim();
    let dim_w = ws.domain.dim();
    let dim_u = plant.dim_u();
    let mut v_net = FeedforwardNet::with_shape(
        2 * dim_x,
        &problem.v_hidden,
        1,
        problem.v_activation,
        hp.seed,
    )?;
    let mut g_net = FeedforwardNet::with_shape(
        dim_x + dim_w,
        &problem.g_hidden,
        dim_u,
        problem.g_activation,
        hp.seed.wrapping_add(1),
    )?;
    crate::synth::residuals::check_problem_dims(
        dim_x,
        dim_w,
        dim_u,
        &v_net,
        &g_net,
        &problem.barrier,
        &problem.saturation,
    )?;

    let roots0 = SqrtMultipliers::for_networks(&v_net, &g_net);
    let layout = Layout {
        v_len: param_count(&v_net),
        g_len: param_count(&g_net),
        lv_len: roots0.v.len(),
        ldv_len: roots0.dv.len(),
        lc_len: roots0.c.len(),
    };

    let mut flat = Vec::with_capacity(layout.total());
    flat.extend(flatten_net(&v_net));
    flat.extend(flatten_net(&g_net));
    flat.push(0.0); // margin η starts at zero
    flat.extend(roots0.v.iter());
    flat.extend(roots0.dv.iter());
    flat.extend(roots0.c.iter());

    let mut lrs = vec![hp.lr_net; layout.v_len + layout.g_len];
    lrs.resize(layout.total(), hp.lr_aux);

    let mut adam = Adam::new(layout.total());
    let mut history = Vec::with_capacity(hp.epochs);
    let mut converged = false;
    let mut final_scan = None;
    let mut epochs_run = 0;

    // Hard examples mined from failed confirmation scans. Uniform sampling
    // alone cannot push the maximum of an N²M² product below the margin —
    // the hinge equilibrium tracks a batch quantile, not the global worst —
    // so confirmed violations ride along in every subsequent batch until
    // they train clean.
    let mut hard: VecDeque<TupleSample> = VecDeque::new();
    let mut hard_seen: HashSet<(usize, usize, usize, usize)> = HashSet::new();

    for epoch in 0..hp.epochs {
        let mut batches = make_pair_batches(
            xs,
            ws,
            hp.batch_size,
            hp.batches_per_epoch,
            problem.d_min,
            epoch_seed(hp.seed, epoch),
        );
        if !hard.is_empty() {
            for batch in &mut batches {
                batch.extend(hard.iter().copied());
            }
        }

        let mut sum_total = 0.0;
        let mut sum_main = 0.0;
        let mut sum_lip = 0.0;
        let mut sum_validity = 0.0;
        let mut family_max = [f64::NEG_INFINITY; 4];
        let mut pd = [false; 3];

        for batch in &batches {
            let (eta_now, roots) = layout.unpack(&flat, &mut v_net, &mut g_net)?;
            let graph = build_batch_graph(
                plant,
                &v_net,
                &g_net,
                &problem.barrier,
                &problem.saturation,
                &xs.points,
                &ws.points,
                batch,
                hp,
                problem.overall_l,
                eta_now,
                &roots,
            )?;

            sum_total += graph.tape.value_s(graph.loss);
            sum_main += graph.loss_main;
            sum_lip += graph.loss_lip;
            sum_validity += graph.loss_validity;
            for (acc, batch_max) in family_max.iter_mut().zip(graph.family_max) {
                *acc = acc.max(batch_max);
            }
            pd = graph.pd;

            let grads = graph.tape.backward(graph.loss)?;
            let mut flat_grad = Vec::with_capacity(layout.total());
            flat_grad.extend(net_gradients(&graph.tape, &graph.v_vars, &grads));
            flat_grad.extend(net_gradients(&graph.tape, &graph.g_vars, &grads));
            flat_grad.push(grads.scalar(graph.eta));
            for (var, len) in [
                (graph.l_v, layout.lv_len),
                (graph.l_dv, layout.ldv_len),
                (graph.l_c, layout.lc_len),
            ] {
                match grads.vector(var) {
                    Some(g) => flat_grad.extend(g.iter()),
                    None => flat_grad.extend(std::iter::repeat_n(0.0, len)),
                }
            }
            adam.step(&mut flat, &flat_grad, &lrs);
        }

        epochs_run = epoch + 1;
        let n_batches = batches.len() as f64;
        let eta_now = flat[layout.eta_index()];
        let eta_s_batch = family_max
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        history.push(EpochStats {
            epoch,
            loss_total: sum_total / n_batches,
            loss_main: sum_main / n_batches,
            loss_lip: sum_lip / n_batches,
            loss_validity: sum_validity / n_batches,
            eta: eta_now,
            eta_s_batch,
            family_max,
            pd,
        });

        // Cheap gate: every sampled residual within the validity threshold
        // and spectral matrices positive definite.
        let threshold = -problem.overall_l * hp.epsilon;
        let gate = eta_s_batch <= threshold && pd.iter().all(|&p| p);
        if !gate {
            continue;
        }

        // Authoritative confirmation at the current parameters.
        let (_, roots) = layout.unpack(&flat, &mut v_net, &mut g_net)?;
        let checks = verify_networks(&v_net, &g_net, &roots.lambdas(), hp)?;
        if !checks.iter().all(|c| c.certified) {
            continue;
        }
        let scan = full_residual_scan(
            plant,
            &v_net,
            &g_net,
            &problem.barrier,
            &problem.saturation,
            &xs.points,
            &ws.points,
            hp,
            problem.d_min,
            &ScanOptions {
                stop_above: Some(threshold),
                max_tuples: problem.scan_budget,
                collect: HARD_MINE_PER_SCAN,
            },
        )?;
        let confirmed =
            scan.complete && scan.eta_star + problem.overall_l * hp.epsilon <= 0.0;
        let exhausted = scan.budget_exhausted();
        for violation in &scan.violations {
            let (q, r, s, p) = violation.tuple;
            if hard_seen.insert((q, r, s, p)) {
                hard.push_back(TupleSample {
                    q,
                    r,
                    s,
                    p,
                    flagged: (&xs.points[q] - &xs.points[r]).norm() < problem.d_min,
                });
                if hard.len() > HARD_BUFFER_CAP {
                    let old = hard.pop_front().expect("buffer nonempty");
                    hard_seen.remove(&(old.q, old.r, old.s, old.p));
                }
            }
        }
        final_scan = Some(scan);
        if confirmed {
            converged = true;
            break;
        }
        if exhausted {
            // Every future confirmation would exhaust the same budget;
            // more epochs cannot fix a scan that is too large to finish.
            break;
        }
    }

    let (eta, roots) = layout.unpack(&flat, &mut v_net, &mut g_net)?;
    Ok(TrainResult {
        lambda: roots.lambdas(),
        v_net,
        g_net,
        roots,
        eta,
        converged,
        epochs_run,
        history,
        final_scan,
    })
}

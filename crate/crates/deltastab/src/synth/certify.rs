//! Exhaustive residual verification and the machine-readable certificate.
//!
//! Training works on sampled batches; certification does not. The scan here
//! walks the **entire** product of the two covers — every state pair for the
//! sandwich conditions, every `(x_q, x_r, w_s, w_p)` tuple for the decrease
//! condition, every `(x_q, w_s)` pair for the barrier condition — and
//! reports the exact sample margin `η*`. Combined with the composed
//! Lipschitz constant ℒ and the cover resolution ε, the sign of
//! `η* + ℒ·ε` decides whether sampled satisfaction extends to the whole
//! continuum.
//!
//! The tuple family dominates the cost at `|pairs| · M²`, so the scan
//! decomposes each decrease residual as `A(s) + B(p) + κV − σ(s, p)` with
//! `A(s) = ∇_x V·f(x_q, u_qs)` and `B(p) = ∇_x̂ V·f(x_r, u_rp)`: the
//! closed-loop field is evaluated once per `(state, input)` pair, the
//! `M`-point dot products once per state pair, and the inner `M²` loop
//! touches scalars only.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::barrier::BoxBarrier;
use crate::error::{Error, Result};
use crate::lipcert::lipsdp::{self, LipschitzCheck};
use crate::net::{FeedforwardNet, SaturationBox};
use crate::plant::Plant;
use crate::synth::hyper::HyperParams;
use crate::synth::losses::LambdaSet;
use crate::synth::residuals::check_problem_dims;

/// Positive semidefiniteness slack for the final certificate checks: a
/// matrix whose strict factorization fails still passes if no eigenvalue
/// sits below `-PSD_TOL`.
pub const PSD_TOL: f64 = 1e-9;

/// Default ceiling on decrease-condition tuples scanned before the scan
/// declares itself incomplete.
pub const DEFAULT_MAX_TUPLES: u64 = 50_000_000;

/// Scan controls.
#[derive(Debug, Clone, Copy)]
pub struct ScanOptions {
    /// Abort once `collect` residuals exceed this threshold. The returned
    /// scan is then incomplete but carries the violations. `None` scans
    /// everything and reports exact maxima.
    pub stop_above: Option<f64>,
    /// Ceiling on decrease-condition tuples. Exceeding it marks the scan
    /// incomplete; certification then fails honestly rather than silently
    /// skipping tuples.
    pub max_tuples: u64,
    /// How many threshold crossings to gather before aborting (at least 1).
    /// Sandwich and decrease crossings are recorded at most once per state
    /// pair, so a single bad pair cannot crowd out the rest of the product.
    /// The trainer mines these as hard examples for subsequent batches.
    pub collect: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            stop_above: None,
            max_tuples: DEFAULT_MAX_TUPLES,
            collect: 1,
        }
    }
}

/// The four scenario conditions, in residual-family order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Lower sandwich bound `α₁(|Δx|) ≤ V`.
    LowerSandwich,
    /// Upper sandwich bound `V ≤ α₂(|Δx|)`.
    UpperSandwich,
    /// Decrease condition along the closed loop.
    Decrease,
    /// Barrier invariance.
    Barrier,
}

impl Family {
    /// Stable lowercase name.
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            Family::LowerSandwich => "lower-sandwich",
            Family::UpperSandwich => "upper-sandwich",
            Family::Decrease => "decrease",
            Family::Barrier => "barrier",
        }
    }
}

/// A residual that crossed the `stop_above` threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    /// Which condition was violated.
    pub family: Family,
    /// Cover indices `(q, r, s, p)`; sandwich violations leave `s = p = 0`,
    /// barrier violations leave `r = 0, p = 0`.
    pub tuple: (usize, usize, usize, usize),
    /// The offending residual value.
    pub value: f64,
}

/// How much of the product the scan visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanCounts {
    /// State cover size.
    pub states: usize,
    /// Input cover size.
    pub inputs: usize,
    /// Separated state pairs carrying sandwich residuals.
    pub pairs_ab: u64,
    /// Decrease-condition tuples evaluated.
    pub tuples_c: u64,
    /// Barrier pairs evaluated.
    pub pairs_d: u64,
}

/// Result of an exhaustive (or early-terminated) residual scan.
#[derive(Debug, Clone, PartialEq)]
pub struct FullScan {
    /// Largest residual seen across all families.
    pub eta_star: f64,
    /// Largest residual per family, `NEG_INFINITY` where a family is empty.
    pub family_max: [f64; 4],
    /// Largest `|V(x, x)|` over the state cover — a diagnostic of how far
    /// the certificate drifts from zero on the diagonal it is never trained
    /// or checked on directly.
    pub diag_v_max: f64,
    /// Visit counters.
    pub counts: ScanCounts,
    /// Whether every residual in the product was evaluated. `false` when
    /// the scan aborted early: after `collect` threshold crossings or an
    /// exhausted tuple budget. A scan that finds fewer crossings than
    /// `collect` still visits everything, so its maxima are exact.
    pub complete: bool,
    /// The first threshold crossing, when `stop_above` was set.
    pub first_violation: Option<Violation>,
    /// All recorded threshold crossings, at most `collect` of them, in scan
    /// order (barrier family first, then sandwich/decrease by state pair).
    pub violations: Vec<Violation>,
}

impl FullScan {
    /// True when the scan ran out of tuple budget (as opposed to stopping at
    /// a violation or finishing).
    #[must_use]
    pub fn budget_exhausted(&self) -> bool {
        !self.complete && self.first_violation.is_none()
    }
}

/// Exhaustively evaluates all four residual families over the cover product.
///
/// State pairs closer than `d_min` carry no sandwich or decrease residuals,
/// mirroring the sampled objective. The barrier family is evaluated for
/// every `(state, input)` pair regardless.
#[allow(clippy::too_many_arguments)]
pub fn full_residual_scan<P: Plant + ?Sized>(
    plant: &mut P,
    v_net: &FeedforwardNet,
    g_net: &FeedforwardNet,
    barrier: &BoxBarrier,
    saturation: &SaturationBox,
    xs: &[DVector<f64>],
    ws: &[DVector<f64>],
    hp: &HyperParams,
    d_min: f64,
    opts: &ScanOptions,
) -> Result<FullScan> {
    let (dim_x, dim_w) = match (xs.first(), ws.first()) {
        (Some(x), Some(w)) => (x.len(), w.len()),
        _ => {
            return Err(Error::DomainViolation {
                context: "residual scan".into(),
                detail: "empty state or input cover".into(),
            })
        }
    };
    check_problem_dims(dim_x, dim_w, plant.dim_u(), v_net, g_net, barrier, saturation)?;

    let n = xs.len();
    let m = ws.len();
    let threshold = opts.stop_above.unwrap_or(f64::INFINITY);
    let collect = opts.collect.max(1);

    let mut scan = FullScan {
        eta_star: f64::NEG_INFINITY,
        family_max: [f64::NEG_INFINITY; 4],
        diag_v_max: 0.0,
        counts: ScanCounts {
            states: n,
            inputs: m,
            pairs_ab: 0,
            tuples_c: 0,
            pairs_d: 0,
        },
        complete: false,
        first_violation: None,
        violations: Vec::new(),
    };

    // Closed-loop field per (state, input) pair: N·M controller and plant
    // evaluations, reused by both the barrier and decrease families.
    let mut field: Vec<Vec<DVector<f64>>> = Vec::with_capacity(n);
    for x in xs {
        let mut row = Vec::with_capacity(m);
        for w in ws {
            let u = g_net.saturated_forward(x, w, saturation)?;
            row.push(plant.eval(x, &u)?);
        }
        field.push(row);
    }

    // Barrier family.
    for (q, x) in xs.iter().enumerate() {
        let grad_h = barrier.gradient(x);
        let mu_h_h = hp.mu_h * barrier.value(x);
        let mut recorded = false;
        for s in 0..m {
            let r_d = -grad_h.dot(&field[q][s]) - mu_h_h;
            scan.counts.pairs_d += 1;
            scan.family_max[3] = scan.family_max[3].max(r_d);
            if r_d > threshold && !recorded {
                recorded = true;
                scan.violations.push(Violation {
                    family: Family::Barrier,
                    tuple: (q, 0, s, 0),
                    value: r_d,
                });
                if scan.violations.len() >= collect {
                    return Ok(finish(scan, false));
                }
            }
        }
    }

    // Diagonal diagnostic.
    let mut pair = DVector::zeros(2 * dim_x);
    for x in xs {
        pair.rows_mut(0, dim_x).copy_from(x);
        pair.rows_mut(dim_x, dim_x).copy_from(x);
        let v = v_net.forward(&pair)?[0];
        scan.diag_v_max = scan.diag_v_max.max(v.abs());
    }

    // Sigma table over input pairs.
    let mut sigma = vec![0.0; m * m];
    for s in 0..m {
        for p in 0..m {
            sigma[s * m + p] = hp.sigma_w((&ws[s] - &ws[p]).norm());
        }
    }

    // Sandwich and decrease families over separated state pairs.
    let mut a_of_s = vec![0.0; m];
    let mut b_of_p = vec![0.0; m];
    for q in 0..n {
        for r in 0..n {
            let dist = (&xs[q] - &xs[r]).norm();
            if dist < d_min {
                continue;
            }
            if scan.counts.tuples_c + (m as u64) * (m as u64) > opts.max_tuples {
                return Ok(finish(scan, false));
            }

            pair.rows_mut(0, dim_x).copy_from(&xs[q]);
            pair.rows_mut(dim_x, dim_x).copy_from(&xs[r]);
            let v = v_net.forward(&pair)?[0];
            let grad = v_net.input_gradient(&pair)?;
            let grad_x = grad.rows(0, dim_x);
            let grad_xh = grad.rows(dim_x, dim_x);

            scan.counts.pairs_ab += 1;
            let r_a = hp.alpha1(dist) - v;
            scan.family_max[0] = scan.family_max[0].max(r_a);
            if r_a > threshold {
                scan.violations.push(Violation {
                    family: Family::LowerSandwich,
                    tuple: (q, r, 0, 0),
                    value: r_a,
                });
                if scan.violations.len() >= collect {
                    return Ok(finish(scan, false));
                }
            }
            let r_b = v - hp.alpha2(dist);
            scan.family_max[1] = scan.family_max[1].max(r_b);
            if r_b > threshold {
                scan.violations.push(Violation {
                    family: Family::UpperSandwich,
                    tuple: (q, r, 0, 0),
                    value: r_b,
                });
                if scan.violations.len() >= collect {
                    return Ok(finish(scan, false));
                }
            }

            let kappa_v = hp.kappa * v;
            for s in 0..m {
                a_of_s[s] = grad_x.dot(&field[q][s]);
            }
            for p in 0..m {
                b_of_p[p] = grad_xh.dot(&field[r][p]);
            }
            let mut recorded_c = false;
            for s in 0..m {
                let partial = a_of_s[s] + kappa_v;
                for p in 0..m {
                    let r_c = b_of_p[p] + partial - sigma[s * m + p];
                    scan.counts.tuples_c += 1;
                    scan.family_max[2] = scan.family_max[2].max(r_c);
                    if r_c > threshold && !recorded_c {
                        recorded_c = true;
                        scan.violations.push(Violation {
                            family: Family::Decrease,
                            tuple: (q, r, s, p),
                            value: r_c,
                        });
                        if scan.violations.len() >= collect {
                            return Ok(finish(scan, false));
                        }
                    }
                }
            }
        }
    }
    let clean = scan.violations.is_empty();
    Ok(finish(scan, clean))
}

fn finish(mut scan: FullScan, complete: bool) -> FullScan {
    scan.complete = complete;
    scan.first_violation = scan.violations.first().copied();
    scan.eta_star = scan
        .family_max
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    scan
}

/// Runs the three spectral feasibility checks with the trained multipliers:
/// the certificate network against `ℒ_L`, its derivative surrogate against
/// `ℒ_dL`, and the controller against `ℒ_C`.
pub fn verify_networks(
    v_net: &FeedforwardNet,
    g_net: &FeedforwardNet,
    lambda: &LambdaSet,
    hp: &HyperParams,
) -> Result<[LipschitzCheck; 3]> {
    let clf = lipsdp::certify(v_net, hp.l_l, &lambda.v, PSD_TOL)?;
    let dnet = v_net.derivative_network()?;
    let clf_derivative = lipsdp::certify(&dnet, hp.l_dl, &lambda.dv, PSD_TOL)?;
    let controller = lipsdp::certify(g_net, hp.l_c, &lambda.c, PSD_TOL)?;
    Ok([clf, clf_derivative, controller])
}

/// One spectral check as recorded in the certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    /// Lipschitz bound that was tested.
    pub target: f64,
    /// Whether the feasibility matrix was positive semidefinite.
    pub certified: bool,
    /// Smallest strict-factorization pivot, when it succeeded.
    pub min_pivot: Option<f64>,
    /// Feasibility matrix side length.
    pub matrix_dim: usize,
}

impl From<LipschitzCheck> for CheckSummary {
    fn from(c: LipschitzCheck) -> Self {
        CheckSummary {
            target: c.target,
            certified: c.certified,
            min_pivot: c.min_pivot,
            matrix_dim: c.matrix_dim,
        }
    }
}

/// The three spectral verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzVerdicts {
    /// Certificate network against `ℒ_L`.
    pub clf: CheckSummary,
    /// Derivative surrogate against `ℒ_dL`.
    pub clf_derivative: CheckSummary,
    /// Controller against `ℒ_C`.
    pub controller: CheckSummary,
}

/// Final training losses, for the record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Scenario hinge loss.
    pub main: f64,
    /// Spectral loss.
    pub lipschitz: f64,
    /// Validity loss.
    pub validity: f64,
}

/// Where the certified artifacts came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Training seed.
    pub seed: u64,
    /// SHA-256 of the run configuration file.
    pub config_sha256: String,
    /// SHA-256 of the serialized state cover.
    pub cover_x_sha256: String,
    /// SHA-256 of the serialized input cover.
    pub cover_w_sha256: String,
}

/// The machine-readable certification verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `"certified"` or `"not-certified"`.
    pub verdict: String,
    /// Why certification failed; empty when certified.
    pub reasons: Vec<String>,
    /// Exact sample margin from the exhaustive scan.
    pub eta_star: f64,
    /// Margin the optimizer trained against.
    pub eta_trained: f64,
    /// Composed Lipschitz constant ℒ.
    pub lipschitz_constant: f64,
    /// Cover resolution ε.
    pub epsilon: f64,
    /// Validity margin `η* + ℒ·ε`; certification requires it nonpositive.
    pub margin: f64,
    /// Pair-separation threshold the scan honored.
    pub d_min: f64,
    /// Largest residual per family; `None` where a family was empty.
    pub family_max: [Option<f64>; 4],
    /// Largest `|V(x, x)|` over the state cover.
    pub diag_v_max: f64,
    /// Final training losses.
    pub loss: LossReport,
    /// Spectral feasibility verdicts.
    pub lipschitz_verdicts: LipschitzVerdicts,
    /// Scan visit counters.
    pub counts: ScanCounts,
    /// Input hashes and seed.
    pub provenance: Provenance,
}

/// Folds a finished scan, the spectral checks, and the run constants into
/// the final verdict.
pub fn issue_certificate(
    scan: &FullScan,
    checks: &[LipschitzCheck; 3],
    eta_trained: f64,
    overall_l: f64,
    epsilon: f64,
    d_min: f64,
    loss: LossReport,
    provenance: Provenance,
) -> Certificate {
    let margin = scan.eta_star + overall_l * epsilon;
    let mut reasons = Vec::new();
    if !scan.complete {
        match &scan.first_violation {
            Some(v) => reasons.push(format!(
                "scan stopped at a {} violation of {} at tuple {:?}",
                v.family.as_str(),
                v.value,
                v.tuple
            )),
            None => reasons.push(format!(
                "scan incomplete: tuple budget exhausted after {} decrease tuples",
                scan.counts.tuples_c
            )),
        }
    }
    if !(margin <= 0.0) {
        reasons.push(format!(
            "validity margin eta* + L*eps = {margin} is not nonpositive"
        ));
    }
    let names = ["certificate", "certificate derivative", "controller"];
    for (name, check) in names.iter().zip(checks) {
        if !check.certified {
            reasons.push(format!(
                "{name} network Lipschitz bound {} not certified",
                check.target
            ));
        }
    }

    let family_max = scan
        .family_max
        .map(|v| if v == f64::NEG_INFINITY { None } else { Some(v) });
    Certificate {
        verdict: if reasons.is_empty() {
            "certified".into()
        } else {
            "not-certified".into()
        },
        reasons,
        eta_star: scan.eta_star,
        eta_trained,
        lipschitz_constant: overall_l,
        epsilon,
        margin,
        d_min,
        family_max,
        diag_v_max: scan.diag_v_max,
        loss,
        lipschitz_verdicts: LipschitzVerdicts {
            clf: checks[0].into(),
            clf_derivative: checks[1].into(),
            controller: checks[2].into(),
        },
        counts: scan.counts,
        provenance,
    }
}

impl Certificate {
    /// Whether the verdict is `"certified"`.
    #[must_use]
    pub fn is_certified(&self) -> bool {
        self.verdict == "certified"
    }
}

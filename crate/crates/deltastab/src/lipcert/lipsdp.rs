//! Semidefinite feasibility test for network Lipschitz bounds.
//!
//! For a feedforward network with activations whose chordal slopes lie in
//! `[0, 1]`, an ℓ₂→ℓ₂ Lipschitz bound `L` is **proved** by exhibiting a
//! nonnegative diagonal multiplier `Λ` (one entry per hidden neuron) that
//! makes the following block-tridiagonal matrix positive semidefinite:
//!
//! ```text
//!     ⎡ L²I      -θ₀ᵀΛ₁                          ⎤
//!     ⎢ -Λ₁θ₀     2Λ₁    -θ₁ᵀΛ₂                  ⎥
//! M = ⎢          -Λ₂θ₁     2Λ₂   ⋱               ⎥
//!     ⎢                    ⋱     2Λ_N   -θ_Nᵀ    ⎥
//!     ⎣                          -θ_N     I      ⎦
//! ```
//!
//! where `θᵢ` are the layer weight matrices and `Λᵢ` the slice of `Λ` for
//! hidden layer `i`. A purely affine network degenerates to
//! `[[L²I, -θ₀ᵀ], [-θ₀, I]]`, which is positive semidefinite exactly when
//! `L ≥ ‖θ₀‖₂`.
//!
//! The same layout is produced in two forms: a plain matrix for certification
//! and a [`Tape`] graph for training through `logdet`. The plain form is
//! computed **by running the tape builder** on a scratch tape, so the two can
//! never drift apart.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lipcert::ldlt;
use crate::net::FeedforwardNet;
use crate::tape::{Tape, Var};

/// Eigenvalue slack accepted when calling a matrix positive semidefinite.
pub const DEFAULT_PSD_TOL: f64 = 1e-12;

/// Outcome of one feasibility test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzCheck {
    /// The bound that was tested.
    pub target: f64,
    /// Whether the matrix was positive semidefinite (within
    /// [`DEFAULT_PSD_TOL`]-style slack chosen by the caller).
    pub certified: bool,
    /// Smallest pivot of the strict factorization, when it succeeded —
    /// a conditioning diagnostic, not an eigenvalue.
    pub min_pivot: Option<f64>,
    /// Side length of the feasibility matrix.
    pub matrix_dim: usize,
}

/// Builds the feasibility matrix on a tape from per-layer weight vars and a
/// multiplier vector var (length = total hidden neurons, assumed
/// elementwise nonnegative — training guarantees this by squaring a free
/// vector). `l_target` enters only the constant top-left block.
pub fn feasibility_matrix_tape(
    tape: &mut Tape,
    weights: &[Var],
    l_target: f64,
    lambda: Var,
) -> Var {
    assert!(!weights.is_empty(), "a network has at least one layer");
    // Block dimensions: input, each hidden width, output.
    let mut dims = Vec::with_capacity(weights.len() + 1);
    dims.push(tape.value_m(weights[0]).ncols());
    for &w in weights {
        dims.push(tape.value_m(w).nrows());
    }
    let hidden_total: usize = dims[1..dims.len() - 1].iter().sum();
    assert_eq!(
        tape.value_v(lambda).len(),
        hidden_total,
        "multiplier length must equal the total hidden width"
    );
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0usize, |acc, &d| {
            let here = *acc;
            *acc += d;
            Some(here)
        })
        .collect();
    let total: usize = dims.iter().sum();

    let mut blocks: Vec<(usize, usize, Var)> = Vec::new();

    // Constant corners: L² I on the input block, I on the output block.
    let n0 = dims[0];
    let nout = *dims.last().expect("dims nonempty");
    let lsq_eye = tape.matrix(DMatrix::identity(n0, n0) * (l_target * l_target));
    blocks.push((0, 0, lsq_eye));
    let out_eye = tape.matrix(DMatrix::identity(nout, nout));
    let out_off = offsets[dims.len() - 1];
    blocks.push((out_off, out_off, out_eye));

    // Hidden blocks with their multipliers.
    let mut lam_start = 0;
    for i in 1..dims.len() - 1 {
        let h = dims[i];
        let lam_i = tape.segment_v(lambda, lam_start, h);
        lam_start += h;
        let lam_m = tape.diag_m(lam_i);
        // Diagonal: 2 Λᵢ.
        let twice = tape.scale_m(lam_m, 2.0);
        blocks.push((offsets[i], offsets[i], twice));
        // Coupling to the previous block: -Λᵢ θ_{i-1} and its transpose.
        let coupled = tape.mat_mul(lam_m, weights[i - 1]);
        let neg = tape.scale_m(coupled, -1.0);
        let neg_t = tape.mat_trans(neg);
        blocks.push((offsets[i], offsets[i - 1], neg));
        blocks.push((offsets[i - 1], offsets[i], neg_t));
    }

    // Output coupling: -θ_N against the last hidden block (or the input
    // block when the network is purely affine).
    let last = *weights.last().expect("nonempty");
    let neg_last = tape.scale_m(last, -1.0);
    let neg_last_t = tape.mat_trans(neg_last);
    let prev_off = offsets[dims.len() - 2];
    blocks.push((out_off, prev_off, neg_last));
    blocks.push((prev_off, out_off, neg_last_t));

    tape.assemble(total, total, blocks)
}

/// Builds the feasibility matrix for a network as a plain matrix, validating
/// the multiplier and the activation slope ranges.
pub fn feasibility_matrix(
    net: &FeedforwardNet,
    l_target: f64,
    lambda: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if l_target <= 0.0 || !l_target.is_finite() {
        return Err(Error::InvalidValue {
            name: "Lipschitz target".into(),
            value: l_target,
            requirement: "finite and positive".into(),
        });
    }
    for act in net.activations() {
        if act.slope_range() != (0.0, 1.0) {
            return Err(Error::BadNetworkRole {
                role: "Lipschitz feasibility test".into(),
                reason: format!(
                    "activation {} has slope range {:?}; the multiplier layout assumes [0, 1]",
                    act.tag(),
                    act.slope_range()
                ),
            });
        }
    }
    let hidden_total: usize = net.hidden_widths().iter().sum();
    if lambda.len() != hidden_total {
        return Err(Error::DimensionMismatch {
            context: "multiplier vector".into(),
            expected: hidden_total,
            actual: lambda.len(),
        });
    }
    if let Some(bad) = lambda.iter().find(|&&l| l < 0.0 || !l.is_finite()) {
        return Err(Error::InvalidValue {
            name: "multiplier entry".into(),
            value: *bad,
            requirement: "finite and nonnegative".into(),
        });
    }

    // Run the tape builder on a scratch tape so the two forms cannot drift.
    let mut tape = Tape::new();
    let weights: Vec<Var> = net
        .layers()
        .iter()
        .map(|l| tape.matrix(l.weight.clone()))
        .collect();
    let lam = tape.vector(lambda.clone());
    let m = feasibility_matrix_tape(&mut tape, &weights, l_target, lam);
    Ok(tape.value_m(m).clone())
}

/// The norm-product Lipschitz bound `Π‖θᵢ‖₂` together with the multiplier
/// that provably certifies it: `λ` constant within each hidden layer,
/// `λᵢ = Π_{j ≥ i} ‖θⱼ‖₂²` (peeling Schur complements from the output side).
/// A useful warm start: any target at or above the product bound is certified
/// with this multiplier.
#[must_use]
pub fn product_bound_lambda(net: &FeedforwardNet) -> (f64, DVector<f64>) {
    let norms: Vec<f64> = net.layers().iter().map(|l| spectral_norm(&l.weight)).collect();
    let product: f64 = norms.iter().product();
    let widths = net.hidden_widths();
    let mut lam = Vec::new();
    // lambda for hidden layer i (1-based) = prod_{j>=i} norms[j]^2, where
    // norms[j] is the norm of the weight feeding OUT of hidden layer j.
    for (i, &w) in widths.iter().enumerate() {
        let tail: f64 = norms[i + 1..].iter().map(|n| n * n).product();
        lam.extend(std::iter::repeat_n(tail, w));
    }
    (product, DVector::from_vec(lam))
}

/// Largest singular value.
#[must_use]
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Tests whether `l_target` is a certified Lipschitz bound for the network
/// under the given multiplier. `tol` is the eigenvalue slack (use
/// [`DEFAULT_PSD_TOL`] unless there is a reason not to).
pub fn certify(
    net: &FeedforwardNet,
    l_target: f64,
    lambda: &DVector<f64>,
    tol: f64,
) -> Result<LipschitzCheck> {
    let m = feasibility_matrix(net, l_target, lambda)?;
    let strict = ldlt::factor(&m);
    let certified = match &strict {
        Ok(_) => true,
        Err(_) => ldlt::is_positive_semidefinite(&m, tol),
    };
    Ok(LipschitzCheck {
        target: l_target,
        certified,
        min_pivot: strict.ok().map(|f| f.min_pivot()),
        matrix_dim: m.nrows(),
    })
}

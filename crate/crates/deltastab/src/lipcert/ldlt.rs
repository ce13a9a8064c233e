//! Permutation-free LDLᵀ factorization of symmetric matrices.
//!
//! For a symmetric positive definite `M`, computes unit lower-triangular `L`
//! and positive diagonal `D` with `M = L D Lᵀ`. Positive definiteness is
//! exactly "every pivot of the factorization is positive" (Sylvester's
//! criterion), which makes the factorization double as the feasibility test
//! for the Lipschitz certificates: a certificate matrix is accepted when the
//! factorization runs to completion.
//!
//! Only the lower triangle of the input is read, so tiny floating-point
//! asymmetries introduced while assembling a matrix cannot flip a verdict.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A completed factorization `M = L D Lᵀ` with strictly positive pivots.
#[derive(Debug, Clone)]
pub struct Ldlt {
    l: DMatrix<f64>,
    d: DVector<f64>,
}

/// Factors a symmetric matrix, failing with the index and value of the first
/// non-positive (or non-finite) pivot. Success proves positive definiteness.
pub fn factor(m: &DMatrix<f64>) -> Result<Ldlt> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "LDLt factorization input".into(),
            expected: n,
            actual: m.ncols(),
        });
    }
    let mut l = DMatrix::<f64>::identity(n, n);
    let mut d = DVector::<f64>::zeros(n);
    for j in 0..n {
        // Pivot: d_j = m_jj - sum_k L_jk^2 d_k
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)] * d[k];
        }
        if pivot <= 0.0 || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        d[j] = pivot;
        // Column j of L below the diagonal.
        for i in (j + 1)..n {
            let mut acc = m[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = acc / pivot;
        }
    }
    Ok(Ldlt { l, d })
}

/// Tests `M + tol·I ≻ 0`, i.e. the smallest eigenvalue of `M` exceeds
/// `-tol`. This is the tolerance-carrying positive semidefiniteness check
/// used for certificate verdicts.
#[must_use]
pub fn is_positive_semidefinite(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let mut shifted = m.clone();
    for i in 0..m.nrows() {
        shifted[(i, i)] += tol;
    }
    factor(&shifted).is_ok()
}

impl Ldlt {
    /// Dimension of the factored matrix.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// The pivots, i.e. the diagonal of `D`.
    #[must_use]
    pub fn pivots(&self) -> &DVector<f64> {
        &self.d
    }

    /// Smallest pivot — a cheap conditioning diagnostic (not an eigenvalue
    /// bound, but zero exactly when the matrix is on the PSD boundary).
    #[must_use]
    pub fn min_pivot(&self) -> f64 {
        self.d.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `ln det M = Σ ln d_j` (the unit-triangular factors contribute
    /// nothing).
    #[must_use]
    pub fn logdet(&self) -> f64 {
        self.d.iter().map(|&p| p.ln()).sum()
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                context: "LDLt solve right-hand side".into(),
                expected: n,
                actual: b.len(),
            });
        }
        // Forward substitution L y = b.
        let mut x = b.clone();
        for i in 0..n {
            for k in 0..i {
                let delta = self.l[(i, k)] * x[k];
                x[i] -= delta;
            }
        }
        // Diagonal scale.
        for i in 0..n {
            x[i] /= self.d[i];
        }
        // Backward substitution L^T z = y.
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let delta = self.l[(k, i)] * x[k];
                x[i] -= delta;
            }
        }
        Ok(x)
    }

    /// Dense inverse, column by column. Symmetric by construction of the
    /// factorization, up to rounding.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let mut inv = DMatrix::<f64>::zeros(n, n);
        let mut e = DVector::<f64>::zeros(n);
        for c in 0..n {
            e[c] = 1.0;
            let col = self.solve(&e)?;
            inv.set_column(c, &col);
            e[c] = 0.0;
        }
        Ok(inv)
    }
}

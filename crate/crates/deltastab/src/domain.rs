//! Axis-aligned boxes: the state set, the external-input set, and the
//! admissible control set are all of this shape.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A compact box `[lo₁, hi₁] × … × [lo_d, hi_d]` with strictly positive
/// width on every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl BoxDomain {
    /// Validates and builds a box.
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                context: "box bounds".into(),
                expected: lo.len(),
                actual: hi.len(),
            });
        }
        if lo.is_empty() {
            return Err(Error::InvalidValue {
                name: "box dimension".into(),
                value: 0.0,
                requirement: "at least one axis".into(),
            });
        }
        for i in 0..lo.len() {
            if lo[i] >= hi[i] || !lo[i].is_finite() || !hi[i].is_finite() {
                return Err(Error::InvalidValue {
                    name: format!("box bounds on axis {i}"),
                    value: lo[i],
                    requirement: "finite lower bound strictly below finite upper bound".into(),
                });
            }
        }
        Ok(BoxDomain { lo, hi })
    }

    /// Builds a box from plain slices.
    pub fn from_slices(lo: &[f64], hi: &[f64]) -> Result<Self> {
        BoxDomain::new(DVector::from_row_slice(lo), DVector::from_row_slice(hi))
    }

    /// Number of axes.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Lower bounds.
    #[must_use]
    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    /// Upper bounds.
    #[must_use]
    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    /// Width of one axis.
    #[must_use]
    pub fn span(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    /// Geometric center.
    #[must_use]
    pub fn center(&self) -> DVector<f64> {
        (&self.lo + &self.hi) * 0.5
    }

    /// Half-widths of all axes.
    #[must_use]
    pub fn half_widths(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| 0.5 * self.span(i)).collect()
    }

    /// Distance from the center to a corner.
    #[must_use]
    pub fn half_diagonal(&self) -> f64 {
        (0..self.dim())
            .map(|i| {
                let h = 0.5 * self.span(i);
                h * h
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Membership with slack `tol ≥ 0` on every axis.
    #[must_use]
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| x[i] >= self.lo[i] - tol && x[i] <= self.hi[i] + tol)
    }

    /// Uniform draw.
    #[must_use]
    pub fn sample_uniform(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| rng.gen_range(self.lo[i]..=self.hi[i]))
    }
}

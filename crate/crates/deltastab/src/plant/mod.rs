//! Continuous-time plants and the utilities for interrogating them.
//!
//! The toolkit treats the system under study as a black box: the only access
//! it ever needs is the ability to query the vector field `f(x, u)` at points
//! of its choosing. The [`Plant`] trait captures exactly that contract.
//!
//! Besides the trait this module ships:
//!
//! - the four built-in benchmark systems used throughout the guide
//!   (a scalar non-affine system, a one-link manipulator, a jet-engine
//!   surge model, and a rotating rigid spacecraft),
//! - [`ClosurePlant`] for wrapping ad-hoc dynamics in tests and experiments,
//! - [`subprocess::SubprocessPlant`] for talking to an external simulator
//!   over a line-oriented protocol,
//! - [`jacobian_u_fd`] for finite-difference input Jacobians,
//! - [`sim`] for closed-loop integration and trajectory output, and
//! - [`bounds`] for estimating the dynamics' Lipschitz constants from
//!   samples.

pub mod bounds;
pub mod sim;
pub mod subprocess;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A continuous-time control system `ẋ = f(x, u)` exposed as a black box.
///
/// Evaluation takes `&mut self` so that stateful backends (an external
/// simulator process, a cache, a query counter) fit behind the same trait as
/// pure closed-form dynamics.
pub trait Plant {
    /// State dimension `n`.
    fn dim_x(&self) -> usize;

    /// Control-input dimension `m`.
    fn dim_u(&self) -> usize;

    /// Evaluates the vector field at `(x, u)`, returning `ẋ`.
    fn eval(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Validates argument dimensions before a plant evaluation.
fn check_dims(
    context: &str,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dim_x: usize,
    dim_u: usize,
) -> Result<()> {
    if x.len() != dim_x {
        return Err(Error::DimensionMismatch {
            context: format!("{context}: state"),
            expected: dim_x,
            actual: x.len(),
        });
    }
    if u.len() != dim_u {
        return Err(Error::DimensionMismatch {
            context: format!("{context}: control input"),
            expected: dim_u,
            actual: u.len(),
        });
    }
    Ok(())
}

/// Scalar non-affine benchmark `ẋ = a (sin x + tan u)`.
///
/// The control enters through a tangent, so the system is neither
/// control-affine nor polynomial — the classic small example for methods
/// that make no structural assumptions.
#[derive(Debug, Clone, Copy)]
pub struct ScalarNonAffine {
    /// Rate constant `a`.
    pub rate: f64,
}

impl Default for ScalarNonAffine {
    /// The benchmark configuration: `a = 0.2`.
    fn default() -> Self {
        Self { rate: 0.2 }
    }
}

impl Plant for ScalarNonAffine {
    fn dim_x(&self) -> usize {
        1
    }

    fn dim_u(&self) -> usize {
        1
    }

    fn eval(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims("scalar non-affine plant", x, u, 1, 1)?;
        Ok(DVector::from_element(
            1,
            self.rate * (x[0].sin() + u[0].tan()),
        ))
    }
}

/// One-link manipulator: `ẋ₁ = x₂`, `ẋ₂ = (u − b x₂) / M`.
///
/// `x₁` is the joint angle, `x₂` the angular velocity, `u` the motor torque.
#[derive(Debug, Clone, Copy)]
pub struct OneLinkManipulator {
    /// Link inertia `M`.
    pub inertia: f64,
    /// Viscous damping coefficient `b`.
    pub damping: f64,
}

impl Default for OneLinkManipulator {
    /// The benchmark configuration: `M = 1`, `b = 0.1`.
    fn default() -> Self {
        Self {
            inertia: 1.0,
            damping: 0.1,
        }
    }
}

impl Plant for OneLinkManipulator {
    fn dim_x(&self) -> usize {
        2
    }

    fn dim_u(&self) -> usize {
        1
    }

    fn eval(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims("one-link manipulator", x, u, 2, 1)?;
        Ok(DVector::from_column_slice(&[
            x[1],
            (u[0] - self.damping * x[1]) / self.inertia,
        ]))
    }
}

/// Moore–Greitzer jet-engine surge model (no-stall mode):
/// `ẋ₁ = −x₂ − 1.5 x₁² − 0.5 x₁³`, `ẋ₂ = u`.
///
/// `x₁` is the shifted mass flow and `x₂` the shifted pressure rise.
#[derive(Debug, Clone, Copy, Default)]
pub struct JetEngine;

impl Plant for JetEngine {
    fn dim_x(&self) -> usize {
        2
    }

    fn dim_u(&self) -> usize {
        1
    }

    fn eval(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims("jet engine", x, u, 2, 1)?;
        Ok(DVector::from_column_slice(&[
            -x[1] - 1.5 * x[0] * x[0] - 0.5 * x[0] * x[0] * x[0],
            u[0],
        ]))
    }
}

/// Rotating rigid spacecraft: Euler's equations with one torque per axis,
///
/// `ẋ₁ = ((J₂ − J₃)/J₁) x₂ x₃ + u₁/J₁` and cyclic permutations, where `xᵢ`
/// are the body-frame angular velocities and `Jᵢ` the principal moments of
/// inertia.
#[derive(Debug, Clone, Copy)]
pub struct RigidSpacecraft {
    /// Principal moments of inertia `(J₁, J₂, J₃)`.
    pub inertia: [f64; 3],
}

impl Default for RigidSpacecraft {
    /// The benchmark configuration: `J = (200, 200, 100)`.
    fn default() -> Self {
        Self {
            inertia: [200.0, 200.0, 100.0],
        }
    }
}

impl Plant for RigidSpacecraft {
    fn dim_x(&self) -> usize {
        3
    }

    fn dim_u(&self) -> usize {
        3
    }

    fn eval(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims("rigid spacecraft", x, u, 3, 3)?;
        let [j1, j2, j3] = self.inertia;
        Ok(DVector::from_column_slice(&[
            (j2 - j3) / j1 * x[1] * x[2] + u[0] / j1,
            (j3 - j1) / j2 * x[2] * x[0] + u[1] / j2,
            (j1 - j2) / j3 * x[0] * x[1] + u[2] / j3,
        ]))
    }
}

/// A plant defined by a closure — the quickest way to wrap experimental
/// dynamics without declaring a new type.
pub struct ClosurePlant<F> {
    dim_x: usize,
    dim_u: usize,
    f: F,
}

impl<F> ClosurePlant<F>
where
    F: FnMut(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    /// Wraps a fallible vector field.
    pub fn new(dim_x: usize, dim_u: usize, f: F) -> Self {
        Self { dim_x, dim_u, f }
    }
}

impl ClosurePlant<Box<dyn FnMut(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>>> {
    /// Wraps an infallible vector field, boxing it behind the fallible
    /// signature.
    pub fn from_fn<G>(dim_x: usize, dim_u: usize, mut g: G) -> Self
    where
        G: FnMut(&DVector<f64>, &DVector<f64>) -> DVector<f64> + 'static,
    {
        Self {
            dim_x,
            dim_u,
            f: Box::new(move |x, u| Ok(g(x, u))),
        }
    }
}

impl<F> Plant for ClosurePlant<F>
where
    F: FnMut(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    fn dim_x(&self) -> usize {
        self.dim_x
    }

    fn dim_u(&self) -> usize {
        self.dim_u
    }

    fn eval(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims("closure plant", x, u, self.dim_x, self.dim_u)?;
        let dx = (self.f)(x, u)?;
        if dx.len() != self.dim_x {
            return Err(Error::DimensionMismatch {
                context: "closure plant: derivative".into(),
                expected: self.dim_x,
                actual: dx.len(),
            });
        }
        Ok(dx)
    }
}

/// Central-difference Jacobian of the vector field with respect to the
/// control input: column `j` approximates `∂f/∂uⱼ` with a per-component
/// relative step.
///
/// The plant is only ever *queried*, never differentiated symbolically, so
/// this works for any backend including external simulators.
pub fn jacobian_u_fd<P>(plant: &mut P, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>>
where
    P: Plant + ?Sized,
{
    check_dims("input Jacobian", x, u, plant.dim_x(), plant.dim_u())?;
    let n = plant.dim_x();
    let m = plant.dim_u();
    let mut jac = DMatrix::zeros(n, m);
    for j in 0..m {
        let step = 1e-4 * (1.0 + u[j].abs());
        let mut hi = u.clone();
        hi[j] += step;
        let mut lo = u.clone();
        lo[j] -= step;
        let f_hi = plant.eval(x, &hi)?;
        let f_lo = plant.eval(x, &lo)?;
        jac.set_column(j, &((f_hi - f_lo) / (2.0 * step)));
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn scalar_plant_matches_hand_evaluation() {
        let mut plant = ScalarNonAffine::default();
        // 0.2 * (sin 0.3 + tan 0.1), evaluated with the same libm calls the
        // implementation uses but through an independent expression.
        let x = dvector![0.3];
        let u = dvector![0.1];
        let dx = plant.eval(&x, &u).unwrap();
        let expected = 0.2 * (0.3_f64.sin() + 0.1_f64.tan());
        assert_eq!(dx.len(), 1);
        assert!((dx[0] - expected).abs() < 1e-15);
        // Spot value: sin 0.3 = 0.29552..., tan 0.1 = 0.10033...; the sum
        // scaled by 0.2 is 0.0791709...
        assert!((dx[0] - 0.079_170_975_749_358_02).abs() < 1e-12);
    }

    #[test]
    fn manipulator_matches_hand_evaluation() {
        let mut plant = OneLinkManipulator::default();
        let dx = plant.eval(&dvector![0.2, -0.4], &dvector![0.3]).unwrap();
        // ẋ₁ = x₂ = −0.4; ẋ₂ = (0.3 − 0.1·(−0.4)) / 1 = 0.34.
        assert_eq!(dx[0], -0.4);
        assert!((dx[1] - 0.34).abs() < 1e-15);
    }

    #[test]
    fn jet_engine_matches_hand_evaluation() {
        let mut plant = JetEngine;
        let dx = plant.eval(&dvector![0.2, -0.1], &dvector![0.05]).unwrap();
        // ẋ₁ = 0.1 − 1.5·0.04 − 0.5·0.008 = 0.1 − 0.06 − 0.004 = 0.036.
        assert!((dx[0] - 0.036).abs() < 1e-15);
        assert_eq!(dx[1], 0.05);
    }

    #[test]
    fn spacecraft_matches_hand_evaluation() {
        let mut plant = RigidSpacecraft::default();
        let x = dvector![0.1, -0.2, 0.05];
        let u = dvector![2.0, -1.0, 0.5];
        let dx = plant.eval(&x, &u).unwrap();
        // With J = (200, 200, 100):
        //   ẋ₁ = (200−100)/200 · (−0.2·0.05) + 2/200   = −0.005 + 0.01  = 0.005
        //   ẋ₂ = (100−200)/200 · (0.05·0.1)  + (−1)/200 = −0.0025 − 0.005 = −0.0075
        //   ẋ₃ = (200−200)/100 · (0.1·−0.2)  + 0.5/100  = 0.005
        assert!((dx[0] - 0.005).abs() < 1e-15);
        assert!((dx[1] + 0.0075).abs() < 1e-15);
        assert!((dx[2] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let mut plant = OneLinkManipulator::default();
        let err = plant
            .eval(&dvector![0.1], &dvector![0.0])
            .expect_err("short state must be rejected");
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, .. }));
        let err = plant
            .eval(&dvector![0.1, 0.2], &dvector![0.0, 0.0])
            .expect_err("wide input must be rejected");
        assert!(matches!(err, Error::DimensionMismatch { expected: 1, .. }));
    }

    #[test]
    fn closure_plant_checks_its_own_output_dimension() {
        let mut bad = ClosurePlant::from_fn(2, 1, |_, _| dvector![1.0]);
        let err = bad
            .eval(&dvector![0.0, 0.0], &dvector![0.0])
            .expect_err("derivative of wrong length must be rejected");
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 2,
                actual: 1,
                ..
            }
        ));
    }

    #[test]
    fn closure_plant_errors_propagate() {
        let mut flaky = ClosurePlant::new(1, 1, |_: &DVector<f64>, _: &DVector<f64>| {
            Err(Error::Protocol {
                detail: "backend offline".into(),
            })
        });
        let err = flaky.eval(&dvector![0.0], &dvector![0.0]).unwrap_err();
        assert!(matches!(err, Error::Protocol { .. }));
    }

    #[test]
    fn fd_input_jacobian_matches_closed_form_for_the_scalar_plant() {
        // ∂/∂u [0.2 (sin x + tan u)] = 0.2 sec² u = 0.2 / cos² u.
        let mut plant = ScalarNonAffine::default();
        for &u0 in &[0.0, 0.2, -0.45] {
            let jac = jacobian_u_fd(&mut plant, &dvector![0.7], &dvector![u0]).unwrap();
            let exact = 0.2 / (u0.cos() * u0.cos());
            assert!(
                (jac[(0, 0)] - exact).abs() < 1e-7,
                "u = {u0}: fd {} vs exact {exact}",
                jac[(0, 0)]
            );
        }
    }

    #[test]
    fn fd_input_jacobian_is_exact_for_linear_dynamics() {
        // f(x, u) = B u with B = [[2, −1], [0, 3]]: central differences on a
        // linear map are exact up to rounding, for every column.
        let mut plant = ClosurePlant::from_fn(2, 2, |_, u| {
            dvector![2.0 * u[0] - u[1], 3.0 * u[1]]
        });
        let jac = jacobian_u_fd(&mut plant, &dvector![0.0, 0.0], &dvector![0.4, -0.2]).unwrap();
        assert!((jac[(0, 0)] - 2.0).abs() < 1e-9);
        assert!((jac[(0, 1)] + 1.0).abs() < 1e-9);
        assert!((jac[(1, 0)]).abs() < 1e-9);
        assert!((jac[(1, 1)] - 3.0).abs() < 1e-9);
    }
}

//! Closed-loop integration and trajectory recording.
//!
//! The loop under study is `ẋ = f(x, g(x, w))`: at each sampling instant the
//! controller reads the state and the current external input, and the
//! resulting control value is held constant (zero-order hold) while a
//! classical fourth-order Runge–Kutta step advances the state.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::net::{FeedforwardNet, SaturationBox};

use super::Plant;

/// A sampled closed-loop run. All four columns have the same length: entry
/// `k` holds the state at `t[k]` together with the external input and the
/// control that were applied *from* `t[k]` (for the final entry they are the
/// values the controller would apply next, recorded for completeness).
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Sampling instants.
    pub t: Vec<f64>,
    /// States, one per instant.
    pub x: Vec<DVector<f64>>,
    /// Saturated control values, one per instant.
    pub u: Vec<DVector<f64>>,
    /// External inputs, one per instant.
    pub w: Vec<DVector<f64>>,
}

impl Trajectory {
    /// Number of recorded instants.
    pub fn len(&self) -> usize {
        self.t.len()
    }

    /// True when nothing was recorded.
    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Final recorded state.
    pub fn last_state(&self) -> Option<&DVector<f64>> {
        self.x.last()
    }

    /// Writes the run as CSV with header `t,x0,…,u0,…,w0,…`. Floats are
    /// printed shortest-roundtrip, so re-parsing reproduces them bit for bit.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let (nx, nu, nw) = (
            self.x.first().map_or(0, |v| v.len()),
            self.u.first().map_or(0, |v| v.len()),
            self.w.first().map_or(0, |v| v.len()),
        );
        out.push('t');
        for i in 0..nx {
            let _ = write!(out, ",x{i}");
        }
        for i in 0..nu {
            let _ = write!(out, ",u{i}");
        }
        for i in 0..nw {
            let _ = write!(out, ",w{i}");
        }
        out.push('\n');
        for k in 0..self.len() {
            let _ = write!(out, "{}", self.t[k]);
            for v in self.x[k].iter().chain(self.u[k].iter()).chain(self.w[k].iter()) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// One RK4 step of `ẋ = f(x, u)` with the control held fixed.
fn rk4_step<P>(plant: &mut P, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> Result<DVector<f64>>
where
    P: Plant + ?Sized,
{
    let k1 = plant.eval(x, u)?;
    let k2 = plant.eval(&(x + &k1 * (dt / 2.0)), u)?;
    let k3 = plant.eval(&(x + &k2 * (dt / 2.0)), u)?;
    let k4 = plant.eval(&(x + &k3 * dt), u)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Integrates the closed loop from `x0` to `t_final` with fixed step `dt`.
///
/// The external input is an arbitrary signal `w(t)`, sampled at the start of
/// each step; the controller output is clamped into `saturation` and then
/// held for the whole step. Integration fails with [`Error::Divergence`] the
/// moment a state stops being finite.
pub fn integrate_closed_loop<P>(
    plant: &mut P,
    controller: &FeedforwardNet,
    saturation: &SaturationBox,
    x0: &DVector<f64>,
    mut external: impl FnMut(f64) -> DVector<f64>,
    t_final: f64,
    dt: f64,
) -> Result<Trajectory>
where
    P: Plant + ?Sized,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidValue {
            name: "dt".into(),
            value: dt,
            requirement: "a finite positive step size".into(),
        });
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidValue {
            name: "t_final".into(),
            value: t_final,
            requirement: "a finite non-negative horizon".into(),
        });
    }
    if x0.len() != plant.dim_x() {
        return Err(Error::DimensionMismatch {
            context: "initial state".into(),
            expected: plant.dim_x(),
            actual: x0.len(),
        });
    }
    let steps = (t_final / dt).round() as usize;
    let mut traj = Trajectory {
        t: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        w: Vec::with_capacity(steps + 1),
    };
    let mut x = x0.clone();
    for k in 0..=steps {
        let t = k as f64 * dt;
        let w = external(t);
        let u = controller.saturated_forward(&x, &w, saturation)?;
        traj.t.push(t);
        traj.x.push(x.clone());
        traj.u.push(u.clone());
        traj.w.push(w);
        if k == steps {
            break;
        }
        let next = rk4_step(plant, &x, &u, dt)?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                t: t + dt,
                last_state: x.iter().copied().collect(),
            });
        }
        x = next;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;
    use crate::plant::ClosurePlant;
    use nalgebra::{dvector, DMatrix};

    /// Controller with a single affine layer `u = θ [x; w] + b` and no
    /// activation, for tests that need an exactly-known feedback law.
    fn affine_controller(theta: &[&[f64]], bias: &[f64]) -> FeedforwardNet {
        let rows = theta.len();
        let cols = theta[0].len();
        let weight =
            DMatrix::from_row_iterator(rows, cols, theta.iter().flat_map(|r| r.iter().copied()));
        let layer = crate::net::Layer {
            weight,
            bias: DVector::from_column_slice(bias),
        };
        FeedforwardNet::new(vec![layer], vec![]).unwrap()
    }

    fn wide_box(dim: usize) -> SaturationBox {
        SaturationBox::new(
            DVector::from_element(dim, -1e6),
            DVector::from_element(dim, 1e6),
        )
        .unwrap()
    }

    #[test]
    fn rk4_matches_the_exponential_to_fourth_order() {
        // ẋ = −x with u forced to zero: x(1) = e⁻¹. A fixed-step RK4 with
        // dt = 0.01 should be well inside 1e-10 of the true value.
        let mut plant = ClosurePlant::from_fn(1, 1, |x, u| dvector![-x[0] + u[0]]);
        let controller = affine_controller(&[&[0.0, 0.0]], &[0.0]);
        let sat = wide_box(1);
        let traj = integrate_closed_loop(
            &mut plant,
            &controller,
            &sat,
            &dvector![1.0],
            |_| dvector![0.0],
            1.0,
            0.01,
        )
        .unwrap();
        assert_eq!(traj.len(), 101);
        let end = traj.last_state().unwrap()[0];
        assert!(
            (end - (-1.0_f64).exp()).abs() < 1e-10,
            "x(1) = {end}, expected e^-1"
        );
    }

    #[test]
    fn rk4_error_shrinks_sixteen_fold_when_the_step_halves() {
        // Global RK4 error is O(dt⁴); halving dt should divide the error by
        // about 16. Allow a generous band because the constant is small.
        let run = |dt: f64| {
            let mut plant = ClosurePlant::from_fn(1, 1, |x, u| dvector![-x[0] + u[0]]);
            let controller = affine_controller(&[&[0.0, 0.0]], &[0.0]);
            let sat = wide_box(1);
            let traj = integrate_closed_loop(
                &mut plant,
                &controller,
                &sat,
                &dvector![1.0],
                |_| dvector![0.0],
                1.0,
                dt,
            )
            .unwrap();
            (traj.last_state().unwrap()[0] - (-1.0_f64).exp()).abs()
        };
        let coarse = run(0.1);
        let fine = run(0.05);
        let ratio = coarse / fine;
        assert!(
            (10.0..24.0).contains(&ratio),
            "error ratio {ratio} not consistent with fourth order"
        );
    }

    #[test]
    fn zero_order_hold_samples_the_external_input_at_step_starts() {
        // Pure integrator driven by u = w, with w(t) = t. Under ZOH each step
        // contributes t_k·dt exactly (RK4 is exact for a constant field), so
        // x(T) = dt² · Σ k = dt² · N(N−1)/2 — distinguishably different from
        // the continuous-sampling value T²/2.
        let mut plant = ClosurePlant::from_fn(1, 1, |_, u| dvector![u[0]]);
        let controller = affine_controller(&[&[0.0, 1.0]], &[0.0]);
        let sat = wide_box(1);
        let dt = 0.125;
        let steps = 8;
        let traj = integrate_closed_loop(
            &mut plant,
            &controller,
            &sat,
            &dvector![0.0],
            |t| dvector![t],
            dt * steps as f64,
            dt,
        )
        .unwrap();
        let expected = dt * dt * (steps * (steps - 1) / 2) as f64;
        let end = traj.last_state().unwrap()[0];
        assert!(
            (end - expected).abs() < 1e-14,
            "ZOH sum {end} vs expected {expected}"
        );
        // And the held control recorded at step k is exactly w(t_k).
        for k in 0..traj.len() {
            assert_eq!(traj.u[k][0], traj.t[k]);
        }
    }

    #[test]
    fn saturation_clips_the_applied_control() {
        // Controller asks for u = 10·w but the box allows |u| ≤ 0.5: the
        // recorded and applied control must sit on the boundary.
        let mut plant = ClosurePlant::from_fn(1, 1, |_, u| dvector![u[0]]);
        let controller = affine_controller(&[&[0.0, 10.0]], &[0.0]);
        let sat = SaturationBox::new(dvector![-0.5], dvector![0.5]).unwrap();
        let traj = integrate_closed_loop(
            &mut plant,
            &controller,
            &sat,
            &dvector![0.0],
            |_| dvector![1.0],
            0.5,
            0.1,
        )
        .unwrap();
        for u in &traj.u {
            assert_eq!(u[0], 0.5);
        }
        // x grows at the clipped rate 0.5, not the requested 10.
        let end = traj.last_state().unwrap()[0];
        assert!((end - 0.25).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_reported_with_the_blow_up_time() {
        // ẋ = x² from x₀ = 1 escapes to infinity at t = 1; the integrator
        // must fail with a Divergence error before reaching the horizon.
        let mut plant = ClosurePlant::from_fn(1, 1, |x, _| dvector![x[0] * x[0]]);
        let controller = affine_controller(&[&[0.0, 0.0]], &[0.0]);
        let sat = wide_box(1);
        let err = integrate_closed_loop(
            &mut plant,
            &controller,
            &sat,
            &dvector![1.0],
            |_| dvector![0.0],
            2.0,
            0.01,
        )
        .expect_err("finite-time blow-up must be detected");
        match err {
            Error::Divergence { t, last_state } => {
                assert!(t > 0.5 && t <= 2.0, "blow-up reported at t = {t}");
                assert_eq!(last_state.len(), 1);
                assert!(last_state[0].is_finite());
            }
            other => panic!("expected Divergence, got {other}"),
        }
    }

    #[test]
    fn bad_step_sizes_are_rejected() {
        let mut plant = ClosurePlant::from_fn(1, 1, |_, _| dvector![0.0]);
        let controller = affine_controller(&[&[0.0, 0.0]], &[0.0]);
        let sat = wide_box(1);
        for dt in [0.0, -0.1, f64::NAN] {
            let err = integrate_closed_loop(
                &mut plant,
                &controller,
                &sat,
                &dvector![0.0],
                |_| dvector![0.0],
                1.0,
                dt,
            )
            .expect_err("bad dt must be rejected");
            assert!(matches!(err, Error::InvalidValue { .. }));
        }
    }

    #[test]
    fn csv_round_trips_states_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let mut plant = ScalarTestPlant;
        let controller = FeedforwardNet::with_shape(2, &[4], 1, Activation::Tanh, 7).unwrap();
        let sat = SaturationBox::new(dvector![-0.5], dvector![0.5]).unwrap();
        let traj = integrate_closed_loop(
            &mut plant,
            &controller,
            &sat,
            &dvector![0.4],
            |t| dvector![(2.0 * t).sin() * 0.3],
            0.2,
            0.05,
        )
        .unwrap();
        traj.save_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x0,u0,w0");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), traj.len());
        for (k, row) in rows.iter().enumerate() {
            let cells: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(cells.len(), 4);
            assert_eq!(cells[0], traj.t[k]);
            assert_eq!(cells[1], traj.x[k][0]);
            assert_eq!(cells[2], traj.u[k][0]);
            assert_eq!(cells[3], traj.w[k][0]);
        }
    }

    /// Stand-in plant used by the CSV test; named so the test reads clearly.
    struct ScalarTestPlant;

    impl Plant for ScalarTestPlant {
        fn dim_x(&self) -> usize {
            1
        }

        fn dim_u(&self) -> usize {
            1
        }

        fn eval(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(dvector![0.2 * (x[0].sin() + u[0].tan())])
        }
    }
}

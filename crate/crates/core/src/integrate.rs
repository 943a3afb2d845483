//! Fixed-step classic Runge–Kutta integration under piecewise-constant
//! inputs, with forward sensitivities of a single step.
//!
//! Inputs are held at their value at the left end of each step, so every
//! stage of a step sees the same `u` and `w`. Signal breakpoints must lie on
//! the step grid.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::linalg::serde_vecs;
use crate::sysmodel::{PiecewiseSignal, SystemModel};

/// States at the nodes `t0, t0 + dt, …` of a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    t0: f64,
    dt: f64,
    #[serde(with = "serde_vecs")]
    states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, states: Vec<DVector<f64>>) -> Result<Self> {
        if states.is_empty() {
            return config("a trajectory needs at least one node");
        }
        if !(dt > 0.0) {
            return config("trajectory step must be positive");
        }
        Ok(Self { t0, dt, states })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }
    pub fn len(&self) -> usize {
        self.states.len()
    }
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
    pub fn first(&self) -> &DVector<f64> {
        &self.states[0]
    }
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }
    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * (self.states.len() - 1) as f64
    }

    /// State at a grid node; off-grid queries are domain errors.
    pub fn at(&self, t: f64) -> Result<&DVector<f64>> {
        match PiecewiseSignal::steps_in(t - self.t0, self.dt) {
            Some(k) if k < self.states.len() => Ok(&self.states[k]),
            _ => Err(Error::Domain(format!(
                "t = {t} is not a node of the trajectory grid on [{}, {}]",
                self.t0,
                self.t_end()
            ))),
        }
    }

    /// CSV with header `t,x1,...,xn`, one row per node, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let n = self.states[0].len();
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",x{i}");
        }
        out.push('\n');
        for (k, x) in self.states.iter().enumerate() {
            out.push_str(&fmt_sig17(self.t0 + self.dt * k as f64));
            for v in x.iter() {
                out.push(',');
                out.push_str(&fmt_sig17(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Scientific notation with 17 significant digits (round-trips an `f64`).
pub fn fmt_sig17(v: f64) -> String {
    format!("{v:.16e}")
}

/// One classic RK4 step with `u`, `w` held constant.
pub fn rk4_step(model: &SystemModel, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = model.f(x, u, w);
    let k2 = model.f(&(x + &k1 * (0.5 * h)), u, w);
    let k3 = model.f(&(x + &k2 * (0.5 * h)), u, w);
    let k4 = model.f(&(x + &k3 * h), u, w);
    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

/// One RK4 step together with its Jacobians with respect to the initial state
/// (n×n) and the held disturbance (n×q).
///
/// The returned state is bit-identical to [`rk4_step`].
pub fn rk4_step_sensitivity(
    model: &SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
    h: f64,
) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = x.len();
    let eye = DMatrix::<f64>::identity(n, n);

    let x1 = x.clone();
    let k1 = model.f(&x1, u, w);
    let kx1 = model.jac_f_x(&x1, u, w);
    let kw1 = model.jac_f_w(&x1, u, w);

    let x2 = x + &k1 * (0.5 * h);
    let k2 = model.f(&x2, u, w);
    let a2 = model.jac_f_x(&x2, u, w);
    let kx2 = &a2 * (&eye + &kx1 * (0.5 * h));
    let kw2 = &a2 * (&kw1 * (0.5 * h)) + model.jac_f_w(&x2, u, w);

    let x3 = x + &k2 * (0.5 * h);
    let k3 = model.f(&x3, u, w);
    let a3 = model.jac_f_x(&x3, u, w);
    let kx3 = &a3 * (&eye + &kx2 * (0.5 * h));
    let kw3 = &a3 * (&kw2 * (0.5 * h)) + model.jac_f_w(&x3, u, w);

    let x4 = x + &k3 * h;
    let k4 = model.f(&x4, u, w);
    let a4 = model.jac_f_x(&x4, u, w);
    let kx4 = &a4 * (&eye + &kx3 * h);
    let kw4 = &a4 * (&kw3 * h) + model.jac_f_w(&x4, u, w);

    let next = x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    let phi_x = &eye + (kx1 + (kx2 + kx3) * 2.0 + kx4) * (h / 6.0);
    let phi_w = (kw1 + (kw2 + kw3) * 2.0 + kw4) * (h / 6.0);
    (next, phi_x, phi_w)
}

/// Checks that `sig` covers `[t0, t0 + steps·dt)` with breakpoints on the grid.
fn check_signal(name: &str, sig: &PiecewiseSignal, dim: usize, t0: f64, steps: usize, dt: f64) -> Result<()> {
    if sig.dim() != dim {
        return config(format!("{name} has dimension {}, expected {dim}", sig.dim()));
    }
    if PiecewiseSignal::steps_in(sig.dt(), dt).is_none_or(|k| k == 0) {
        return config(format!("step {dt} does not divide the {name} step {}", sig.dt()));
    }
    if PiecewiseSignal::steps_in(t0 - sig.t0(), dt).is_none() {
        return config(format!("{name} grid is not aligned with t0 = {t0}"));
    }
    let t1 = t0 + dt * steps as f64;
    if steps > 0 && (t0 < sig.t0() - 1e-9 * dt || t1 > sig.t_end() + 1e-9 * dt) {
        return config(format!(
            "{name} covers [{}, {}) but [{t0}, {t1}) is required",
            sig.t0(),
            sig.t_end()
        ));
    }
    Ok(())
}

fn input_at(model: &SystemModel, u: &PiecewiseSignal, t: f64) -> Result<DVector<f64>> {
    if model.input_dim() == 0 {
        Ok(model.no_input())
    } else {
        u.eval(t).cloned()
    }
}

/// Integrates `ẋ = f(x, u, w)` from `chi` at `t0` to `t1` with step `dt`.
///
/// For models without controls (`m = 0`) the `u` argument is ignored.
pub fn integrate(
    model: &SystemModel,
    chi: &DVector<f64>,
    u: &PiecewiseSignal,
    w: &PiecewiseSignal,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return config("integration step must be positive");
    }
    if chi.len() != model.state_dim() {
        return config(format!("initial state has dimension {}, expected {}", chi.len(), model.state_dim()));
    }
    let Some(steps) = PiecewiseSignal::steps_in(t1 - t0, dt) else {
        return config(format!("interval [{t0}, {t1}] is not a multiple of the step {dt}"));
    };
    if model.input_dim() > 0 {
        check_signal("control signal", u, model.input_dim(), t0, steps, dt)?;
    }
    check_signal("disturbance signal", w, model.dist_dim(), t0, steps, dt)?;

    let mut states = Vec::with_capacity(steps + 1);
    states.push(chi.clone());
    for k in 0..steps {
        let t = t0 + dt * k as f64;
        let uk = input_at(model, u, t)?;
        let wk = w.eval(t)?;
        let next = rk4_step(model, &states[k], &uk, wk, dt);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t + dt });
        }
        states.push(next);
    }
    Trajectory::new(t0, dt, states)
}

/// Output samples `h(x(t_k), u(t_k), w(t_k))` taken at the left node of each
/// step of `traj`.
pub fn output_along(
    model: &SystemModel,
    traj: &Trajectory,
    u: &PiecewiseSignal,
    w: &PiecewiseSignal,
) -> Result<PiecewiseSignal> {
    let steps = traj.len() - 1;
    if model.input_dim() > 0 {
        check_signal("control signal", u, model.input_dim(), traj.t0(), steps, traj.dt())?;
    }
    check_signal("disturbance signal", w, model.dist_dim(), traj.t0(), steps, traj.dt())?;
    let values = (0..steps)
        .map(|k| {
            let t = traj.t0() + traj.dt() * k as f64;
            Ok(model.h(&traj.states()[k], &input_at(model, u, t)?, w.eval(t)?))
        })
        .collect::<Result<Vec<_>>>()?;
    PiecewiseSignal::new(traj.t0(), traj.dt(), model.output_dim(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::{batch_reactor, PolynomialModelFile};
    use approx::assert_relative_eq;

    fn decay() -> SystemModel {
        PolynomialModelFile::from_json(
            r#"{"name": "decay", "state_dim": 1, "dist_dim": 1, "output_dim": 1,
                "f": [[{"coeff": -1.0, "x": [1]}, {"coeff": 1.0, "w": [1]}]],
                "h": [[{"coeff": 1.0, "x": [1]}]]}"#,
        )
        .unwrap()
        .build()
        .unwrap()
    }

    fn zeros(len: usize, dim: usize) -> PiecewiseSignal {
        PiecewiseSignal::zeros(0.0, 0.01, len, dim).unwrap()
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let m = decay();
        let x0 = DVector::from_element(1, 1.0);
        let traj = integrate(&m, &x0, &zeros(0, 0), &zeros(100, 1), 0.0, 1.0, 0.01).unwrap();
        assert_relative_eq!(traj.last()[0], (-1.0f64).exp(), epsilon = 1e-8);
        assert_eq!(traj.len(), 101);
    }

    #[test]
    fn zero_length_interval_returns_initial_state() {
        let m = batch_reactor();
        let x0 = DVector::from_vec(vec![3.0, 1.0]);
        let traj = integrate(&m, &x0, &zeros(0, 0), &zeros(10, 3), 0.0, 0.0, 0.01).unwrap();
        assert_eq!(traj.states(), &[x0]);
    }

    #[test]
    fn single_reactor_step_agrees_with_richardson_reference() {
        let m = batch_reactor();
        let x0 = DVector::from_vec(vec![3.0, 1.0]);
        let w = zeros(1, 3);
        let coarse = integrate(&m, &x0, &zeros(0, 0), &w, 0.0, 0.01, 0.01).unwrap();
        let half = integrate(&m, &x0, &zeros(0, 0), &w, 0.0, 0.01, 0.005).unwrap();
        let quarter = integrate(&m, &x0, &zeros(0, 0), &w, 0.0, 0.01, 0.0025).unwrap();
        // Richardson extrapolation of the two finer solutions (order 4).
        let reference = quarter.last() + (quarter.last() - half.last()) / 15.0;
        assert_relative_eq!(coarse.last(), &reference, epsilon = 1e-9);
    }

    #[test]
    fn rejects_non_divisible_interval() {
        let m = decay();
        let x0 = DVector::from_element(1, 1.0);
        let res = integrate(&m, &x0, &zeros(0, 0), &zeros(100, 1), 0.0, 0.015, 0.01);
        assert!(matches!(res, Err(Error::Config(_))));
    }

    #[test]
    fn rejects_uncovered_disturbance() {
        let m = decay();
        let x0 = DVector::from_element(1, 1.0);
        let res = integrate(&m, &x0, &zeros(0, 0), &zeros(5, 1), 0.0, 0.1, 0.01);
        assert!(matches!(res, Err(Error::Config(_))));
    }

    #[test]
    fn divergence_reports_time() {
        let m = PolynomialModelFile::from_json(
            r#"{"name": "blowup", "state_dim": 1, "dist_dim": 1, "output_dim": 1,
                "f": [[{"coeff": 1.0, "x": [3]}]],
                "h": [[{"coeff": 1.0, "x": [1]}]]}"#,
        )
        .unwrap()
        .build()
        .unwrap();
        let x0 = DVector::from_element(1, 1e3);
        let res = integrate(&m, &x0, &zeros(0, 0), &zeros(100, 1), 0.0, 1.0, 0.01);
        assert!(matches!(res, Err(Error::Divergence { time }) if time > 0.0));
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        let m = batch_reactor();
        let x = DVector::from_vec(vec![2.0, 1.5]);
        let w = DVector::from_vec(vec![0.05, -0.02, 0.01]);
        let u = m.no_input();
        let (next, phi_x, phi_w) = rk4_step_sensitivity(&m, &x, &u, &w, 0.01);
        assert_eq!(next, rk4_step(&m, &x, &u, &w, 0.01));
        let fd_x = crate::sysmodel::central_difference(|v| rk4_step(&m, v, &u, &w, 0.01), &x);
        let fd_w = crate::sysmodel::central_difference(|v| rk4_step(&m, &x, &u, v, 0.01), &w);
        assert_relative_eq!(phi_x, fd_x, epsilon = 1e-9);
        assert_relative_eq!(phi_w, fd_w, epsilon = 1e-9);
    }

    #[test]
    fn output_of_constant_state() {
        let m = batch_reactor();
        let traj = Trajectory::new(0.0, 0.01, vec![DVector::from_vec(vec![3.0, 1.0]); 4]).unwrap();
        let y = output_along(&m, &traj, &zeros(0, 0), &zeros(3, 3)).unwrap();
        assert!(y.values().iter().all(|v| v[0] == 4.0));
        let noisy = PiecewiseSignal::constant(0.0, 0.01, 3, DVector::from_vec(vec![0.0, 0.0, 0.1])).unwrap();
        let y = output_along(&m, &traj, &zeros(0, 0), &noisy).unwrap();
        assert!(y.values().iter().all(|v| (v[0] - 4.1).abs() < 1e-15));
    }

    #[test]
    fn identity_output_reproduces_states() {
        let m = decay();
        let x0 = DVector::from_element(1, 2.0);
        let w = zeros(10, 1);
        let traj = integrate(&m, &x0, &zeros(0, 0), &w, 0.0, 0.1, 0.01).unwrap();
        let y = output_along(&m, &traj, &zeros(0, 0), &w).unwrap();
        for (k, v) in y.values().iter().enumerate() {
            assert_eq!(v[0], traj.states()[k][0]);
        }
    }

    #[test]
    fn output_rejects_misaligned_grid() {
        let m = decay();
        let traj = Trajectory::new(0.005, 0.01, vec![DVector::from_element(1, 1.0); 3]).unwrap();
        assert!(output_along(&m, &traj, &zeros(0, 0), &zeros(10, 1)).is_err());
    }

    #[test]
    fn csv_layout() {
        let traj = Trajectory::new(0.0, 0.5, vec![DVector::from_vec(vec![1.0, 2.0]); 2]).unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,x1,x2"));
        assert_eq!(lines.next(), Some("0.0000000000000000e0,1.0000000000000000e0,2.0000000000000000e0"));
    }
}

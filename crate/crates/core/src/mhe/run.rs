use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::sampling::EventTrigger;
use super::{make_sampler, mhe_objective, solve_mhe, MheConfig, MheSolution, SamplerSpec, SamplingSet, Termination};
use crate::error::{config, Error, Result};
use crate::integrate::{fmt_sig17, integrate, output_along, rk4_step, Trajectory};
use crate::linalg::{quad_form, serde_vec};
use crate::sysmodel::{PiecewiseSignal, SystemModel};

/// Data driving an estimation run.
#[derive(Debug, Clone)]
pub enum RunData {
    /// Simulate the plant from `chi` under `u`, `w`; the outputs follow from
    /// the model (output noise is part of `w`).
    Simulated { chi: DVector<f64>, u: PiecewiseSignal, w: PiecewiseSignal },
    Recorded { u: PiecewiseSignal, y: PiecewiseSignal },
}

/// Ground truth of a simulated run on the `dt` grid.
#[derive(Debug, Clone)]
pub struct Truth {
    pub x: Trajectory,
    pub w: PiecewiseSignal,
}

/// One sampling time of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t_i: f64,
    /// Grid index of `t_i`.
    pub index: usize,
    /// `T_tᵢ`.
    pub window: f64,
    /// `x̂(tᵢ − T_tᵢ)` as read from the stored estimate.
    #[serde(with = "serde_vec")]
    pub prior: DVector<f64>,
    pub cost: f64,
    /// Objective at the true window start and true disturbance, when known.
    pub truth_cost: Option<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub termination: Option<Termination>,
    pub flagged: bool,
    pub wall_time: f64,
    pub error: Option<String>,
}

/// Result of [`run_mhe`].
#[derive(Debug, Clone)]
pub struct EstimationRun {
    pub chi_hat: DVector<f64>,
    /// Concatenated estimate `x̂` on `[0, t_N]`.
    pub estimate: Trajectory,
    /// Per node of `estimate`: produced by a flagged or failed solve.
    pub flags: Vec<bool>,
    pub sampling: SamplingSet,
    pub records: Vec<SampleRecord>,
    /// Optimal windows; `None` where the solve failed.
    pub solutions: Vec<Option<MheSolution>>,
    pub u: PiecewiseSignal,
    pub y: PiecewiseSignal,
    pub truth: Option<Truth>,
}

/// Runs the receding-horizon loop on `(0, t_sim]` starting from `x̂(0) = chi_hat`.
///
/// Failed solves are recorded and the last estimate is held; the run never
/// stops early.
pub fn run_mhe(
    model: &SystemModel,
    cfg: &MheConfig,
    chi_hat: &DVector<f64>,
    data: &RunData,
    t_sim: f64,
) -> Result<EstimationRun> {
    cfg.validate(model)?;
    let dt = cfg.dt;
    if chi_hat.len() != model.state_dim() {
        return config("initial estimate has the wrong dimension");
    }
    let Some(last) = PiecewiseSignal::steps_in(t_sim, dt) else {
        return config(format!("t_sim = {t_sim} is not a multiple of dt = {dt}"));
    };

    let (u, y, truth) = match data {
        RunData::Simulated { chi, u, w } => {
            let w = w.refine(dt)?;
            let x = integrate(model, chi, u, &w, 0.0, t_sim, dt)?;
            let y = output_along(model, &x, u, &w)?;
            (u.clone(), y, Some(Truth { x, w }))
        }
        RunData::Recorded { u, y } => (u.clone(), y.clone(), None),
    };

    let nt = cfg.horizon_steps()?;
    let mut xhat: Vec<Option<DVector<f64>>> = vec![None; last + 1];
    let mut flags = vec![false; last + 1];
    xhat[0] = Some(chi_hat.clone());

    let fixed = match &cfg.sampler {
        SamplerSpec::EventTriggered { .. } => None,
        spec => {
            let set = make_sampler(spec, t_sim, dt, None)?;
            cfg.validate_sampling(&set)?;
            Some(set)
        }
    };
    let trigger = match &cfg.sampler {
        SamplerSpec::EventTriggered { threshold, min_gap, max_gap } => {
            Some(EventTrigger::new(*threshold, *min_gap, *max_gap, dt)?)
        }
        _ => None,
    };

    let mut records = Vec::new();
    let mut solutions: Vec<Option<MheSolution>> = Vec::new();
    let mut indices = Vec::new();
    let mut warm: Option<MheSolution> = None;
    let mut prev = 0usize;
    loop {
        let next = match (&fixed, &trigger) {
            (Some(set), _) => set.indices().get(indices.len()).copied(),
            (None, Some(trig)) => {
                let from = xhat[prev].clone().expect("estimate stored up to the last sample");
                let energy = innovation_energy(model, cfg, &u, &y, &from, prev, (prev + trig.max_steps).min(last))?;
                trig.next(prev, last, |k| energy[k - prev])
            }
            (None, None) => unreachable!("sampler is either fixed or event triggered"),
        };
        let Some(k) = next else { break };
        if k - prev >= nt {
            return Err(Error::Horizon(format!(
                "sampling gap {} reaches the horizon T = {}",
                (k - prev) as f64 * dt,
                cfg.horizon
            )));
        }
        let start = k - k.min(nt);
        let prior = xhat[start].clone().expect("window start precedes the previous sample");
        let t_i = k as f64 * dt;
        let clock = Instant::now();
        let result = solve_mhe(model, cfg, &prior, &u, &y, t_i, warm.as_ref());
        let wall_time = clock.elapsed().as_secs_f64();
        let mut rec = SampleRecord {
            t_i,
            index: k,
            window: (k - start) as f64 * dt,
            prior,
            cost: f64::NAN,
            truth_cost: None,
            iterations: 0,
            grad_norm: f64::NAN,
            termination: None,
            flagged: true,
            wall_time,
            error: None,
        };
        match result {
            Ok(sol) => {
                rec.cost = sol.cost;
                rec.iterations = sol.stats.iterations;
                rec.grad_norm = sol.stats.grad_norm;
                rec.termination = Some(sol.stats.termination);
                rec.flagged = sol.stats.flagged(cfg.solver.constraint_tol);
                if let Some(tr) = &truth {
                    rec.truth_cost = Some(truth_cost(model, cfg, tr, &u, &y, &sol, start, k)?);
                }
                for j in prev + 1..=k {
                    xhat[j] = Some(sol.x_star.states()[j - start].clone());
                    flags[j] = rec.flagged;
                }
                solutions.push(Some(sol.clone()));
                warm = Some(sol);
            }
            Err(e) => {
                rec.error = Some(e.to_string());
                let held = xhat[prev].clone();
                for j in prev + 1..=k {
                    xhat[j] = held.clone();
                    flags[j] = true;
                }
                solutions.push(None);
            }
        }
        records.push(rec);
        indices.push(k);
        prev = k;
    }

    let sampling = SamplingSet::from_indices(indices, dt)?;
    if fixed.is_none() {
        cfg.validate_sampling(&sampling)?;
    }
    let states = xhat.into_iter().take(prev + 1).map(|x| x.expect("estimate is contiguous")).collect();
    flags.truncate(prev + 1);
    Ok(EstimationRun {
        chi_hat: chi_hat.clone(),
        estimate: Trajectory::new(0.0, dt, states)?,
        flags,
        sampling,
        records,
        solutions,
        u,
        y,
        truth,
    })
}

/// Cumulative `Σ dt·|y_k − h(x_pred,k, u_k, 0)|²_R` from `from_k` up to each
/// index in `from_k..=to_k`, with `x_pred` the nominal prediction from `x0`.
fn innovation_energy(
    model: &SystemModel,
    cfg: &MheConfig,
    u: &PiecewiseSignal,
    y: &PiecewiseSignal,
    x0: &DVector<f64>,
    from_k: usize,
    to_k: usize,
) -> Result<Vec<f64>> {
    let dt = cfg.dt;
    let w0 = DVector::zeros(model.dist_dim());
    let mut x = x0.clone();
    let mut out = vec![0.0];
    for k in from_k..to_k {
        let t = k as f64 * dt;
        let uk = if model.input_dim() == 0 { model.no_input() } else { u.eval(t)?.clone() };
        let dy = y.eval(t)? - model.h(&x, &uk, &w0);
        out.push(out.last().unwrap() + dt * quad_form(&dy, cfg.cert.r()));
        x = rk4_step(model, &x, &uk, &w0, dt);
        if x.iter().any(|v| !v.is_finite()) {
            // A diverged prediction makes any innovation large.
            out.resize(to_k - from_k + 1, f64::INFINITY);
            break;
        }
    }
    Ok(out)
}

/// Objective of the window `[start, k]` at the true initial state and true
/// disturbance, with the prior the solver used.
#[allow(clippy::too_many_arguments)]
fn truth_cost(
    model: &SystemModel,
    cfg: &MheConfig,
    truth: &Truth,
    u: &PiecewiseSignal,
    y: &PiecewiseSignal,
    sol: &MheSolution,
    start: usize,
    k: usize,
) -> Result<f64> {
    let dt = cfg.dt;
    let t0 = start as f64 * dt;
    let steps = k - start;
    let chi = &truth.x.states()[start];
    let w = window_signal(&truth.w, t0, steps, dt)?;
    let y_meas = window_signal(y, t0, steps, dt)?;
    let x = integrate(model, chi, u, &w, t0, k as f64 * dt, dt)?;
    let y_est = output_along(model, &x, u, &w)?;
    mhe_objective(cfg, &sol.prior, chi, &w, &y_meas, &y_est, steps as f64 * dt)
}

fn window_signal(s: &PiecewiseSignal, t0: f64, steps: usize, dt: f64) -> Result<PiecewiseSignal> {
    let values = (0..steps).map(|j| s.eval(t0 + j as f64 * dt).cloned()).collect::<Result<Vec<_>>>()?;
    PiecewiseSignal::new(t0, dt, s.dim(), values)
}

impl EstimationRun {
    /// `t,x1..xn,flag`.
    pub fn estimate_csv(&self) -> String {
        let n = self.chi_hat.len();
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",x{i}");
        }
        out.push_str(",flag\n");
        for (k, x) in self.estimate.states().iter().enumerate() {
            out.push_str(&fmt_sig17(self.estimate.t0() + self.estimate.dt() * k as f64));
            for v in x.iter() {
                let _ = write!(out, ",{}", fmt_sig17(*v));
            }
            let _ = writeln!(out, ",{}", u8::from(self.flags[k]));
        }
        out
    }

    /// One row per sampling time. The `wall_time` column is last.
    pub fn samples_csv(&self) -> String {
        let mut out =
            String::from("t_i,window,cost,truth_cost,iterations,grad_norm,termination,flagged,error,wall_time\n");
        for r in &self.records {
            let term = r.termination.map_or("failed".to_string(), |t| {
                serde_json::to_value(t).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
            });
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_sig17(r.t_i),
                fmt_sig17(r.window),
                fmt_sig17(r.cost),
                r.truth_cost.map_or(String::new(), fmt_sig17),
                r.iterations,
                fmt_sig17(r.grad_norm),
                term,
                u8::from(r.flagged),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
                fmt_sig17(r.wall_time),
            );
        }
        out
    }

    /// `t,x1..xn,w1..wq,y1..yp` on the simulation grid, when simulated.
    pub fn truth_csv(&self) -> Option<String> {
        let truth = self.truth.as_ref()?;
        let (n, q, p) = (truth.x.states()[0].len(), truth.w.dim(), self.y.dim());
        let mut out = String::from("t");
        for (name, d) in [("x", n), ("w", q), ("y", p)] {
            for i in 1..=d {
                let _ = write!(out, ",{name}{i}");
            }
        }
        out.push('\n');
        for k in 0..truth.x.len() - 1 {
            let t = truth.x.t0() + truth.x.dt() * k as f64;
            out.push_str(&fmt_sig17(t));
            let w = truth.w.eval(t).ok()?;
            let y = self.y.eval(t).ok()?;
            for v in truth.x.states()[k].iter().chain(w.iter()).chain(y.iter()) {
                let _ = write!(out, ",{}", fmt_sig17(*v));
            }
            out.push('\n');
        }
        Some(out)
    }
}

//! Window solver: projected Levenberg–Marquardt on the stacked residual
//!
//! ```text
//! r = [ √(2λ^T)·P₂^{1/2}(χ − prior) ;  √(2ω_j)·Q^{1/2} w_j ;  √ω_j·R^{1/2}(y_j − h(x_j, u_j, w_j)) ;  penalty ]
//! ```
//!
//! with `x_{j+1} = RK4(x_j, u_j, w_j)` and `x_0 = χ`. Each damped Gauss–Newton
//! step is the exact minimizer of the linearized problem, obtained with a
//! backward Riccati recursion over the window. Box constraints on `χ` and
//! `w_j` are handled by projection with an active set; constraints on the
//! eliminated states `x_1 … x_N` by an augmented quadratic penalty.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{mhe_objective, MheConfig, SolverOptions};
use crate::error::{config, Error, Result};
use crate::integrate::{integrate, output_along, rk4_step, rk4_step_sensitivity, Trajectory};
use crate::linalg::{serde_vec, sqrt_factor, symmetrize};
use crate::quadrature::piece_weights;
use crate::sysmodel::{BoxSet, PiecewiseSignal, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    Stalled,
    /// Zero-length window: the estimate is the prior.
    EmptyWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    /// 2-norm of the projected gradient of the merit function at the end.
    pub grad_norm: f64,
    pub termination: Termination,
    /// Largest box violation over the shooting-node states.
    pub constraint_violation: f64,
    pub penalty_rounds: usize,
    /// The prior was outside 𝒳 and has been projected.
    pub prior_projected: bool,
    /// Merit values of the accepted iterates, one list per penalty round.
    pub merit_history: Vec<Vec<f64>>,
}

impl SolverStats {
    /// Not converged, or constraints violated beyond `constraint_tol`.
    pub fn flagged(&self, constraint_tol: f64) -> bool {
        !matches!(self.termination, Termination::Converged | Termination::EmptyWindow)
            || self.constraint_violation > constraint_tol
    }
}

/// Optimal window at sampling time `t_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MheSolution {
    pub t_i: f64,
    /// Window length `T_tᵢ`.
    pub window: f64,
    /// Prior used in the objective (after projection onto 𝒳).
    #[serde(with = "serde_vec")]
    pub prior: DVector<f64>,
    #[serde(with = "serde_vec")]
    pub chi_star: DVector<f64>,
    pub w_star: PiecewiseSignal,
    pub x_star: Trajectory,
    pub y_star: PiecewiseSignal,
    pub cost: f64,
    pub stats: SolverStats,
}

impl MheSolution {
    pub fn estimate(&self) -> &DVector<f64> {
        self.x_star.last()
    }
}

/// Solves the window `[tᵢ − T_tᵢ, tᵢ]`, `T_tᵢ = min{tᵢ, T}`.
///
/// `u` and `y` are signals in absolute time covering the window. A previous
/// solution, if given, is shifted onto the new window as the initial guess;
/// otherwise the solver starts from `χ = prior`, `w = 0`.
#[allow(clippy::too_many_arguments)]
pub fn solve_mhe(
    model: &SystemModel,
    cfg: &MheConfig,
    prior: &DVector<f64>,
    u: &PiecewiseSignal,
    y: &PiecewiseSignal,
    t_i: f64,
    warm: Option<&MheSolution>,
) -> Result<MheSolution> {
    let end = sample_index(t_i, cfg.dt)?;
    let steps = end.min(cfg.horizon_steps()?);
    solve_window(model, cfg, prior, u, y, end - steps, steps, warm)
}

/// Full-information estimate: the window always starts at 0 with prior `χ̂`.
#[allow(clippy::too_many_arguments)]
pub fn solve_fie(
    model: &SystemModel,
    cfg: &MheConfig,
    chi_hat: &DVector<f64>,
    u: &PiecewiseSignal,
    y: &PiecewiseSignal,
    t_i: f64,
    warm: Option<&MheSolution>,
) -> Result<MheSolution> {
    let end = sample_index(t_i, cfg.dt)?;
    solve_window(model, cfg, chi_hat, u, y, 0, end, warm)
}

fn sample_index(t_i: f64, dt: f64) -> Result<usize> {
    PiecewiseSignal::steps_in(t_i, dt)
        .ok_or_else(|| Error::Config(format!("t_i = {t_i} is not a multiple of dt = {dt}")))
}

/// Solves the window of `steps` grid steps starting at grid index `start`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn solve_window(
    model: &SystemModel,
    cfg: &MheConfig,
    prior: &DVector<f64>,
    u: &PiecewiseSignal,
    y: &PiecewiseSignal,
    start: usize,
    steps: usize,
    warm: Option<&MheSolution>,
) -> Result<MheSolution> {
    let (n, nq) = (model.state_dim(), model.dist_dim());
    if prior.len() != n {
        return config(format!("prior has dimension {}, expected {n}", prior.len()));
    }
    if y.dim() != model.output_dim() {
        return config("measurement dimension does not match the model");
    }
    let dt = cfg.dt;
    let t0 = start as f64 * dt;
    let t_i = (start + steps) as f64 * dt;
    let window = steps as f64 * dt;
    let opts = &cfg.solver;

    let xbox = model.state_box();
    let prior_projected = xbox.violation(prior) > opts.constraint_tol;
    let prior = xbox.project(prior);

    let mut us = Vec::with_capacity(steps);
    let mut ys = Vec::with_capacity(steps);
    for j in 0..steps {
        let t = t0 + j as f64 * dt;
        us.push(if model.input_dim() == 0 { model.no_input() } else { u.eval(t)?.clone() });
        ys.push(y.eval(t)?.clone());
    }
    let y_meas = PiecewiseSignal::new(t0, dt, model.output_dim(), ys.clone())?;

    let cert = &cfg.cert;
    let omega = piece_weights(cert.lambda(), dt, steps);
    let mut win = Window {
        model,
        n,
        steps,
        dt,
        u: us,
        y: ys,
        up: sqrt_factor(cert.p2())? * (2.0 * cert.lambda().powf(window)).sqrt(),
        uq: sqrt_factor(cert.q())?,
        ur: sqrt_factor(cert.r())?,
        sw: omega.iter().map(|o| (2.0 * o).sqrt()).collect(),
        sy: omega.iter().map(|o| o.sqrt()).collect(),
        prior: prior.clone(),
        xbox,
        wbox: model.dist_box(),
        rho: opts.penalty,
        nu_lo: vec![DVector::zeros(n); steps],
        nu_hi: vec![DVector::zeros(n); steps],
    };

    let mut stats = SolverStats {
        iterations: 0,
        grad_norm: 0.0,
        termination: Termination::EmptyWindow,
        constraint_violation: 0.0,
        penalty_rounds: 0,
        prior_projected,
        merit_history: Vec::new(),
    };

    let (chi, w) = if steps == 0 {
        (prior.clone(), Vec::new())
    } else {
        let (chi0, w0) = initial_guess(&win, warm, t0, nq);
        let mut it = match win.iterate(chi0, w0) {
            Some(it) => it,
            None => win
                .iterate(prior.clone(), vec![DVector::zeros(nq); steps])
                .ok_or(Error::Divergence { time: t0 })?,
        };
        let mut last_violation = f64::INFINITY;
        loop {
            let mut history = vec![it.merit];
            let (term, iters, grad) = win.lm_round(&mut it, opts, &mut history);
            stats.iterations += iters;
            stats.grad_norm = grad;
            stats.termination = term;
            stats.merit_history.push(history);
            stats.penalty_rounds += 1;
            let violation = win.violation(&it.states);
            stats.constraint_violation = violation;
            if violation <= opts.constraint_tol || stats.penalty_rounds >= opts.max_penalty_rounds {
                break;
            }
            win.update_multipliers(&it.states);
            if violation > 0.25 * last_violation {
                win.rho *= 2.0;
            }
            last_violation = violation;
            it.merit = win.merit(&it.chi, &it.w, &it.states);
        }
        (it.chi, it.w)
    };

    let w_star = PiecewiseSignal::new(t0, dt, nq, w)?;
    let x_star = integrate(model, &chi, u, &w_star, t0, t_i, dt)?;
    let y_star = output_along(model, &x_star, u, &w_star)?;
    stats.constraint_violation = x_star.states()[1..].iter().map(|x| xbox.violation(x)).fold(0.0, f64::max);
    let cost = mhe_objective(cfg, &prior, &chi, &w_star, &y_meas, &y_star, window)?;
    Ok(MheSolution { t_i, window, prior, chi_star: chi, w_star, x_star, y_star, cost, stats })
}

fn initial_guess(
    win: &Window,
    warm: Option<&MheSolution>,
    t0: f64,
    nq: usize,
) -> (DVector<f64>, Vec<DVector<f64>>) {
    let chi = warm
        .and_then(|s| s.x_star.at(t0).ok().cloned())
        .unwrap_or_else(|| win.prior.clone());
    let w = (0..win.steps)
        .map(|j| {
            // Previous disturbance at the piece midpoint, zero where it has none.
            let t = t0 + (j as f64 + 0.5) * win.dt;
            let v = warm
                .and_then(|s| s.w_star.eval(t).ok().cloned())
                .unwrap_or_else(|| DVector::zeros(nq));
            win.wbox.project(&v)
        })
        .collect();
    (win.xbox.project(&chi), w)
}

struct Window<'a> {
    model: &'a SystemModel,
    n: usize,
    steps: usize,
    dt: f64,
    u: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    /// `√(2λ^T) P₂^{1/2}`.
    up: DMatrix<f64>,
    uq: DMatrix<f64>,
    ur: DMatrix<f64>,
    /// `√(2ω_j)` and `√ω_j`.
    sw: Vec<f64>,
    sy: Vec<f64>,
    prior: DVector<f64>,
    xbox: &'a BoxSet,
    wbox: &'a BoxSet,
    rho: f64,
    /// Multiplier estimates for the bounds at nodes `1..=N` (index `k − 1`).
    nu_lo: Vec<DVector<f64>>,
    nu_hi: Vec<DVector<f64>>,
}

struct Iterate {
    chi: DVector<f64>,
    w: Vec<DVector<f64>>,
    states: Vec<DVector<f64>>,
    merit: f64,
}

/// Residual linearization at an iterate.
struct Lin {
    phix: Vec<DMatrix<f64>>,
    phiw: Vec<DMatrix<f64>>,
    a0: DVector<f64>,
    swm: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    c: Vec<DVector<f64>>,
    cx: Vec<DMatrix<f64>>,
    cw: Vec<DMatrix<f64>>,
    /// Penalty curvature (diagonal) and half gradient at nodes `1..=N`.
    pen_d: Vec<DVector<f64>>,
    pen_g: Vec<DVector<f64>>,
}

/// A direction in `(χ, w)`.
struct Step {
    chi: DVector<f64>,
    w: Vec<DVector<f64>>,
}

impl Step {
    fn dot(&self, other: &Step) -> f64 {
        self.chi.dot(&other.chi) + self.w.iter().zip(&other.w).map(|(a, b)| a.dot(b)).sum::<f64>()
    }
}

/// Index sets of the components allowed to move.
struct FreeSet {
    chi: Vec<usize>,
    w: Vec<Vec<usize>>,
}

fn scatter(free: &[usize], v: &DVector<f64>, dim: usize) -> DVector<f64> {
    let mut out = DVector::zeros(dim);
    for (&i, &x) in free.iter().zip(v.iter()) {
        out[i] = x;
    }
    out
}

/// Bertsekas' ε-active rule: fixed when within `eps` of a bound and the
/// gradient points outward.
fn is_fixed(v: f64, g: f64, lo: f64, hi: f64, eps: f64) -> bool {
    (v - lo <= eps && g > 0.0) || (hi - v <= eps && g < 0.0)
}

fn projected_sq(v: &DVector<f64>, g: &DVector<f64>, bx: &BoxSet) -> f64 {
    (0..v.len())
        .map(|i| {
            let p = (v[i] - g[i]).clamp(bx.lower()[i], bx.upper()[i]);
            (p - v[i]).powi(2)
        })
        .sum()
}

impl Window<'_> {
    fn simulate(&self, chi: &DVector<f64>, w: &[DVector<f64>]) -> Option<Vec<DVector<f64>>> {
        let mut states = Vec::with_capacity(self.steps + 1);
        states.push(chi.clone());
        for j in 0..self.steps {
            let next = rk4_step(self.model, &states[j], &self.u[j], &w[j], self.dt);
            if next.iter().any(|v| !v.is_finite()) {
                return None;
            }
            states.push(next);
        }
        Some(states)
    }

    fn iterate(&self, chi: DVector<f64>, w: Vec<DVector<f64>>) -> Option<Iterate> {
        let states = self.simulate(&chi, &w)?;
        let merit = self.merit(&chi, &w, &states);
        merit.is_finite().then_some(Iterate { chi, w, states, merit })
    }

    /// Shifted constraint values `lo − x + ν/2ρ` and `x − hi + ν/2ρ` at node `k`.
    fn shifts(&self, k: usize, i: usize, x: f64) -> (f64, f64) {
        let c = 0.5 / self.rho;
        (
            self.xbox.lower()[i] - x + c * self.nu_lo[k - 1][i],
            x - self.xbox.upper()[i] + c * self.nu_hi[k - 1][i],
        )
    }

    fn merit(&self, chi: &DVector<f64>, w: &[DVector<f64>], states: &[DVector<f64>]) -> f64 {
        let mut m = (&self.up * (chi - &self.prior)).norm_squared();
        for j in 0..self.steps {
            m += (&self.uq * &w[j]).norm_squared() * self.sw[j].powi(2);
            let dy = &self.y[j] - self.model.h(&states[j], &self.u[j], &w[j]);
            m += (&self.ur * dy).norm_squared() * self.sy[j].powi(2);
        }
        for (k, x) in states.iter().enumerate().skip(1) {
            for i in 0..self.n {
                let (lo, hi) = self.shifts(k, i, x[i]);
                m += self.rho * (lo.max(0.0).powi(2) + hi.max(0.0).powi(2));
            }
        }
        m
    }

    fn violation(&self, states: &[DVector<f64>]) -> f64 {
        states[1..].iter().map(|x| self.xbox.violation(x)).fold(0.0, f64::max)
    }

    fn update_multipliers(&mut self, states: &[DVector<f64>]) {
        for (k, x) in states.iter().enumerate().skip(1) {
            for i in 0..self.n {
                let lo = self.nu_lo[k - 1][i] + 2.0 * self.rho * (self.xbox.lower()[i] - x[i]);
                let hi = self.nu_hi[k - 1][i] + 2.0 * self.rho * (x[i] - self.xbox.upper()[i]);
                self.nu_lo[k - 1][i] = lo.max(0.0);
                self.nu_hi[k - 1][i] = hi.max(0.0);
            }
        }
    }

    fn linearize(&self, it: &Iterate) -> Lin {
        let steps = self.steps;
        let mut lin = Lin {
            phix: Vec::with_capacity(steps),
            phiw: Vec::with_capacity(steps),
            a0: &self.up * (&it.chi - &self.prior),
            swm: Vec::with_capacity(steps),
            b: Vec::with_capacity(steps),
            c: Vec::with_capacity(steps),
            cx: Vec::with_capacity(steps),
            cw: Vec::with_capacity(steps),
            pen_d: Vec::with_capacity(steps),
            pen_g: Vec::with_capacity(steps),
        };
        for j in 0..steps {
            let (x, u, w) = (&it.states[j], &self.u[j], &it.w[j]);
            let (_, px, pw) = rk4_step_sensitivity(self.model, x, u, w, self.dt);
            let ry = &self.ur * self.sy[j];
            lin.c.push(&ry * (&self.y[j] - self.model.h(x, u, w)));
            lin.cx.push(-(&ry * self.model.jac_h_x(x, u, w)));
            lin.cw.push(-(&ry * self.model.jac_h_w(x, u, w)));
            let swm = &self.uq * self.sw[j];
            lin.b.push(&swm * w);
            lin.swm.push(swm);
            lin.phix.push(px);
            lin.phiw.push(pw);
        }
        for k in 1..=steps {
            let mut d = DVector::zeros(self.n);
            let mut g = DVector::zeros(self.n);
            for i in 0..self.n {
                let (lo, hi) = self.shifts(k, i, it.states[k][i]);
                if lo > 0.0 {
                    d[i] += self.rho;
                    g[i] -= self.rho * lo;
                }
                if hi > 0.0 {
                    d[i] += self.rho;
                    g[i] += self.rho * hi;
                }
            }
            lin.pen_d.push(d);
            lin.pen_g.push(g);
        }
        lin
    }

    /// `Jᵀr` by the adjoint recursion; the merit gradient is twice this.
    fn half_grad(&self, lin: &Lin) -> Step {
        let n = self.steps;
        let mut lam = lin.pen_g[n - 1].clone();
        let mut w = vec![DVector::zeros(0); n];
        for j in (0..n).rev() {
            w[j] = lin.swm[j].tr_mul(&lin.b[j]) + lin.cw[j].tr_mul(&lin.c[j]) + lin.phiw[j].tr_mul(&lam);
            let mut next = lin.cx[j].tr_mul(&lin.c[j]) + lin.phix[j].tr_mul(&lam);
            if j >= 1 {
                next += &lin.pen_g[j - 1];
            }
            lam = next;
        }
        Step { chi: self.up.tr_mul(&lin.a0) + lam, w }
    }

    /// Projected-gradient norm and the free components for the next step.
    fn active_set(&self, it: &Iterate, half: &Step) -> (f64, FreeSet) {
        let g = |v: &DVector<f64>| v * 2.0;
        let gchi = g(&half.chi);
        let gw: Vec<_> = half.w.iter().map(g).collect();
        let mut sq = projected_sq(&it.chi, &gchi, self.xbox);
        for (w, gj) in it.w.iter().zip(&gw) {
            sq += projected_sq(w, gj, self.wbox);
        }
        let pg = sq.sqrt();
        let eps = pg.min(1e-6);
        let free = |v: &DVector<f64>, gv: &DVector<f64>, bx: &BoxSet| {
            (0..v.len())
                .filter(|&i| !is_fixed(v[i], gv[i], bx.lower()[i], bx.upper()[i], eps))
                .collect::<Vec<_>>()
        };
        let set = FreeSet {
            chi: free(&it.chi, &gchi, self.xbox),
            w: it.w.iter().zip(&gw).map(|(w, gj)| free(w, gj, self.wbox)).collect(),
        };
        (pg, set)
    }

    /// Minimizer of `|r + Jδ|² + μ|δ|²` over the free components, by a
    /// backward Riccati recursion over the window.
    fn lq_step(&self, lin: &Lin, mu: f64, free: &FreeSet) -> Option<Step> {
        let (n, nq, steps) = (self.n, self.wbox.dim(), self.steps);
        let mut pm = DMatrix::from_diagonal(&lin.pen_d[steps - 1]);
        let mut pv = lin.pen_g[steps - 1].clone();
        let mut gains = Vec::with_capacity(steps);
        for j in (0..steps).rev() {
            let (a, b) = (&lin.phix[j], &lin.phiw[j]);
            let (cx, cw) = (&lin.cx[j], &lin.cw[j]);
            let pa = &pm * a;
            let pb = &pm * b;
            let mut qxx = cx.tr_mul(cx) + a.tr_mul(&pa);
            let mut qx = cx.tr_mul(&lin.c[j]) + a.tr_mul(&pv);
            if j >= 1 {
                qxx += DMatrix::from_diagonal(&lin.pen_d[j - 1]);
                qx += &lin.pen_g[j - 1];
            }
            let fj = &free.w[j];
            if fj.is_empty() {
                gains.push((DMatrix::zeros(0, n), DVector::zeros(0)));
                pm = symmetrize(&qxx);
                pv = qx;
                continue;
            }
            let quu = lin.swm[j].tr_mul(&lin.swm[j])
                + cw.tr_mul(cw)
                + b.tr_mul(&pb)
                + DMatrix::identity(nq, nq) * mu;
            let qxu = (cx.tr_mul(cw) + a.tr_mul(&pb)).select_columns(fj);
            let qu = (lin.swm[j].tr_mul(&lin.b[j]) + cw.tr_mul(&lin.c[j]) + b.tr_mul(&pv)).select_rows(fj);
            let chol = Cholesky::new(symmetrize(&quu.select_rows(fj).select_columns(fj)))?;
            let k_mat = -chol.solve(&qxu.transpose());
            let k_vec = -chol.solve(&qu);
            pm = symmetrize(&(qxx + &qxu * &k_mat));
            pv = qx + &qxu * &k_vec;
            gains.push((k_mat, k_vec));
        }
        gains.reverse();

        let mut chi = DVector::zeros(n);
        if !free.chi.is_empty() {
            let h0 = pm + self.up.tr_mul(&self.up) + DMatrix::identity(n, n) * mu;
            let g0 = pv + self.up.tr_mul(&lin.a0);
            let chol = Cholesky::new(symmetrize(&h0.select_rows(&free.chi).select_columns(&free.chi)))?;
            chi = scatter(&free.chi, &-chol.solve(&g0.select_rows(&free.chi)), n);
        }
        let mut dx = chi.clone();
        let mut w = Vec::with_capacity(steps);
        for j in 0..steps {
            let (k_mat, k_vec) = &gains[j];
            let dw = scatter(&free.w[j], &(k_vec + k_mat * &dx), nq);
            dx = &lin.phix[j] * &dx + &lin.phiw[j] * &dw;
            w.push(dw);
        }
        let ok = chi.iter().chain(w.iter().flat_map(|v| v.iter())).all(|v| v.is_finite());
        ok.then_some(Step { chi, w })
    }

    /// `|Jδ|²` of the linearized residual.
    fn model_sq(&self, lin: &Lin, d: &Step) -> f64 {
        let pen = |k: usize, dx: &DVector<f64>| -> f64 {
            lin.pen_d[k - 1].iter().zip(dx.iter()).map(|(p, v)| p * v * v).sum()
        };
        let mut s = (&self.up * &d.chi).norm_squared();
        let mut dx = d.chi.clone();
        for j in 0..self.steps {
            s += (&lin.swm[j] * &d.w[j]).norm_squared();
            s += (&lin.cx[j] * &dx + &lin.cw[j] * &d.w[j]).norm_squared();
            if j >= 1 {
                s += pen(j, &dx);
            }
            dx = &lin.phix[j] * &dx + &lin.phiw[j] * &d.w[j];
        }
        s + pen(self.steps, &dx)
    }

    /// Projected Levenberg–Marquardt with Nielsen's damping update, for the
    /// current penalty parameters. Returns the termination, the number of
    /// iterations and the final projected-gradient norm.
    fn lm_round(&self, it: &mut Iterate, opts: &SolverOptions, history: &mut Vec<f64>) -> (Termination, usize, f64) {
        let mut mu = opts.lm_damping;
        let mut grow = 2.0;
        for iter in 0..opts.max_iters {
            let lin = self.linearize(it);
            let half = self.half_grad(&lin);
            let (pg, free) = self.active_set(it, &half);
            if pg <= opts.grad_tol {
                return (Termination::Converged, iter, pg);
            }
            loop {
                if mu > MAX_DAMPING {
                    return (Termination::Stalled, iter, pg);
                }
                if let Some((cand, ratio, pred)) = self.trial(it, &lin, &half, mu, &free) {
                    // Below the rounding level of the merit the gain ratio is
                    // noise; accept on a smaller projected gradient instead.
                    let noise = NOISE_ULPS * f64::EPSILON * it.merit;
                    let accept = if pred <= noise {
                        cand.merit <= it.merit + noise && self.projected_grad(&cand) < pg
                    } else {
                        ratio > 0.0
                    };
                    if accept {
                        mu *= (1.0 / 3.0f64).max(1.0 - (2.0 * ratio - 1.0).powi(3));
                        grow = 2.0;
                        *it = cand;
                        history.push(it.merit);
                        break;
                    }
                }
                mu *= grow;
                grow *= 2.0;
            }
        }
        let pg = self.projected_grad(it);
        let term = if pg <= opts.grad_tol { Termination::Converged } else { Termination::MaxIters };
        (term, opts.max_iters, pg)
    }

    fn projected_grad(&self, it: &Iterate) -> f64 {
        self.active_set(it, &self.half_grad(&self.linearize(it))).0
    }

    /// Projected trial point for damping `mu` and its gain ratio.
    fn trial(&self, it: &Iterate, lin: &Lin, half: &Step, mu: f64, free: &FreeSet) -> Option<(Iterate, f64, f64)> {
        let step = self.lq_step(lin, mu, free)?;
        let chi = self.xbox.project(&(&it.chi + &step.chi));
        let w: Vec<_> = it.w.iter().zip(&step.w).map(|(w, d)| self.wbox.project(&(w + d))).collect();
        let d = Step { chi: &chi - &it.chi, w: w.iter().zip(&it.w).map(|(a, b)| a - b).collect() };
        let pred = -2.0 * half.dot(&d) - self.model_sq(lin, &d);
        if !(pred > 0.0) {
            return None;
        }
        let cand = self.iterate(chi, w)?;
        let ratio = (it.merit - cand.merit) / pred;
        Some((cand, ratio, pred))
    }
}

/// Damping beyond which the step is negligible and the solver gives up.
const MAX_DAMPING: f64 = 1e16;

/// Predicted reductions below this many ulps of the merit count as rounding noise.
const NOISE_ULPS: f64 = 64.0;

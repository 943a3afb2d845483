//! Error bounds of the estimator and their audit along simulated runs
//!
//! ```text
//! |x(tᵢ) − x̂(tᵢ)|²_{P₁} ≤ 4ρ^{tᵢ}|χ − χ̂|²_{P₂} + c_w ∫₀^{tᵢ} ρ^{tᵢ−τ}|w(τ)|²_Q dτ
//! ```
//!
//! with `c_w = 8`, or `c_w = 4` for equidistant sampling with window starts
//! on the sampling grid.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::certify::{contraction_rate, DetectabilityCertificate};
use crate::error::{config, Error, Result};
use crate::integrate::fmt_sig17;
use crate::linalg::{max_eigenvalue, min_eigenvalue, quad_form};
use crate::mhe::{EstimationRun, MheConfig};
use crate::quadrature::piece_weight;
use crate::sysmodel::PiecewiseSignal;

/// Relative slack of the interval and L∞ checks, for quadrature and rounding.
pub const PROP3_REL_TOL: f64 = 1e-6;

/// `Σ_j ∫_{piece j} kernel^{b−τ} dτ · |w_j|²_Q` over the pieces of `w` in `[a, b)`.
pub fn discounted_energy(kernel: f64, w: &PiecewiseSignal, q: &nalgebra::DMatrix<f64>, a: f64, b: f64) -> Result<f64> {
    let dt = w.dt();
    let (Some(ia), Some(ib)) = (
        PiecewiseSignal::steps_in(a - w.t0(), dt),
        PiecewiseSignal::steps_in(b - w.t0(), dt),
    ) else {
        return config(format!("interval [{a}, {b}) is not on the disturbance grid"));
    };
    if a < w.t0() - 1e-9 * dt || ib > w.len() || ia > ib {
        return Err(Error::Domain(format!(
            "interval [{a}, {b}) not covered by the disturbance on [{}, {})",
            w.t0(),
            w.t_end()
        )));
    }
    Ok((ia..ib)
        .map(|j| piece_weight(kernel, (ib - j - 1) as f64 * dt, dt) * quad_form(&w.values()[j], q))
        .sum())
}

fn check_factor(factor: f64) -> Result<()> {
    if factor == 4.0 || factor == 8.0 {
        Ok(())
    } else {
        config(format!("disturbance factor must be 4 or 8, got {factor}"))
    }
}

/// Right-hand side of the error bound at `t_i`; `w` must cover `[0, t_i)`.
pub fn theorem1_bound(
    cert: &DetectabilityCertificate,
    rho: f64,
    chi: &DVector<f64>,
    chi_hat: &DVector<f64>,
    w: &PiecewiseSignal,
    t_i: f64,
    factor: f64,
) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return config(format!("contraction rate must lie in (0, 1), got {rho}"));
    }
    check_factor(factor)?;
    let prior = 4.0 * rho.powf(t_i) * quad_form(&(chi - chi_hat), cert.p2());
    Ok(prior + factor * discounted_energy(rho, w, cert.q(), 0.0, t_i)?)
}

/// Interval bound on `U(x(t), x̂(t))` for `t ≤ tᵢ = k(t)` from the prior error
/// `U_prior` at the window start `tᵢ − T_tᵢ`.
pub fn prop3_bound(
    cert: &DetectabilityCertificate,
    t: f64,
    t_i: f64,
    t_window: f64,
    u_prior: f64,
    w: &PiecewiseSignal,
) -> Result<f64> {
    if t > t_i + 1e-9 * w.dt() {
        return Err(Error::Domain(format!("t = {t} lies after its sampling time {t_i}")));
    }
    let lambda = cert.lambda();
    let prior = 4.0 * cert.bound_ratio() * lambda.powf(t_window) * u_prior;
    let dist = 4.0 * discounted_energy(lambda, w, cert.q(), t_i - t_window, t_i)?;
    Ok(lambda.powf(-(t_i - t)) * (prior + dist))
}

/// Constants of the L∞ form `|x(tᵢ) − x̂(tᵢ)| ≤ max{C|χ − χ̂|·ρ_s^{tᵢ}, γ‖w‖}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupBoundConstants {
    pub c: f64,
    pub rho_s: f64,
    pub gamma_coeff: f64,
}

impl SupBoundConstants {
    pub fn gamma(&self, s: f64) -> f64 {
        self.gamma_coeff * s
    }

    pub fn bound(&self, initial_error: f64, t_i: f64, w_sup: f64) -> f64 {
        (self.c * initial_error * self.rho_s.powf(t_i)).max(self.gamma(w_sup))
    }
}

/// Quadratic instance (`r = 2`) of the L²-to-L∞ conversion: with
/// `|e|² ≤ 4λmax(P₂)/λmin(P₁)·ρᵗ|e₀|² + factor·λmax(Q)/(λmin(P₁)(−ln ρ))·‖w‖²`
/// and `a + b ≤ 2max{a, b}`.
pub fn sup_bound_constants(cert: &DetectabilityCertificate, rho: f64, factor: f64) -> Result<SupBoundConstants> {
    if !(rho > 0.0 && rho < 1.0) {
        return config(format!("contraction rate must lie in (0, 1), got {rho}"));
    }
    check_factor(factor)?;
    let p1_min = min_eigenvalue(cert.p1());
    Ok(SupBoundConstants {
        c: (8.0 * max_eigenvalue(cert.p2()) / p1_min).sqrt(),
        rho_s: rho.sqrt(),
        gamma_coeff: (2.0 * factor * max_eigenvalue(cert.q()) / (-p1_min * rho.ln())).sqrt(),
    })
}

/// Audit of one sampling time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub t_i: f64,
    /// `|x(tᵢ) − x̂(tᵢ)|²_{P₁}`.
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    /// `U(x, x̂)` at the window start.
    pub u_prior: f64,
    /// `U(x(tᵢ), x̂(tᵢ))` and its interval bound.
    pub prop3_lhs: f64,
    pub prop3_rhs: f64,
    /// Largest `U(x(t), x̂(t)) / bound(t)` over the grid nodes of `(t_{i−1}, tᵢ]`.
    pub prop3_worst_ratio: f64,
    /// `|x(tᵢ) − x̂(tᵢ)|` and its L∞ bound.
    pub linf_lhs: f64,
    pub linf_rhs: f64,
}

impl BoundRecord {
    pub fn passes(&self) -> bool {
        self.margin >= -1e-9 * self.rhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rho: f64,
    /// `δ̄` used in the horizon condition (0 in equidistant mode).
    pub delta_bar: f64,
    pub factor: f64,
    pub equidistant_mode: bool,
    pub constants: SupBoundConstants,
    /// `|ρ^{T−δ̄} − 4λmax(P₂,P₁)λ^{T−δ̄}|`.
    pub identity_residual: f64,
    pub worst_margin: f64,
    pub pass: bool,
    pub prop3_pass: bool,
    pub linf_pass: bool,
    pub records: Vec<BoundRecord>,
}

impl BoundReport {
    /// `t_i,lhs,rhs,margin,u_prior,prop3_lhs,prop3_rhs`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_i,lhs,rhs,margin,u_prior,prop3_lhs,prop3_rhs\n");
        for r in &self.records {
            let row = [r.t_i, r.lhs, r.rhs, r.margin, r.u_prior, r.prop3_lhs, r.prop3_rhs];
            let row: Vec<String> = row.iter().map(|v| fmt_sig17(*v)).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Evaluates the bounds at every sampling time of a simulated run.
///
/// Refuses (horizon error) when `T` does not satisfy the horizon condition
/// for the run's sampling set.
pub fn audit_run(run: &EstimationRun, cert: &DetectabilityCertificate, cfg: &MheConfig) -> Result<BoundReport> {
    let truth = run.truth.as_ref().ok_or_else(|| Error::Audit("the run carries no ground truth".into()))?;
    let delta_bar = cfg.effective_delta_bar(&run.sampling);
    let factor = cfg.bound_factor();
    let rho = contraction_rate(cert, cfg.horizon, delta_bar)?;
    let constants = sup_bound_constants(cert, rho, factor)?;
    let span = cfg.horizon - delta_bar;
    let identity_residual = (rho.powf(span) - 4.0 * cert.bound_ratio() * cert.lambda().powf(span)).abs();

    let dt = cfg.dt;
    let xs = truth.x.states();
    let xh = run.estimate.states();
    let chi = &xs[0];
    let e0 = (chi - &run.chi_hat).norm();
    let mut w_sup: f64 = 0.0;
    let mut w_seen = 0usize;
    let mut records = Vec::with_capacity(run.records.len());
    let mut prev = 0usize;
    for rec in &run.records {
        let k = rec.index;
        let t_i = rec.t_i;
        let start = k - PiecewiseSignal::steps_in(rec.window, dt).expect("window on the grid");
        let lhs = quad_form(&(&xs[k] - &xh[k]), cert.p1());
        let rhs = theorem1_bound(cert, rho, chi, &run.chi_hat, &truth.w, t_i, factor)?;

        let u_prior = cert.lyapunov(&xs[start], &xh[start]);
        let prop3_lhs = cert.lyapunov(&xs[k], &xh[k]);
        let prop3_rhs = prop3_bound(cert, t_i, t_i, rec.window, u_prior, &truth.w)?;
        let mut prop3_worst_ratio: f64 = 0.0;
        for j in prev + 1..=k {
            let bound = prop3_bound(cert, j as f64 * dt, t_i, rec.window, u_prior, &truth.w)?;
            let val = cert.lyapunov(&xs[j], &xh[j]);
            prop3_worst_ratio = prop3_worst_ratio.max(if bound > 0.0 { val / bound } else if val > 0.0 { f64::INFINITY } else { 0.0 });
        }

        while w_seen < k {
            w_sup = w_sup.max(truth.w.eval(w_seen as f64 * dt)?.norm());
            w_seen += 1;
        }
        records.push(BoundRecord {
            t_i,
            lhs,
            rhs,
            margin: rhs - lhs,
            u_prior,
            prop3_lhs,
            prop3_rhs,
            prop3_worst_ratio,
            linf_lhs: (&xs[k] - &xh[k]).norm(),
            linf_rhs: constants.bound(e0, t_i, w_sup),
        });
        prev = k;
    }
    let worst_margin = records.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    Ok(BoundReport {
        rho,
        delta_bar,
        factor,
        equidistant_mode: cfg.equidistant_mode,
        constants,
        identity_residual,
        worst_margin,
        pass: records.iter().all(BoundRecord::passes),
        prop3_pass: records.iter().all(|r| r.prop3_worst_ratio <= 1.0 + PROP3_REL_TOL),
        linf_pass: records.iter().all(|r| r.linf_lhs <= r.linf_rhs * (1.0 + PROP3_REL_TOL)),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn cert_identity(n: usize, q: usize) -> DetectabilityCertificate {
        DetectabilityCertificate::new(
            DMatrix::identity(n, n),
            DMatrix::identity(q, q),
            DMatrix::identity(1, 1),
            0.4,
        )
        .unwrap()
    }

    fn w_const(len: usize, v: f64) -> PiecewiseSignal {
        PiecewiseSignal::constant(0.0, 0.01, len, DVector::from_element(2, v)).unwrap()
    }

    #[test]
    fn theorem1_examples() {
        let cert = cert_identity(2, 2);
        let chi = DVector::from_vec(vec![1.0, 2.0]);
        let zero = w_const(100, 0.0);
        assert_eq!(theorem1_bound(&cert, 0.86, &chi, &chi, &zero, 1.0, 8.0).unwrap(), 0.0);
        let chi_hat = DVector::from_vec(vec![0.0, 0.0]);
        assert_relative_eq!(
            theorem1_bound(&cert, 0.86, &chi, &chi_hat, &zero, 1.0, 8.0).unwrap(),
            4.0 * 0.86 * 5.0,
            epsilon = 1e-14
        );
        // |w|²_Q = 2·0.01 per piece.
        let w = w_const(100, 0.1);
        let c = 0.02;
        for factor in [4.0, 8.0] {
            assert_relative_eq!(
                theorem1_bound(&cert, 0.86, &chi, &chi, &w, 1.0, factor).unwrap(),
                factor * c * (1.0 - 0.86) / -0.86f64.ln(),
                max_relative = 1e-12
            );
        }
        assert!(theorem1_bound(&cert, 1.0, &chi, &chi, &w, 1.0, 8.0).is_err());
        assert!(theorem1_bound(&cert, 0.86, &chi, &chi, &w, 1.0, 6.0).is_err());
    }

    #[test]
    fn prop3_examples() {
        let cert = cert_identity(2, 2);
        let zero = w_const(300, 0.0);
        assert_relative_eq!(prop3_bound(&cert, 2.0, 2.0, 2.0, 1.0, &zero).unwrap(), 0.64, epsilon = 1e-14);
        let at_start = prop3_bound(&cert, 0.0, 2.0, 2.0, 1.0, &zero).unwrap();
        assert_relative_eq!(at_start, 0.64 * 0.4f64.powf(-2.0), epsilon = 1e-12);
        assert!(matches!(prop3_bound(&cert, 2.1, 2.0, 2.0, 1.0, &zero), Err(Error::Domain(_))));
    }

    #[test]
    fn sup_constants() {
        let cert = cert_identity(2, 2);
        let k = sup_bound_constants(&cert, 0.86, 8.0).unwrap();
        assert_relative_eq!(k.c, 8f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(k.rho_s, 0.9274, epsilon = 1e-4);
        assert_eq!(k.gamma(0.0), 0.0);
    }
}

//! Sampled check of the discounted dissipation inequality
//!
//! ```text
//! U(x₁(t), x₂(t)) ≤ λᵗ U(χ₁, χ₂) + ∫₀ᵗ λ^{t−τ} (|w₁ − w₂|²_Q + |y₁ − y₂|²_R) dτ
//! ```
//!
//! along a pair of simulated trajectories.

use nalgebra::DVector;

use super::DetectabilityCertificate;
use crate::error::Result;
use crate::integrate::integrate;
use crate::linalg::quad_form;
use crate::quadrature::{linear_piece_weights, piece_weight};
use crate::sysmodel::{PiecewiseSignal, SystemModel};

/// Worst node of one trajectory pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationSample {
    pub time: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl DissipationSample {
    /// `lhs ≤ rhs + rel_tol·|rhs|`.
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.lhs <= self.rhs + rel_tol * self.rhs.abs()
    }
}

/// Integrates both trajectories to `t_end` with step `dt` and evaluates the
/// inequality at every node.
///
/// The disturbance term is exact for piecewise-constant `w`. The output term
/// interpolates `|Δy|²_R` linearly on each step between its values at the two
/// ends, both taken with the step's disturbance, and integrates the kernel
/// exactly. Returns the node with the largest `lhs − rhs`, or `None` when
/// either trajectory leaves 𝒳 at some node.
#[allow(clippy::too_many_arguments)]
pub fn dissipation_check(
    model: &SystemModel,
    cert: &DetectabilityCertificate,
    chi1: &DVector<f64>,
    chi2: &DVector<f64>,
    u: &PiecewiseSignal,
    w1: &PiecewiseSignal,
    w2: &PiecewiseSignal,
    t_end: f64,
    dt: f64,
) -> Result<Option<DissipationSample>> {
    let x1 = integrate(model, chi1, u, w1, 0.0, t_end, dt)?;
    let x2 = integrate(model, chi2, u, w2, 0.0, t_end, dt)?;
    let xbox = model.state_box();
    if x1.states().iter().chain(x2.states()).any(|x| !xbox.contains(x, 0.0)) {
        return Ok(None);
    }
    let lambda = cert.lambda();
    let decay = lambda.powf(dt);
    let (alpha, beta) = linear_piece_weights(lambda, 0.0, dt);
    let omega = piece_weight(lambda, 0.0, dt);

    let mut supply = 0.0;
    let mut initial = cert.lyapunov(chi1, chi2);
    let mut worst = DissipationSample { time: 0.0, lhs: initial, rhs: initial };
    for k in 0..x1.len() - 1 {
        let t = dt * k as f64;
        let uk = if model.input_dim() == 0 { model.no_input() } else { u.eval(t)?.clone() };
        let (w1k, w2k) = (w1.eval(t)?, w2.eval(t)?);
        let dy = |a: &DVector<f64>, b: &DVector<f64>| {
            quad_form(&(model.h(a, &uk, w1k) - model.h(b, &uk, w2k)), cert.r())
        };
        let left = dy(&x1.states()[k], &x2.states()[k]);
        let right = dy(&x1.states()[k + 1], &x2.states()[k + 1]);
        let dw = quad_form(&(w1k - w2k), cert.q());
        supply = supply * decay + omega * dw + alpha * left + beta * right;
        initial *= decay;
        let lhs = cert.lyapunov(&x1.states()[k + 1], &x2.states()[k + 1]);
        let rhs = initial + supply;
        if lhs - rhs > worst.lhs - worst.rhs {
            worst = DissipationSample { time: t + dt, lhs, rhs };
        }
    }
    Ok(Some(worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::PolynomialModelFile;
    use nalgebra::DMatrix;

    #[test]
    fn stable_scalar_dissipates() {
        let text = r#"{"name": "lti", "state_dim": 1, "dist_dim": 1, "output_dim": 1,
            "f": [[{"coeff": -1.0, "x": [1]}, {"coeff": 1.0, "w": [1]}]],
            "h": [[{"coeff": 1.0, "x": [1]}]],
            "state_box": [[-5, 5]], "dist_box": [[-1, 1]]}"#;
        let m = PolynomialModelFile::from_json(text).unwrap().build().unwrap();
        let one = DMatrix::from_element(1, 1, 1.0);
        let cert = DetectabilityCertificate::new(one.clone(), one.clone(), one, (-1f64).exp()).unwrap();
        let u = PiecewiseSignal::zeros(0.0, 0.01, 0, 0).unwrap();
        let w1 = PiecewiseSignal::constant(0.0, 0.01, 100, DVector::from_element(1, 0.5)).unwrap();
        let w2 = PiecewiseSignal::zeros(0.0, 0.01, 100, 1).unwrap();
        let s = dissipation_check(
            &m,
            &cert,
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, -1.0),
            &u,
            &w1,
            &w2,
            1.0,
            0.01,
        )
        .unwrap()
        .unwrap();
        assert!(s.holds(1e-6), "{s:?}");
    }
}

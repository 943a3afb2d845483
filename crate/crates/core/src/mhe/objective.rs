use nalgebra::DVector;

use super::MheConfig;
use crate::error::{config, Result};
use crate::linalg::quad_form;
use crate::quadrature::piece_weights;
use crate::sysmodel::PiecewiseSignal;

/// Exact discount weights `ω_j = ∫ λ^{T−τ} dτ` of the `count` pieces of a
/// window of length `T = count·dt`.
pub fn discount_weights(lambda: f64, dt: f64, count: usize) -> Vec<f64> {
    piece_weights(lambda, dt, count)
}

/// The discounted objective of a window of length `t_window`.
///
/// `w`, `y_meas` and `y_est` hold one piece per `cfg.dt` step of the window.
pub fn mhe_objective(
    cfg: &MheConfig,
    prior: &DVector<f64>,
    chi: &DVector<f64>,
    w: &PiecewiseSignal,
    y_meas: &PiecewiseSignal,
    y_est: &PiecewiseSignal,
    t_window: f64,
) -> Result<f64> {
    let Some(steps) = PiecewiseSignal::steps_in(t_window, cfg.dt) else {
        return config(format!("window length {t_window} is not a multiple of dt = {}", cfg.dt));
    };
    for (name, s) in [("disturbance", w), ("measured output", y_meas), ("estimated output", y_est)] {
        if s.len() != steps || PiecewiseSignal::steps_in(s.dt(), cfg.dt) != Some(1) {
            return config(format!("{name} must have {steps} pieces of length dt = {}", cfg.dt));
        }
    }
    let cert = &cfg.cert;
    let lambda = cert.lambda();
    let mut cost = 2.0 * quad_form(&(chi - prior), cert.p2()) * lambda.powf(t_window);
    for (j, omega) in discount_weights(lambda, cfg.dt, steps).into_iter().enumerate() {
        let dy = &y_meas.values()[j] - &y_est.values()[j];
        cost += omega * (2.0 * quad_form(&w.values()[j], cert.q()) + quad_form(&dy, cert.r()));
    }
    Ok(cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::DetectabilityCertificate;
    use crate::mhe::SamplerSpec;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn cfg() -> MheConfig {
        let one = DMatrix::from_element(1, 1, 1.0);
        let cert = DetectabilityCertificate::new(one.clone(), one.clone(), one, 0.4).unwrap();
        MheConfig::new(2.0, 0.01, cert, SamplerSpec::Equidistant { period: 0.1 })
    }

    fn sig(len: usize, v: f64) -> PiecewiseSignal {
        PiecewiseSignal::constant(0.0, 0.01, len, DVector::from_element(1, v)).unwrap()
    }

    #[test]
    fn zero_at_consistent_data() {
        let x = DVector::from_element(1, 0.7);
        let c = mhe_objective(&cfg(), &x, &x, &sig(50, 0.0), &sig(50, 1.3), &sig(50, 1.3), 0.5).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn single_piece_weight() {
        let x = DVector::from_element(1, 0.0);
        // Integrand 2|w|² = 2 on one piece of length dt.
        let c = mhe_objective(&cfg(), &x, &x, &sig(1, 1.0), &sig(1, 0.0), &sig(1, 0.0), 0.01).unwrap();
        assert_relative_eq!(c, 2.0 * (1.0 - 0.4f64.powf(0.01)) / -0.4f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn prior_term_is_discounted() {
        let c = mhe_objective(
            &cfg(),
            &DVector::from_element(1, 0.0),
            &DVector::from_element(1, 1.0),
            &sig(200, 0.0),
            &sig(200, 0.0),
            &sig(200, 0.0),
            2.0,
        )
        .unwrap();
        assert_relative_eq!(c, 2.0 * 0.16, epsilon = 1e-12);
    }

    #[test]
    fn misaligned_signals_are_rejected() {
        let x = DVector::from_element(1, 0.0);
        assert!(mhe_objective(&cfg(), &x, &x, &sig(49, 0.0), &sig(50, 0.0), &sig(50, 0.0), 0.5).is_err());
        assert!(mhe_objective(&cfg(), &x, &x, &sig(50, 0.0), &sig(50, 0.0), &sig(50, 0.0), 0.505).is_err());
    }
}

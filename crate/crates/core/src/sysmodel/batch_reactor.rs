use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{BoxSet, Dynamics, SystemModel};

const K1: f64 = 0.16;
const K2: f64 = 0.0064;

/// Gas-phase reaction `2A ⇌ B` in a constant-volume batch reactor.
///
/// ```text
/// ẋ₁ = −2k₁x₁² + 2k₂x₂ + w₁
/// ẋ₂ =   k₁x₁² −  k₂x₂ + w₂
/// y  = x₁ + x₂ + w₃
/// ```
#[derive(Debug, Clone, Copy)]
struct BatchReactor;

impl Dynamics for BatchReactor {
    fn f(&self, x: &DVector<f64>, _u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let r = K1 * x[0] * x[0] - K2 * x[1];
        DVector::from_vec(vec![-2.0 * r + w[0], r + w[1]])
    }

    fn h(&self, x: &DVector<f64>, _u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0] + x[1] + w[2])
    }

    fn jac_f_x(&self, x: &DVector<f64>, _u: &DVector<f64>, _w: &DVector<f64>) -> Option<DMatrix<f64>> {
        let a = 2.0 * K1 * x[0];
        Some(DMatrix::from_row_slice(2, 2, &[-2.0 * a, 2.0 * K2, a, -K2]))
    }

    fn jac_f_w(&self, _x: &DVector<f64>, _u: &DVector<f64>, _w: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]))
    }

    fn jac_h_x(&self, _x: &DVector<f64>, _u: &DVector<f64>, _w: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]))
    }

    fn jac_h_w(&self, _x: &DVector<f64>, _u: &DVector<f64>, _w: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]))
    }
}

/// The batch-reactor benchmark with 𝒳 = [0.1, 5]² and 𝒲 = [−0.1, 0.1]³.
pub fn batch_reactor() -> SystemModel {
    let build = || {
        SystemModel::new("batch_reactor", 2, 0, 3, 1, Arc::new(BatchReactor))?
            .with_state_box(BoxSet::uniform(2, 0.1, 5.0)?)?
            .with_dist_box(BoxSet::uniform(3, -0.1, 0.1)?)
            .map(|m| m.with_output_affine(true))
    };
    build().expect("batch reactor model is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::{affinity_defect, jacobian_fd_error};
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn dynamics_at_reference_point() {
        let m = batch_reactor();
        let dx = m.f(&v(&[3.0, 1.0]), &m.no_input(), &v(&[0.0, 0.0, 0.0]));
        assert_relative_eq!(dx[0], -2.8672, epsilon = 1e-12);
        assert_relative_eq!(dx[1], 1.4336, epsilon = 1e-12);
        let y = m.h(&v(&[3.0, 1.0]), &m.no_input(), &v(&[0.0, 0.0, 0.0]));
        assert_eq!(y[0], 4.0);
    }

    #[test]
    fn state_jacobian_by_hand_and_by_differences() {
        let m = batch_reactor();
        let (x, u, w) = (v(&[3.0, 1.0]), m.no_input(), v(&[0.0, 0.0, 0.0]));
        let expected = DMatrix::from_row_slice(2, 2, &[-1.92, 0.0128, 0.96, -0.0064]);
        assert_relative_eq!(m.jac_f_x(&x, &u, &w), expected, epsilon = 1e-12);
        let fd = crate::sysmodel::central_difference(|z| m.f(z, &u, &w), &x);
        assert_relative_eq!(fd, expected, epsilon = 1e-7);
    }

    #[test]
    fn jacobians_agree_with_differences_on_a_grid() {
        let m = batch_reactor();
        let pts: Vec<_> = m
            .state_box()
            .grid(&[7, 7])
            .unwrap()
            .into_iter()
            .map(|x| (x, m.no_input(), v(&[0.05, -0.02, 0.1])))
            .collect();
        assert!(jacobian_fd_error(&m, &pts) < 1e-5);
    }

    #[test]
    fn output_is_affine() {
        let m = batch_reactor();
        assert!(m.output_affine());
        let s = vec![(v(&[1.0, 2.0]), v(&[0.0, 0.1, -0.1]), v(&[0.3, -0.2, 0.0, 0.1, 0.05]), v(&[-1.0, 0.5, 0.2, 0.0, -0.3]))];
        assert!(affinity_defect(&m, &s, &m.no_input()) < 1e-15);
    }
}

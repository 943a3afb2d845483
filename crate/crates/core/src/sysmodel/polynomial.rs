//! Models whose right-hand side and output map are polynomials, described in
//! a JSON model file:
//!
//! ```json
//! {
//!   "name": "scalar",
//!   "state_dim": 1, "input_dim": 0, "dist_dim": 1, "output_dim": 1,
//!   "f": [[{"coeff": -1.0, "x": [1]}, {"coeff": 1.0, "w": [1]}]],
//!   "h": [[{"coeff": 1.0, "x": [1]}]],
//!   "state_box": [[-10, 10]],
//!   "dist_box": [[-1, 1]]
//! }
//! ```
//!
//! Each coordinate of `f` and `h` is a list of monomials
//! `coeff · Π xᵢ^aᵢ · Π uₗ^cₗ · Π wₖ^bₖ`; omitted exponent lists are zero.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{BoxSet, Dynamics, SystemModel};
use crate::error::{config, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub u: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub w: Vec<u32>,
}

impl Monomial {
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let pow = |vals: &DVector<f64>, exps: &[u32]| -> f64 {
            exps.iter()
                .enumerate()
                .map(|(i, &e)| vals[i].powi(e as i32))
                .product()
        };
        self.coeff * pow(x, &self.x) * pow(u, &self.u) * pow(w, &self.w)
    }

    /// Partial derivative with respect to x (`wrt_x`) or w, coordinate `i`.
    fn derivative(&self, wrt_x: bool, i: usize) -> Option<Monomial> {
        let exps = if wrt_x { &self.x } else { &self.w };
        let e = exps.get(i).copied().unwrap_or(0);
        if e == 0 {
            return None;
        }
        let mut d = self.clone();
        let slot = if wrt_x { &mut d.x } else { &mut d.w };
        slot[i] -= 1;
        d.coeff *= e as f64;
        Some(d)
    }

    fn degree_xw(&self) -> u32 {
        self.x.iter().chain(&self.w).sum()
    }
}

type Poly = Vec<Monomial>;

fn eval_poly(p: &[Monomial], x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
    p.iter().map(|m| m.eval(x, u, w)).sum()
}

/// Serialized form of a polynomial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialModelFile {
    pub name: String,
    pub state_dim: usize,
    #[serde(default)]
    pub input_dim: usize,
    pub dist_dim: usize,
    pub output_dim: usize,
    pub f: Vec<Poly>,
    pub h: Vec<Poly>,
    #[serde(default)]
    pub state_box: Option<BoxSet>,
    #[serde(default)]
    pub input_box: Option<BoxSet>,
    #[serde(default)]
    pub dist_box: Option<BoxSet>,
    #[serde(default)]
    pub output_box: Option<BoxSet>,
}

impl PolynomialModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<SystemModel> {
        if self.f.len() != self.state_dim {
            return config(format!("f has {} coordinates, expected {}", self.f.len(), self.state_dim));
        }
        if self.h.len() != self.output_dim {
            return config(format!("h has {} coordinates, expected {}", self.h.len(), self.output_dim));
        }
        for m in self.f.iter().chain(&self.h).flatten() {
            if m.x.len() > self.state_dim || m.u.len() > self.input_dim || m.w.len() > self.dist_dim {
                return config("monomial exponent list longer than the variable dimension");
            }
            if !m.coeff.is_finite() {
                return config("non-finite monomial coefficient");
            }
        }
        let pad = |p: &Poly| -> Poly {
            p.iter()
                .map(|m| {
                    let mut m = m.clone();
                    m.x.resize(self.state_dim, 0);
                    m.u.resize(self.input_dim, 0);
                    m.w.resize(self.dist_dim, 0);
                    m
                })
                .collect()
        };
        let dynamics = PolynomialDynamics {
            f: self.f.iter().map(pad).collect(),
            h: self.h.iter().map(pad).collect(),
        };
        let affine = dynamics.h.iter().flatten().all(|m| m.degree_xw() <= 1);
        let mut model = SystemModel::new(
            self.name.clone(),
            self.state_dim,
            self.input_dim,
            self.dist_dim,
            self.output_dim,
            Arc::new(dynamics),
        )?
        .with_output_affine(affine);
        if let Some(b) = &self.state_box {
            model = model.with_state_box(b.clone())?;
        }
        if let Some(b) = &self.input_box {
            model = model.with_input_box(b.clone())?;
        }
        if let Some(b) = &self.dist_box {
            model = model.with_dist_box(b.clone())?;
        }
        if let Some(b) = &self.output_box {
            model = model.with_output_box(b.clone())?;
        }
        Ok(model)
    }
}

#[derive(Debug)]
struct PolynomialDynamics {
    f: Vec<Poly>,
    h: Vec<Poly>,
}

fn jacobian(polys: &[Poly], wrt_x: bool, cols: usize, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(polys.len(), cols, |r, c| {
        polys[r]
            .iter()
            .filter_map(|m| m.derivative(wrt_x, c))
            .map(|d| d.eval(x, u, w))
            .sum()
    })
}

impl Dynamics for PolynomialDynamics {
    fn f(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.f.len(), self.f.iter().map(|p| eval_poly(p, x, u, w)))
    }

    fn h(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.h.len(), self.h.iter().map(|p| eval_poly(p, x, u, w)))
    }

    fn jac_f_x(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(jacobian(&self.f, true, x.len(), x, u, w))
    }

    fn jac_f_w(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(jacobian(&self.f, false, w.len(), x, u, w))
    }

    fn jac_h_x(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(jacobian(&self.h, true, x.len(), x, u, w))
    }

    fn jac_h_w(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(jacobian(&self.h, false, w.len(), x, u, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::{batch_reactor, jacobian_fd_error};
    use approx::assert_relative_eq;

    const REACTOR_JSON: &str = r#"{
        "name": "reactor_poly",
        "state_dim": 2, "dist_dim": 3, "output_dim": 1,
        "f": [
            [{"coeff": -0.32, "x": [2, 0]}, {"coeff": 0.0128, "x": [0, 1]}, {"coeff": 1.0, "w": [1, 0, 0]}],
            [{"coeff": 0.16, "x": [2, 0]}, {"coeff": -0.0064, "x": [0, 1]}, {"coeff": 1.0, "w": [0, 1, 0]}]
        ],
        "h": [[{"coeff": 1.0, "x": [1, 0]}, {"coeff": 1.0, "x": [0, 1]}, {"coeff": 1.0, "w": [0, 0, 1]}]],
        "state_box": [[0.1, 5.0], [0.1, 5.0]],
        "dist_box": [[-0.1, 0.1], [-0.1, 0.1], [-0.1, 0.1]]
    }"#;

    #[test]
    fn polynomial_file_reproduces_builtin_reactor() {
        let poly = PolynomialModelFile::from_json(REACTOR_JSON).unwrap().build().unwrap();
        let reference = batch_reactor();
        assert!(poly.output_affine());
        let x = DVector::from_vec(vec![2.3, 0.7]);
        let w = DVector::from_vec(vec![0.01, -0.03, 0.07]);
        let u = poly.no_input();
        assert_relative_eq!(poly.f(&x, &u, &w), reference.f(&x, &u, &w), epsilon = 1e-14);
        assert_relative_eq!(poly.h(&x, &u, &w), reference.h(&x, &u, &w), epsilon = 1e-14);
        assert_relative_eq!(poly.jac_f_x(&x, &u, &w), reference.jac_f_x(&x, &u, &w), epsilon = 1e-14);
        assert_relative_eq!(poly.jac_f_w(&x, &u, &w), reference.jac_f_w(&x, &u, &w), epsilon = 1e-14);
        assert!(jacobian_fd_error(&poly, &[(x, u, w)]) < 1e-6);
    }

    #[test]
    fn quadratic_output_is_not_affine() {
        let text = r#"{"name": "q", "state_dim": 1, "dist_dim": 1, "output_dim": 1,
            "f": [[{"coeff": -1.0, "x": [1]}]],
            "h": [[{"coeff": 1.0, "x": [2]}]]}"#;
        assert!(!PolynomialModelFile::from_json(text).unwrap().build().unwrap().output_affine());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let text = r#"{"name": "bad", "state_dim": 2, "dist_dim": 1, "output_dim": 1,
            "f": [[{"coeff": -1.0, "x": [1]}]],
            "h": [[{"coeff": 1.0, "x": [1]}]]}"#;
        assert!(PolynomialModelFile::from_json(text).unwrap().build().is_err());
    }
}

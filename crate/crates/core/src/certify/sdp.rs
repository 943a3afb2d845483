//! Log-det barrier method for the LMI feasibility problem
//!
//! ```text
//! minimize t  subject to  t·I − M_k(P, Q, R) ⪰ 0 at every grid point,
//!                         P ⪰ ε·I  (and Q, R ⪰ ε·I when they are free).
//! ```
//!
//! The search stops as soon as `t < −1e-8`, i.e. a strictly feasible
//! certificate has been found.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    max_eigenvalue, verify_certificate, CertDomain, DetectabilityCertificate, GridSpec, InfeasibilityReport,
    Jacobians,
};
use crate::error::{config, Error, Result};
use crate::linalg::{is_spd, serde_rows, symmetrize};
use crate::sysmodel::SystemModel;

/// Which weights are decision variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SynthesisMode {
    /// `Q`, `R` given; only `P` is searched.
    FixedQr {
        #[serde(with = "serde_rows")]
        q: DMatrix<f64>,
        #[serde(with = "serde_rows")]
        r: DMatrix<f64>,
    },
    /// `P`, `Q` and `R` are all searched.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdpOptions {
    /// Lower bound `ε` on the eigenvalues of the free weights.
    pub eps_pd: f64,
    /// Budget of Newton iterations over all barrier stages.
    pub max_iters: usize,
    /// Tolerance used by the final verification.
    pub tol_psd: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { eps_pd: 1e-3, max_iters: 200, tol_psd: super::DEFAULT_TOL_PSD }
    }
}

const FEASIBLE_SLACK: f64 = -1e-8;
const MIN_BARRIER: f64 = 1e-10;

/// Indices `(i, j)`, `i ≤ j`, of a symmetric `n×n` matrix.
fn svec_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

fn svec_basis(n: usize, (i, j): (usize, usize)) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

fn unsvec(n: usize, pairs: &[(usize, usize)], vals: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for (&(i, j), &v) in pairs.iter().zip(vals) {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    m
}

/// Affine matrix function `F(z) = F₀ + Σ zᵢ Fᵢ`; zero coefficients omitted.
struct Block {
    f0: DMatrix<f64>,
    coeffs: Vec<(usize, DMatrix<f64>)>,
}

impl Block {
    fn eval(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut f = self.f0.clone();
        for (i, c) in &self.coeffs {
            f += c * z[*i];
        }
        f
    }
}

/// Layout of the decision vector: `[svec P, svec Q?, svec R?, t]`.
struct Layout {
    n: usize,
    nq: usize,
    np: usize,
    joint: bool,
    pp: Vec<(usize, usize)>,
    qp: Vec<(usize, usize)>,
    rp: Vec<(usize, usize)>,
}

impl Layout {
    fn q_off(&self) -> usize {
        self.pp.len()
    }
    fn r_off(&self) -> usize {
        self.pp.len() + self.qp.len()
    }
    fn t_idx(&self) -> usize {
        self.pp.len() + self.qp.len() + self.rp.len()
    }
    fn dim(&self) -> usize {
        self.t_idx() + 1
    }

    fn weights(&self, z: &DVector<f64>, fixed: Option<(&DMatrix<f64>, &DMatrix<f64>)>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let s = z.as_slice();
        let p = unsvec(self.n, &self.pp, &s[..self.q_off()]);
        match fixed {
            Some((q, r)) => (p, q.clone(), r.clone()),
            None => (
                p,
                unsvec(self.nq, &self.qp, &s[self.q_off()..self.r_off()]),
                unsvec(self.np, &self.rp, &s[self.r_off()..self.t_idx()]),
            ),
        }
    }
}

struct Barrier {
    blocks: Vec<Block>,
    dim: usize,
    t_idx: usize,
}

struct Eval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl Barrier {
    fn order(&self) -> usize {
        self.blocks.iter().map(|b| b.f0.nrows()).sum()
    }

    /// `−Σ log det F_b(z)`, or `None` outside the interior.
    fn value(&self, z: &DVector<f64>) -> Option<f64> {
        let mut v = 0.0;
        for b in &self.blocks {
            let chol = Cholesky::new(b.eval(z))?;
            v -= 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        v.is_finite().then_some(v)
    }

    fn eval(&self, z: &DVector<f64>, s: f64) -> Option<Eval> {
        let mut value = s * z[self.t_idx];
        let mut grad = DVector::zeros(self.dim);
        grad[self.t_idx] = s;
        let mut hess = DMatrix::zeros(self.dim, self.dim);
        for b in &self.blocks {
            let chol = Cholesky::new(b.eval(z))?;
            value -= 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let g: Vec<(usize, DMatrix<f64>)> = b.coeffs.iter().map(|(i, c)| (*i, chol.solve(c))).collect();
            for (a, (i, gi)) in g.iter().enumerate() {
                grad[*i] -= gi.trace();
                for (j, gj) in &g[a..] {
                    // tr(Gᵢ Gⱼ) without forming the product.
                    let h = gi.component_mul(&gj.transpose()).sum();
                    hess[(*i, *j)] += h;
                    if i != j {
                        hess[(*j, *i)] += h;
                    }
                }
            }
        }
        value.is_finite().then_some(Eval { value, grad, hess })
    }
}

fn newton_direction(e: &Eval) -> Option<DVector<f64>> {
    let rhs = -&e.grad;
    if let Some(ch) = Cholesky::new(e.hess.clone()) {
        return Some(ch.solve(&rhs));
    }
    e.hess.clone().lu().solve(&rhs)
}

/// Searches for a certificate satisfying the LMI at every grid point of the
/// model's constraint boxes with `κ = −ln λ`.
///
/// The result is always re-checked with [`verify_certificate`]; a failed
/// re-check is reported as an internal error.
pub fn synthesize_certificate(
    model: &SystemModel,
    lambda: f64,
    mode: &SynthesisMode,
    grid: &GridSpec,
    opts: &SdpOptions,
) -> Result<DetectabilityCertificate> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return config(format!("lambda must lie in (0, 1), got {lambda}"));
    }
    if !(opts.eps_pd > 0.0) {
        return config("eps_pd must be positive");
    }
    let kappa = -lambda.ln();
    let (n, nq, np) = (model.state_dim(), model.dist_dim(), model.output_dim());
    let fixed = match mode {
        SynthesisMode::FixedQr { q, r } => {
            if q.shape() != (nq, nq) || r.shape() != (np, np) || !is_spd(q) || !is_spd(r) {
                return config("fixed Q and R must be symmetric positive definite of matching size");
            }
            Some((q, r))
        }
        SynthesisMode::Joint => None,
    };
    let joint = fixed.is_none();
    let layout = Layout {
        n,
        nq,
        np,
        joint,
        pp: svec_pairs(n),
        qp: if joint { svec_pairs(nq) } else { vec![] },
        rp: if joint { svec_pairs(np) } else { vec![] },
    };
    let domain = CertDomain::of_model(model);
    let points = grid.points(&domain)?;
    let jacs: Vec<Jacobians> = points.iter().map(|pt| Jacobians::at(model, &pt.x, &pt.u, &pt.w)).collect();

    let zero_q = DMatrix::zeros(nq, nq);
    let zero_r = DMatrix::zeros(np, np);
    let (q0, r0) = fixed.unwrap_or((&zero_q, &zero_r));
    let zero_p = DMatrix::zeros(n, n);
    let t_idx = layout.t_idx();
    let dim = layout.dim();

    // Coefficient matrices of M_k with respect to each weight variable.
    let mut blocks = Vec::with_capacity(jacs.len() + 3);
    for jac in &jacs {
        let m0 = jac.lmi(&zero_p, q0, r0, kappa);
        let mut coeffs = Vec::new();
        for (v, &pair) in layout.pp.iter().enumerate() {
            coeffs.push((v, -(jac.lmi(&svec_basis(n, pair), q0, r0, kappa) - &m0)));
        }
        if layout.joint {
            for (v, &pair) in layout.qp.iter().enumerate() {
                coeffs.push((layout.q_off() + v, -(jac.lmi(&zero_p, &svec_basis(nq, pair), r0, kappa) - &m0)));
            }
            for (v, &pair) in layout.rp.iter().enumerate() {
                coeffs.push((layout.r_off() + v, -(jac.lmi(&zero_p, q0, &svec_basis(np, pair), kappa) - &m0)));
            }
        }
        coeffs.retain(|(_, c)| c.amax() > 0.0);
        coeffs.push((t_idx, DMatrix::identity(n + nq, n + nq)));
        blocks.push(Block { f0: -m0, coeffs });
    }
    let mut weight_block = |size: usize, off: usize, pairs: &[(usize, usize)]| {
        blocks.push(Block {
            f0: DMatrix::identity(size, size) * -opts.eps_pd,
            coeffs: pairs.iter().enumerate().map(|(v, &pair)| (off + v, svec_basis(size, pair))).collect(),
        });
    };
    weight_block(n, 0, &layout.pp);
    if layout.joint {
        weight_block(nq, layout.q_off(), &layout.qp);
        weight_block(np, layout.r_off(), &layout.rp);
    }
    let barrier = Barrier { blocks, dim, t_idx };

    // Start from identity weights and a slack that makes every block interior.
    let mut z = DVector::zeros(dim);
    let eye_svec = |pairs: &[(usize, usize)], z: &mut DVector<f64>, off: usize| {
        for (v, &(i, j)) in pairs.iter().enumerate() {
            z[off + v] = if i == j { 1.0 } else { 0.0 };
        }
    };
    eye_svec(&layout.pp, &mut z, 0);
    if layout.joint {
        eye_svec(&layout.qp, &mut z, layout.q_off());
        eye_svec(&layout.rp, &mut z, layout.r_off());
    }
    let worst_of = |z: &DVector<f64>| -> (f64, usize) {
        let (p, q, r) = layout.weights(z, fixed);
        jacs.iter()
            .enumerate()
            .map(|(k, jac)| (max_eigenvalue(&jac.lmi(&p, &q, &r, kappa)), k))
            .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
    };
    z[t_idx] = worst_of(&z).0 + 1.0;

    let order = barrier.order() as f64;
    let mut s = 1.0;
    let mut iters = 0usize;
    let infeasible = |reason: &str, z: &DVector<f64>, iters: usize, s: f64| -> Error {
        let (e, k) = worst_of(z);
        Error::Infeasible(Box::new(InfeasibilityReport {
            reason: reason.to_string(),
            iterations: iters,
            slack: z[t_idx],
            slack_lower_bound: z[t_idx] - order / s,
            worst_point: points[k].clone(),
            worst_eigenvalue: e,
        }))
    };

    'outer: loop {
        // Centering.
        loop {
            if z[t_idx] < FEASIBLE_SLACK {
                break 'outer;
            }
            if iters >= opts.max_iters {
                return Err(infeasible("iteration budget exhausted", &z, iters, s));
            }
            let Some(e) = barrier.eval(&z, s) else {
                return Err(Error::Internal("barrier iterate left the interior".into()));
            };
            let Some(dz) = newton_direction(&e) else {
                return Err(infeasible("singular Newton system", &z, iters, s));
            };
            iters += 1;
            let slope = e.grad.dot(&dz);
            if -slope / 2.0 <= 1e-10 {
                break;
            }
            let mut alpha = 1.0;
            let mut moved = false;
            while alpha > 1e-14 {
                let trial = &z + &dz * alpha;
                if let Some(v) = barrier.value(&trial) {
                    let total = v + s * trial[t_idx];
                    if total <= e.value + 0.25 * alpha * slope {
                        z = trial;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if z[t_idx] < FEASIBLE_SLACK {
            break;
        }
        // At a central point the optimal slack is at least t − m/s.
        if z[t_idx] - order / s > 0.0 {
            return Err(infeasible("no strictly feasible point exists", &z, iters, s));
        }
        if 1.0 / s < MIN_BARRIER {
            return Err(infeasible("barrier parameter exhausted", &z, iters, s));
        }
        s *= 10.0;
    }

    let (p, q, r) = layout.weights(&z, fixed);
    let cert = DetectabilityCertificate::new(symmetrize(&p), symmetrize(&q), symmetrize(&r), lambda)
        .map_err(|e| Error::Internal(format!("synthesized weights are invalid: {e}")))?
        .with_domain(domain);
    let report = verify_certificate(model, &cert, grid, opts.tol_psd)?;
    if !report.pass {
        return Err(Error::Internal(format!(
            "synthesized certificate fails verification with max eigenvalue {:.3e}",
            report.max_eigenvalue
        )));
    }
    Ok(cert.with_verification(report))
}

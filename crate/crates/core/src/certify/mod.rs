//! Quadratic detectability certificates `U(x₁, x₂) = |x₁ − x₂|²_P`.
//!
//! A certificate is obtained from the pointwise matrix inequality
//!
//! ```text
//! ⎡ PA + AᵀP + κP − CᵀRC    PB − CᵀRD  ⎤
//! ⎣ BᵀP − DᵀRC             −DᵀRD − Q   ⎦ ⪯ 0
//! ```
//!
//! with `A, B, C, D` the Jacobians of `f` and `h` with respect to `x` and
//! `w`, checked on a grid of `𝒳 × 𝒰 × 𝒲`. Between grid points nothing is
//! certified unless the caller knows the entries are affine along each axis
//! (then the vertices suffice).

mod dissipation;
mod sdp;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::linalg::{generalized_max_eigenvalue, is_spd, max_eigenvalue, serde_rows, serde_vec, symmetrize};
use crate::sysmodel::{BoxSet, SystemModel};

pub use dissipation::{dissipation_check, DissipationSample};
pub use sdp::{synthesize_certificate, SdpOptions, SynthesisMode};

/// Default absolute tolerance on the largest LMI eigenvalue.
pub const DEFAULT_TOL_PSD: f64 = 1e-8;

/// The boxes `𝒳 × 𝒰 × 𝒲` a certificate was checked on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertDomain {
    pub state: BoxSet,
    pub input: BoxSet,
    pub dist: BoxSet,
}

impl CertDomain {
    pub fn of_model(model: &SystemModel) -> Self {
        Self {
            state: model.state_box().clone(),
            input: model.input_box().clone(),
            dist: model.dist_box().clone(),
        }
    }

    fn is_within(&self, model: &SystemModel) -> bool {
        self.state.is_subset_of(model.state_box())
            && self.input.is_subset_of(model.input_box())
            && self.dist.is_subset_of(model.dist_box())
    }
}

/// Where the LMI is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GridSpec {
    /// Corners of the domain. Only meaningful when the LMI entries are affine
    /// along every axis; the caller asserts this.
    VerticesOnly,
    /// Tensor grid with the given number of points per axis.
    Counts {
        state: Vec<usize>,
        #[serde(default)]
        input: Vec<usize>,
        dist: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    #[serde(with = "serde_vec")]
    pub x: DVector<f64>,
    #[serde(with = "serde_vec")]
    pub u: DVector<f64>,
    #[serde(with = "serde_vec")]
    pub w: DVector<f64>,
}

impl GridSpec {
    pub fn points(&self, domain: &CertDomain) -> Result<Vec<GridPoint>> {
        let (xs, us, ws) = match self {
            GridSpec::VerticesOnly => (
                domain.state.vertices()?,
                domain.input.vertices()?,
                domain.dist.vertices()?,
            ),
            GridSpec::Counts { state, input, dist } => (
                domain.state.grid(state)?,
                domain.input.grid(input)?,
                domain.dist.grid(dist)?,
            ),
        };
        let mut out = Vec::with_capacity(xs.len() * us.len() * ws.len());
        for x in &xs {
            for u in &us {
                for w in &ws {
                    out.push(GridPoint { x: x.clone(), u: u.clone(), w: w.clone() });
                }
            }
        }
        if out.is_empty() {
            return config("empty verification grid");
        }
        Ok(out)
    }
}

/// Outcome of evaluating the LMI on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub grid: GridSpec,
    pub points: usize,
    pub max_eigenvalue: f64,
    pub worst_point: GridPoint,
    pub tol_psd: f64,
    pub pass: bool,
}

/// Why the synthesis gave up, with the grid point that violates the LMI most
/// at the last iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityReport {
    pub reason: String,
    pub iterations: usize,
    /// Slack `t` at the last iterate: the LMI holds with `⪯ t·I`.
    pub slack: f64,
    /// Lower bound on the optimal slack from the barrier duality gap.
    pub slack_lower_bound: f64,
    pub worst_point: GridPoint,
    pub worst_eigenvalue: f64,
}

impl fmt::Display for InfeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} after {} iterations (slack {:.3e}, lower bound {:.3e}); worst point x = {:?}, w = {:?} with eigenvalue {:.3e}",
            self.reason,
            self.iterations,
            self.slack,
            self.slack_lower_bound,
            self.worst_point.x.as_slice(),
            self.worst_point.w.as_slice(),
            self.worst_eigenvalue
        )
    }
}

/// Quadratic detectability certificate.
///
/// `p` is the metric of `U`; `p1 ⪯ p ⪯ p2` are the sandwich bounds and
/// `q`, `r` the supply-rate weights of the discounted dissipation inequality
/// with rate `kappa = −ln lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CertificateFile", into = "CertificateFile")]
pub struct DetectabilityCertificate {
    p: DMatrix<f64>,
    p1: DMatrix<f64>,
    p2: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    lambda: f64,
    kappa: f64,
    domain: Option<CertDomain>,
    verification: Option<VerificationReport>,
}

/// JSON layout of a certificate. `p1` and `p2` default to `p`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CertificateFile {
    #[serde(with = "serde_rows")]
    p: DMatrix<f64>,
    #[serde(default, with = "opt_rows", skip_serializing_if = "Option::is_none")]
    p1: Option<DMatrix<f64>>,
    #[serde(default, with = "opt_rows", skip_serializing_if = "Option::is_none")]
    p2: Option<DMatrix<f64>>,
    #[serde(with = "serde_rows")]
    q: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    r: DMatrix<f64>,
    lambda: f64,
    #[serde(default)]
    kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<CertDomain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    verification: Option<VerificationReport>,
}

mod opt_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::{matrix_from_rows, matrix_to_rows};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(matrix_to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Option::<Vec<Vec<f64>>>::deserialize(d)?
            .map(|rows| matrix_from_rows(&rows).map_err(serde::de::Error::custom))
            .transpose()
    }
}

impl TryFrom<CertificateFile> for DetectabilityCertificate {
    type Error = Error;

    fn try_from(f: CertificateFile) -> Result<Self> {
        let mut cert = Self::with_bounds(
            f.p1.clone().unwrap_or_else(|| f.p.clone()),
            f.p.clone(),
            f.p2.clone().unwrap_or_else(|| f.p.clone()),
            f.q,
            f.r,
            f.lambda,
        )?;
        if let Some(k) = f.kappa {
            if (k + f.lambda.ln()).abs() > 1e-12 {
                return config(format!("kappa = {k} does not equal -ln(lambda) = {}", -f.lambda.ln()));
            }
        }
        cert.domain = f.domain;
        cert.verification = f.verification;
        Ok(cert)
    }
}

impl From<DetectabilityCertificate> for CertificateFile {
    fn from(c: DetectabilityCertificate) -> Self {
        let p1 = (c.p1 != c.p).then_some(c.p1);
        let p2 = (c.p2 != c.p).then_some(c.p2);
        Self {
            p: c.p,
            p1,
            p2,
            q: c.q,
            r: c.r,
            lambda: c.lambda,
            kappa: Some(c.kappa),
            domain: c.domain,
            verification: c.verification,
        }
    }
}

fn check_spd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !is_spd(m) {
        return config(format!("{name} must be symmetric positive definite"));
    }
    Ok(())
}

impl DetectabilityCertificate {
    /// Certificate with `P₁ = P₂ = P`.
    pub fn new(p: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>, lambda: f64) -> Result<Self> {
        Self::with_bounds(p.clone(), p.clone(), p, q, r, lambda)
    }

    /// Certificate with metric `p` and sandwich bounds `p1 ⪯ p ⪯ p2`.
    pub fn with_bounds(
        p1: DMatrix<f64>,
        p: DMatrix<f64>,
        p2: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return config(format!("lambda must lie in (0, 1), got {lambda}"));
        }
        for (name, m) in [("P1", &p1), ("P", &p), ("P2", &p2), ("Q", &q), ("R", &r)] {
            check_spd(name, m)?;
        }
        if p1.shape() != p.shape() || p2.shape() != p.shape() {
            return config("P1, P and P2 must have the same size");
        }
        let dominated = |lo: &DMatrix<f64>, hi: &DMatrix<f64>| -> Result<bool> {
            Ok(lo == hi || generalized_max_eigenvalue(lo, hi)? <= 1.0 + 1e-9)
        };
        if !dominated(&p1, &p)? || !dominated(&p, &p2)? {
            return config("certificate bounds violate P1 ⪯ P ⪯ P2");
        }
        Ok(Self {
            p,
            p1,
            p2,
            q,
            r,
            lambda,
            kappa: -lambda.ln(),
            domain: None,
            verification: None,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }
    pub fn p1(&self) -> &DMatrix<f64> {
        &self.p1
    }
    pub fn p2(&self) -> &DMatrix<f64> {
        &self.p2
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn domain(&self) -> Option<&CertDomain> {
        self.domain.as_ref()
    }
    pub fn verification(&self) -> Option<&VerificationReport> {
        self.verification.as_ref()
    }

    pub fn with_domain(mut self, domain: CertDomain) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn with_verification(mut self, report: VerificationReport) -> Self {
        self.verification = Some(report);
        self
    }

    /// `λmax(P₂, P₁)`, the largest generalized eigenvalue of the pencil.
    pub fn bound_ratio(&self) -> f64 {
        generalized_max_eigenvalue(&self.p2, &self.p1).expect("P1 is positive definite by construction")
    }

    /// `U(x₁, x₂) = |x₁ − x₂|²_P`.
    pub fn lyapunov(&self, x1: &DVector<f64>, x2: &DVector<f64>) -> f64 {
        crate::linalg::quad_form(&(x1 - x2), &self.p)
    }
}

/// The LMI block matrix at `(x, u, w)`, symmetrized.
#[allow(clippy::too_many_arguments)]
pub fn lmi_matrix(
    model: &SystemModel,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    kappa: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let (n, nq, np) = (model.state_dim(), model.dist_dim(), model.output_dim());
    if p.shape() != (n, n) || q.shape() != (nq, nq) || r.shape() != (np, np) {
        return config(format!(
            "weights have shapes {:?}, {:?}, {:?}; expected {n}×{n}, {nq}×{nq}, {np}×{np}",
            p.shape(),
            q.shape(),
            r.shape()
        ));
    }
    if x.len() != n || u.len() != model.input_dim() || w.len() != nq {
        return config("evaluation point has the wrong dimensions");
    }
    let jac = Jacobians::at(model, x, u, w);
    Ok(jac.lmi(p, q, r, kappa))
}

/// `A, B, C, D` at one point.
#[derive(Debug, Clone)]
pub(crate) struct Jacobians {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl Jacobians {
    pub(crate) fn at(model: &SystemModel, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Self {
        Self {
            a: model.jac_f_x(x, u, w),
            b: model.jac_f_w(x, u, w),
            c: model.jac_h_x(x, u, w),
            d: model.jac_h_w(x, u, w),
        }
    }

    pub(crate) fn lmi(&self, p: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, kappa: f64) -> DMatrix<f64> {
        let (n, nq) = (self.a.nrows(), self.b.ncols());
        let (a, b, c, d) = (&self.a, &self.b, &self.c, &self.d);
        let top_left = p * a + a.transpose() * p + p * kappa - c.transpose() * r * c;
        let top_right = p * b - c.transpose() * r * d;
        let bottom_right = -(d.transpose() * r * d) - q;
        let mut m = DMatrix::zeros(n + nq, n + nq);
        m.view_mut((0, 0), (n, n)).copy_from(&top_left);
        m.view_mut((0, n), (n, nq)).copy_from(&top_right);
        m.view_mut((n, 0), (nq, n)).copy_from(&top_right.transpose());
        m.view_mut((n, n), (nq, nq)).copy_from(&bottom_right);
        symmetrize(&m)
    }
}

/// Evaluates the LMI with the certificate's `P`, `Q`, `R`, `κ` at every grid
/// point of its domain (the model's boxes when the certificate has none).
pub fn verify_certificate(
    model: &SystemModel,
    cert: &DetectabilityCertificate,
    grid: &GridSpec,
    tol_psd: f64,
) -> Result<VerificationReport> {
    let domain = cert.domain.clone().unwrap_or_else(|| CertDomain::of_model(model));
    if !domain.is_within(model) {
        return config("certificate domain is not contained in the model's constraint sets");
    }
    let points = grid.points(&domain)?;
    let mut worst = (f64::NEG_INFINITY, 0usize);
    for (k, pt) in points.iter().enumerate() {
        let m = lmi_matrix(model, &cert.p, &cert.q, &cert.r, cert.kappa, &pt.x, &pt.u, &pt.w)?;
        let e = max_eigenvalue(&m);
        if e > worst.0 || e.is_nan() {
            worst = (e, k);
        }
    }
    Ok(VerificationReport {
        grid: grid.clone(),
        points: points.len(),
        max_eigenvalue: worst.0,
        worst_point: points[worst.1].clone(),
        tol_psd,
        pass: worst.0 <= tol_psd,
    })
}

/// Rescales the certificate so that its weights become `(P2t, Qt, Rt)`.
///
/// With `K = 1 / max{λmax(P₂, P2t), λmax(Q, Qt), λmax(R, Rt)}` the function
/// `K·U` satisfies the same inequalities with `P₁ ← K·P₁`.
pub fn scale_certificate(
    cert: &DetectabilityCertificate,
    p2t: &DMatrix<f64>,
    qt: &DMatrix<f64>,
    rt: &DMatrix<f64>,
) -> Result<DetectabilityCertificate> {
    for (name, m) in [("P2 target", p2t), ("Q target", qt), ("R target", rt)] {
        check_spd(name, m)?;
    }
    if p2t.shape() != cert.p2.shape() || qt.shape() != cert.q.shape() || rt.shape() != cert.r.shape() {
        return config("target weights do not match the certificate dimensions");
    }
    let k = 1.0
        / generalized_max_eigenvalue(&cert.p2, p2t)?
            .max(generalized_max_eigenvalue(&cert.q, qt)?)
            .max(generalized_max_eigenvalue(&cert.r, rt)?);
    Ok(DetectabilityCertificate {
        p: &cert.p * k,
        p1: &cert.p1 * k,
        p2: p2t.clone(),
        q: qt.clone(),
        r: rt.clone(),
        lambda: cert.lambda,
        kappa: cert.kappa,
        domain: cert.domain.clone(),
        verification: cert.verification.clone(),
    })
}

/// Strict lower bound `−ln(4λmax(P₂,P₁)) / ln λ + δ̄` on the horizon.
pub fn min_horizon(cert: &DetectabilityCertificate, delta_bar: f64) -> f64 {
    horizon_bound(cert.bound_ratio(), cert.lambda, delta_bar)
}

/// [`min_horizon`] for a given ratio `λmax(P₂, P₁)`.
pub fn horizon_bound(bound_ratio: f64, lambda: f64, delta_bar: f64) -> f64 {
    -(4.0 * bound_ratio).ln() / lambda.ln() + delta_bar
}

/// `ρ = (4λmax(P₂,P₁))^{1/(T−δ̄)} λ`, defined when `T` exceeds
/// [`min_horizon`].
pub fn contraction_rate(cert: &DetectabilityCertificate, horizon: f64, delta_bar: f64) -> Result<f64> {
    let bound = min_horizon(cert, delta_bar);
    if !(horizon > bound) || !(horizon > delta_bar) {
        return Err(Error::Horizon(format!(
            "T = {horizon} must exceed {bound} so that 4·λmax(P2,P1)·λ^(T−δ̄) < 1 with δ̄ = {delta_bar}"
        )));
    }
    Ok((4.0 * cert.bound_ratio()).powf(1.0 / (horizon - delta_bar)) * cert.lambda)
}

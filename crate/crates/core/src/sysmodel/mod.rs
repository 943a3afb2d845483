//! Continuous-time system description `ẋ = f(x, u, w)`, `y = h(x, u, w)`,
//! its box constraint sets, and piecewise-constant signals.
//!
//! Models are immutable once built and can be shared between threads.
//! Existence and uniqueness of solutions on the whole time axis is a user
//! obligation; nothing here checks it.

mod batch_reactor;
mod polynomial;
mod signal;

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

pub use batch_reactor::batch_reactor;
pub use polynomial::{Monomial, PolynomialModelFile};
pub use signal::PiecewiseSignal;

/// Right-hand side and output map of a model.
///
/// The Jacobian methods return `None` when no analytic expression is
/// available; [`SystemModel`] then falls back to central differences.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn f(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64>;
    fn h(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64>;

    fn jac_f_x(&self, _x: &DVector<f64>, _u: &DVector<f64>, _w: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    fn jac_f_w(&self, _x: &DVector<f64>, _u: &DVector<f64>, _w: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    fn jac_h_x(&self, _x: &DVector<f64>, _u: &DVector<f64>, _w: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    fn jac_h_w(&self, _x: &DVector<f64>, _u: &DVector<f64>, _w: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// Axis-aligned box `{ v : lower ≤ v ≤ upper }`; infinite bounds allowed.
///
/// Serialized as an array of `[lo, hi]` pairs, with `null` for an infinite
/// bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return config("box bounds have different lengths");
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return config(format!("box is empty along axis {i}: [{lo}, {hi}]"));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    /// Same interval on every axis.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn from_pairs(pairs: &[[f64; 2]]) -> Result<Self> {
        Self::new(pairs.iter().map(|p| p[0]).collect(), pairs.iter().map(|p| p[1]).collect())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|v| v.is_finite())
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        v.len() == self.dim()
            && v
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *x >= lo - tol && *x <= hi + tol)
    }

    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            v.len(),
            v.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(x, (lo, hi))| x.clamp(*lo, *hi)),
        )
    }

    /// Largest violation of the bounds (zero inside the box).
    pub fn violation(&self, v: &DVector<f64>) -> f64 {
        v.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| (lo - x).max(x - hi).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn is_subset_of(&self, other: &BoxSet) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|i| self.lower[i] >= other.lower[i] && self.upper[i] <= other.upper[i])
    }

    /// All `2^dim` corners. A zero-dimensional box has one (empty) vertex.
    pub fn vertices(&self) -> Result<Vec<DVector<f64>>> {
        if !self.is_bounded() {
            return config("cannot enumerate vertices of an unbounded box");
        }
        let d = self.dim();
        Ok((0..1usize << d)
            .map(|mask| {
                DVector::from_fn(d, |i, _| {
                    if mask >> i & 1 == 0 {
                        self.lower[i]
                    } else {
                        self.upper[i]
                    }
                })
            })
            .collect())
    }

    /// Tensor grid with `counts[i]` points along axis `i` (one point means
    /// the midpoint).
    pub fn grid(&self, counts: &[usize]) -> Result<Vec<DVector<f64>>> {
        if counts.len() != self.dim() {
            return config(format!(
                "grid has {} axis counts for a {}-dimensional box",
                counts.len(),
                self.dim()
            ));
        }
        if counts.contains(&0) {
            return config("grid axis with zero points");
        }
        if !self.is_bounded() {
            return config("cannot grid an unbounded box");
        }
        let axes: Vec<Vec<f64>> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let (lo, hi) = (self.lower[i], self.upper[i]);
                if c == 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..c).map(|k| lo + (hi - lo) * k as f64 / (c - 1) as f64).collect()
                }
            })
            .collect();
        let mut points = vec![Vec::new()];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        Ok(points.into_iter().map(DVector::from_vec).collect())
    }
}

impl Serialize for BoxSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let finite = |v: f64| v.is_finite().then_some(v);
        let pairs: Vec<[Option<f64>; 2]> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| [finite(*lo), finite(*hi)])
            .collect();
        pairs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoxSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs = Vec::<[Option<f64>; 2]>::deserialize(d)?;
        BoxSet::new(
            pairs.iter().map(|p| p[0].unwrap_or(f64::NEG_INFINITY)).collect(),
            pairs.iter().map(|p| p[1].unwrap_or(f64::INFINITY)).collect(),
        )
        .map_err(serde::de::Error::custom)
    }
}

/// A continuous-time model with its constraint sets 𝒳, 𝒰, 𝒲, 𝒴.
#[derive(Debug, Clone)]
pub struct SystemModel {
    name: String,
    state_dim: usize,
    input_dim: usize,
    dist_dim: usize,
    output_dim: usize,
    state_box: BoxSet,
    input_box: BoxSet,
    dist_box: BoxSet,
    output_box: BoxSet,
    output_affine: bool,
    dynamics: Arc<dyn Dynamics>,
}

impl SystemModel {
    /// Builds a model with unbounded constraint sets; narrow them with the
    /// `with_*_box` methods.
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        input_dim: usize,
        dist_dim: usize,
        output_dim: usize,
        dynamics: Arc<dyn Dynamics>,
    ) -> Result<Self> {
        if state_dim == 0 || dist_dim == 0 || output_dim == 0 {
            return config("state, disturbance and output dimensions must be positive");
        }
        Ok(Self {
            name: name.into(),
            state_dim,
            input_dim,
            dist_dim,
            output_dim,
            state_box: BoxSet::unbounded(state_dim),
            input_box: BoxSet::unbounded(input_dim),
            dist_box: BoxSet::unbounded(dist_dim),
            output_box: BoxSet::unbounded(output_dim),
            output_affine: false,
            dynamics,
        })
    }

    pub fn with_state_box(mut self, b: BoxSet) -> Result<Self> {
        check_dim("state box", b.dim(), self.state_dim)?;
        self.state_box = b;
        Ok(self)
    }

    pub fn with_input_box(mut self, b: BoxSet) -> Result<Self> {
        check_dim("input box", b.dim(), self.input_dim)?;
        self.input_box = b;
        Ok(self)
    }

    pub fn with_dist_box(mut self, b: BoxSet) -> Result<Self> {
        check_dim("disturbance box", b.dim(), self.dist_dim)?;
        self.dist_box = b;
        Ok(self)
    }

    pub fn with_output_box(mut self, b: BoxSet) -> Result<Self> {
        check_dim("output box", b.dim(), self.output_dim)?;
        self.output_box = b;
        Ok(self)
    }

    /// Flags `h` as affine in `(x, w)`, which the LMI certificate requires.
    pub fn with_output_affine(mut self, affine: bool) -> Self {
        self.output_affine = affine;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn dist_dim(&self) -> usize {
        self.dist_dim
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }
    pub fn state_box(&self) -> &BoxSet {
        &self.state_box
    }
    pub fn input_box(&self) -> &BoxSet {
        &self.input_box
    }
    pub fn dist_box(&self) -> &BoxSet {
        &self.dist_box
    }
    pub fn output_box(&self) -> &BoxSet {
        &self.output_box
    }
    pub fn output_affine(&self) -> bool {
        self.output_affine
    }

    pub fn f(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        self.dynamics.f(x, u, w)
    }

    pub fn h(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        self.dynamics.h(x, u, w)
    }

    /// ∂f/∂x (n×n).
    pub fn jac_f_x(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        self.dynamics
            .jac_f_x(x, u, w)
            .unwrap_or_else(|| central_difference(|v| self.f(v, u, w), x))
    }

    /// ∂f/∂w (n×q).
    pub fn jac_f_w(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        self.dynamics
            .jac_f_w(x, u, w)
            .unwrap_or_else(|| central_difference(|v| self.f(x, u, v), w))
    }

    /// ∂h/∂x (p×n).
    pub fn jac_h_x(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        self.dynamics
            .jac_h_x(x, u, w)
            .unwrap_or_else(|| central_difference(|v| self.h(v, u, w), x))
    }

    /// ∂h/∂w (p×q).
    pub fn jac_h_w(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        self.dynamics
            .jac_h_w(x, u, w)
            .unwrap_or_else(|| central_difference(|v| self.h(x, u, v), w))
    }

    /// Zero-length input vector for models without controls.
    pub fn no_input(&self) -> DVector<f64> {
        DVector::zeros(self.input_dim)
    }
}

fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return config(format!("{what} has dimension {got}, expected {want}"));
    }
    Ok(())
}

/// Central-difference Jacobian with per-coordinate step `1e-6·max(1, |v_i|)`.
pub fn central_difference<F>(g: F, at: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let rows = g(at).len();
    let mut jac = DMatrix::zeros(rows, at.len());
    for i in 0..at.len() {
        let step = 1e-6 * at[i].abs().max(1.0);
        let mut plus = at.clone();
        let mut minus = at.clone();
        plus[i] += step;
        minus[i] -= step;
        let col = (g(&plus) - g(&minus)) / (plus[i] - minus[i]);
        jac.set_column(i, &col);
    }
    jac
}

/// Largest relative deviation between the model's `∂f/∂x` and a central
/// difference, over the given `(x, u, w)` points. The relative error is
/// `max|J − J_fd| / max(1, max|J|)`.
pub fn jacobian_fd_error(model: &SystemModel, points: &[(DVector<f64>, DVector<f64>, DVector<f64>)]) -> f64 {
    let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).amax() / a.amax().max(1.0);
    points
        .iter()
        .map(|(x, u, w)| {
            let fx = rel(&model.jac_f_x(x, u, w), &central_difference(|v| model.f(v, u, w), x));
            let fw = rel(&model.jac_f_w(x, u, w), &central_difference(|v| model.f(x, u, v), w));
            let hx = rel(&model.jac_h_x(x, u, w), &central_difference(|v| model.h(v, u, w), x));
            let hw = rel(&model.jac_h_w(x, u, w), &central_difference(|v| model.h(x, u, v), w));
            fx.max(fw).max(hx).max(hw)
        })
        .fold(0.0, f64::max)
}

/// Checks `h(z + a) + h(z + b) − h(z) − h(z + a + b) = 0` in the stacked
/// `(x, w)` coordinates, which holds for every affine map. Returns the largest
/// residual scaled by the output magnitude.
pub fn affinity_defect(
    model: &SystemModel,
    samples: &[(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)],
    u: &DVector<f64>,
) -> f64 {
    let n = model.state_dim();
    let split = |v: &DVector<f64>| (v.rows(0, n).into_owned(), v.rows(n, v.len() - n).into_owned());
    let h = |v: &DVector<f64>| {
        let (x, w) = split(v);
        model.h(&x, u, &w)
    };
    samples
        .iter()
        .map(|(x, w, a, b)| {
            let mut z = DVector::zeros(n + w.len());
            z.rows_mut(0, n).copy_from(x);
            z.rows_mut(n, w.len()).copy_from(w);
            let (hz, ha, hb, hab) = (h(&z), h(&(&z + a)), h(&(&z + b)), h(&(&z + a + b)));
            let scale = hz.amax().max(ha.amax()).max(hb.amax()).max(hab.amax()).max(1.0);
            (ha + hb - hz - hab).amax() / scale
        })
        .fold(0.0, f64::max)
}

/// Where a model comes from: a built-in name or a polynomial model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Builtin(String),
    File { file: String },
}

impl ModelRef {
    pub fn load(&self, base_dir: Option<&Path>) -> Result<SystemModel> {
        match self {
            ModelRef::Builtin(name) => builtin(name),
            ModelRef::File { file } => {
                let path = match base_dir {
                    Some(dir) => dir.join(file),
                    None => Path::new(file).to_path_buf(),
                };
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    Error::Config(format!("cannot read model file {}: {e}", path.display()))
                })?;
                PolynomialModelFile::from_json(&text)?.build()
            }
        }
    }
}

/// Looks up a built-in model by name.
pub fn builtin(name: &str) -> Result<SystemModel> {
    match name {
        "batch_reactor" => Ok(batch_reactor()),
        other => config(format!("unknown built-in model `{other}`")),
    }
}

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::linalg::serde_vecs;

/// Snap tolerance, in units of the piece length, for locating breakpoints.
const GRID_SNAP: f64 = 1e-9;

/// Right-continuous piecewise-constant signal on a uniform grid.
///
/// `values[k]` holds on `[t0 + k·dt, t0 + (k+1)·dt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseSignal {
    t0: f64,
    dt: f64,
    dim: usize,
    #[serde(with = "serde_vecs")]
    values: Vec<DVector<f64>>,
}

impl PiecewiseSignal {
    pub fn new(t0: f64, dt: f64, dim: usize, values: Vec<DVector<f64>>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return config(format!("signal step must be positive and finite, got {dt}"));
        }
        if let Some(bad) = values.iter().position(|v| v.len() != dim) {
            return config(format!("signal piece {bad} has dimension {}, expected {dim}", values[bad].len()));
        }
        Ok(Self { t0, dt, dim, values })
    }

    /// `len` pieces all equal to `value`.
    pub fn constant(t0: f64, dt: f64, len: usize, value: DVector<f64>) -> Result<Self> {
        let dim = value.len();
        Self::new(t0, dt, dim, vec![value; len])
    }

    pub fn zeros(t0: f64, dt: f64, len: usize, dim: usize) -> Result<Self> {
        Self::constant(t0, dt, len, DVector::zeros(dim))
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }
    pub fn into_values(self) -> Vec<DVector<f64>> {
        self.values
    }

    /// End of the half-open domain `[t0, t0 + dt·len)`.
    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * self.values.len() as f64
    }

    /// Index of the piece covering `t`; breakpoints belong to the right piece.
    pub fn index_at(&self, t: f64) -> Result<usize> {
        let r = (t - self.t0) / self.dt;
        let k = (r + GRID_SNAP).floor();
        if !r.is_finite() || k < 0.0 || k >= self.values.len() as f64 {
            return Err(Error::Domain(format!(
                "t = {t} outside signal domain [{}, {})",
                self.t0,
                self.t_end()
            )));
        }
        Ok(k as usize)
    }

    pub fn eval(&self, t: f64) -> Result<&DVector<f64>> {
        Ok(&self.values[self.index_at(t)?])
    }

    /// Pieces `start..start + len` as a new signal starting at `new_t0`.
    pub fn slice(&self, start: usize, len: usize, new_t0: f64) -> Result<Self> {
        if start + len > self.values.len() {
            return Err(Error::Domain(format!(
                "slice {start}..{} exceeds {} pieces",
                start + len,
                self.values.len()
            )));
        }
        Self::new(new_t0, self.dt, self.dim, self.values[start..start + len].to_vec())
    }

    /// Number of integer steps of size `dt` in `span`, if `span` is such a
    /// multiple within relative tolerance `1e-9`.
    pub fn steps_in(span: f64, dt: f64) -> Option<usize> {
        let r = span / dt;
        let k = r.round();
        ((r - k).abs() <= 1e-9 * k.max(1.0) && k >= 0.0).then_some(k as usize)
    }

    /// Re-expresses the signal on a finer grid `fine_dt` that divides `dt`.
    pub fn refine(&self, fine_dt: f64) -> Result<Self> {
        let Some(factor) = Self::steps_in(self.dt, fine_dt).filter(|k| *k > 0) else {
            return config(format!("step {fine_dt} does not divide signal step {}", self.dt));
        };
        if factor == 1 {
            return Ok(self.clone());
        }
        let values = self
            .values
            .iter()
            .flat_map(|v| std::iter::repeat_n(v.clone(), factor))
            .collect();
        Self::new(self.t0, fine_dt, self.dim, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_piece() -> PiecewiseSignal {
        PiecewiseSignal::new(
            0.0,
            0.01,
            1,
            vec![DVector::from_element(1, 1.0), DVector::from_element(1, 2.0)],
        )
        .unwrap()
    }

    #[test]
    fn right_continuous_at_breakpoint() {
        assert_eq!(two_piece().eval(0.01).unwrap()[0], 2.0);
    }

    #[test]
    fn interior_of_first_piece() {
        assert_eq!(two_piece().eval(0.0099).unwrap()[0], 1.0);
    }

    #[test]
    fn half_open_domain() {
        assert!(matches!(two_piece().eval(0.02), Err(Error::Domain(_))));
        assert!(matches!(two_piece().eval(-1e-6), Err(Error::Domain(_))));
    }

    #[test]
    fn breakpoints_survive_accumulated_rounding() {
        let s = PiecewiseSignal::zeros(0.0, 0.01, 100, 1).unwrap();
        let t: f64 = (0..37).map(|_| 0.01).sum();
        assert_eq!(s.index_at(t).unwrap(), 37);
    }

    #[test]
    fn refine_repeats_pieces() {
        let s = two_piece().refine(0.005).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.eval(0.012).unwrap()[0], 2.0);
        assert!(two_piece().refine(0.003).is_err());
    }

    #[test]
    fn rejects_bad_step_and_dimension() {
        assert!(PiecewiseSignal::new(0.0, 0.0, 1, vec![]).is_err());
        assert!(PiecewiseSignal::new(0.0, 0.1, 2, vec![DVector::zeros(1)]).is_err());
    }
}

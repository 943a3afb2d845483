//! Moving horizon estimation with the discounted objective
//!
//! ```text
//! J = 2|χ − x̂(tᵢ − T_tᵢ)|²_{P₂} λ^{T_tᵢ} + ∫₀^{T_tᵢ} λ^{T_tᵢ − τ} (2|w(τ)|²_Q + |y(τ) − ȳ(τ)|²_R) dτ
//! ```
//!
//! over the window `[tᵢ − T_tᵢ, tᵢ]`, `T_tᵢ = min{tᵢ, T}`. Decision variables
//! are the window's initial state and the disturbance pieces on the `dt` grid;
//! states are eliminated by forward integration.

mod objective;
mod run;
mod sampling;
mod solver;

use serde::{Deserialize, Serialize};

use crate::certify::DetectabilityCertificate;
use crate::error::{config, Error, Result};
use crate::sysmodel::{PiecewiseSignal, SystemModel};

pub use objective::{discount_weights, mhe_objective};
pub use run::{run_mhe, EstimationRun, RunData, SampleRecord, Truth};
pub use sampling::{benchmark_schedule, make_sampler, EventTrigger, SamplerSpec, SamplingSet};
pub use solver::{solve_fie, solve_mhe, MheSolution, SolverStats, Termination};

/// Tolerances of the window solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Stop once the 2-norm of the projected gradient is below this.
    pub grad_tol: f64,
    /// Levenberg–Marquardt iterations per penalty round.
    pub max_iters: usize,
    pub lm_damping: f64,
    /// Initial weight of the state-constraint penalty.
    pub penalty: f64,
    pub max_penalty_rounds: usize,
    /// Largest accepted box violation of a shooting-node state.
    pub constraint_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 100,
            lm_damping: 1e-3,
            penalty: 1e6,
            max_penalty_rounds: 12,
            constraint_tol: 1e-9,
        }
    }
}

/// Everything the estimator needs besides the model and the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MheConfig {
    /// Horizon `T` in seconds.
    pub horizon: f64,
    pub dt: f64,
    pub cert: DetectabilityCertificate,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Equidistant bookkeeping: `δ̄ = 0` in the horizon condition and the
    /// tighter disturbance constant in the error bound.
    #[serde(default)]
    pub equidistant_mode: bool,
}

impl MheConfig {
    pub fn new(horizon: f64, dt: f64, cert: DetectabilityCertificate, sampler: SamplerSpec) -> Self {
        Self { horizon, dt, cert, sampler, solver: SolverOptions::default(), equidistant_mode: false }
    }

    /// Horizon in grid steps.
    pub fn horizon_steps(&self) -> Result<usize> {
        PiecewiseSignal::steps_in(self.horizon, self.dt)
            .filter(|&k| k > 0)
            .ok_or_else(|| Error::Config(format!("T = {} is not a positive multiple of dt = {}", self.horizon, self.dt)))
    }

    /// Static checks against the model.
    pub fn validate(&self, model: &SystemModel) -> Result<()> {
        if !(self.dt > 0.0) {
            return config("dt must be positive");
        }
        self.horizon_steps()?;
        let (n, q, p) = (model.state_dim(), model.dist_dim(), model.output_dim());
        if self.cert.p2().nrows() != n || self.cert.q().nrows() != q || self.cert.r().nrows() != p {
            return config("certificate dimensions do not match the model");
        }
        self.sampler.validate(self.dt)?;
        if self.equidistant_mode && !matches!(self.sampler, SamplerSpec::Equidistant { .. }) {
            return config("equidistant mode needs an equidistant sampler");
        }
        if let SamplerSpec::EventTriggered { max_gap, .. } = self.sampler {
            if max_gap >= self.horizon {
                return Err(Error::Horizon(format!(
                    "event sampler may leave gaps up to {max_gap}, not below T = {}",
                    self.horizon
                )));
            }
        }
        Ok(())
    }

    /// Checks `T > δ̄` and, in equidistant mode, that `T` is a multiple of the
    /// period so that every window starts at a sampling time or at 0.
    pub fn validate_sampling(&self, set: &SamplingSet) -> Result<()> {
        let nt = self.horizon_steps()?;
        if set.max_gap_steps() >= nt {
            return Err(Error::Horizon(format!(
                "T = {} must exceed the largest sampling gap δ̄ = {}",
                self.horizon,
                set.delta_bar()
            )));
        }
        if self.equidistant_mode {
            let SamplerSpec::Equidistant { period } = self.sampler else {
                return config("equidistant mode needs an equidistant sampler");
            };
            let ps = PiecewiseSignal::steps_in(period, self.dt).expect("validated period");
            if nt % ps != 0 {
                return config(format!("T = {} is not a multiple of the period {period}", self.horizon));
            }
            for &k in set.indices() {
                let start = k - k.min(nt);
                if start != 0 && set.indices().binary_search(&start).is_err() {
                    return config(format!("window start {} is not a sampling time", start as f64 * self.dt));
                }
            }
        }
        Ok(())
    }

    /// `δ̄` used in the horizon condition: 0 in equidistant mode.
    pub fn effective_delta_bar(&self, set: &SamplingSet) -> f64 {
        if self.equidistant_mode {
            0.0
        } else {
            set.delta_bar()
        }
    }

    /// Disturbance constant of the error bound.
    pub fn bound_factor(&self) -> f64 {
        if self.equidistant_mode {
            4.0
        } else {
            8.0
        }
    }
}

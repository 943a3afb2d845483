//! Moving horizon estimation for nonlinear continuous-time systems with a
//! discounted least-squares objective.
//!
//! The crate is organised along the estimation pipeline:
//!
//! * [`sysmodel`]: models `ẋ = f(x, u, w)`, `y = h(x, u, w)`, box constraint
//!   sets and piecewise-constant signals.
//! * [`integrate`]: fixed-step RK4 trajectories and step sensitivities.
//! * [`certify`]: quadratic detectability certificates from a pointwise LMI,
//!   their verification, rescaling and horizon design.
//! * [`mhe`]: sampling sets, the discounted objective, the window solver and
//!   the receding-horizon loop.
//! * [`analysis`]: theoretical error bounds and their audit along runs.

pub mod analysis;
pub mod certify;
pub mod error;
pub mod integrate;
pub mod linalg;
pub mod mhe;
pub mod quadrature;
pub mod sysmodel;

pub use error::{Error, Result};

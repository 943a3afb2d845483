//! Run configuration files.

use std::path::{Path, PathBuf};

use mhect_core::certify::{
    synthesize_certificate, verify_certificate, DetectabilityCertificate, GridSpec, SdpOptions, SynthesisMode,
    DEFAULT_TOL_PSD,
};
use mhect_core::mhe::{run_mhe, EstimationRun, MheConfig, RunData, SamplerSpec, SolverOptions};
use mhect_core::sysmodel::{ModelRef, PiecewiseSignal, SystemModel};
use mhect_core::Error;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::prng::{generate_disturbance, DisturbanceSpec};
use crate::CliResult;

/// Certificate read from disk or synthesized on the model's boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CertificateSource {
    File {
        path: String,
        /// Re-verify on this grid before use.
        #[serde(default)]
        verify: Option<GridSpec>,
    },
    Synthesize {
        lambda: f64,
        mode: SynthesisMode,
        #[serde(default = "vertices")]
        grid: GridSpec,
        #[serde(default)]
        sdp: SdpOptions,
    },
}

fn vertices() -> GridSpec {
    GridSpec::VerticesOnly
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub model: ModelRef,
    pub certificate: CertificateSource,
    pub chi: Vec<f64>,
    pub chi_hat: Vec<f64>,
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub seed: u64,
    pub t_sim: f64,
    pub sampler: SamplerSpec,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default)]
    pub equidistant_mode: bool,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Constant control input, for models with inputs.
    #[serde(default)]
    pub input: Vec<f64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// A validated scenario with its model and certificate loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: SystemModel,
    pub cert: DetectabilityCertificate,
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)
    }

    /// Loads the model and the certificate; relative paths resolve against
    /// `base_dir`.
    pub fn load(self, base_dir: Option<&Path>) -> CliResult<Scenario> {
        let model = self.model.load(base_dir)?;
        self.check(&model)?;
        let cert = match &self.certificate {
            CertificateSource::File { path, verify } => {
                let full = base_dir.map_or_else(|| PathBuf::from(path), |d| d.join(path));
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| Error::Config(format!("cannot read certificate {}: {e}", full.display())))?;
                let cert = DetectabilityCertificate::from_json(&text)?;
                if let Some(grid) = verify {
                    let rep = verify_certificate(&model, &cert, grid, DEFAULT_TOL_PSD)?;
                    if !rep.pass {
                        return Err(Error::Config(format!(
                            "certificate {} fails verification: max LMI eigenvalue {:.3e}",
                            full.display(),
                            rep.max_eigenvalue
                        ))
                        .into());
                    }
                    cert.with_verification(rep)
                } else {
                    cert
                }
            }
            CertificateSource::Synthesize { lambda, mode, grid, sdp } => {
                synthesize_certificate(&model, *lambda, mode, grid, sdp)?
            }
        };
        let scenario = Scenario { config: self, model, cert };
        scenario.mhe_config().validate(&scenario.model)?;
        Ok(scenario)
    }

    fn check(&self, model: &SystemModel) -> CliResult<()> {
        let n = model.state_dim();
        for (name, v) in [("chi", &self.chi), ("chi_hat", &self.chi_hat)] {
            if v.len() != n {
                return Err(Error::Config(format!("{name} has {} entries, expected {n}", v.len())).into());
            }
            if !model.state_box().contains(&DVector::from_column_slice(v), 0.0) {
                return Err(Error::Config(format!("{name} = {v:?} lies outside the state set")).into());
            }
        }
        if self.input.len() != model.input_dim() {
            return Err(Error::Config(format!("input has {} entries, expected {}", self.input.len(), model.input_dim())).into());
        }
        if !(self.dt > 0.0) || PiecewiseSignal::steps_in(self.disturbance.piece, self.dt).is_none_or(|k| k == 0) {
            return Err(Error::Config(format!(
                "disturbance piece {} is not a positive multiple of dt = {}",
                self.disturbance.piece, self.dt
            ))
            .into());
        }
        if PiecewiseSignal::steps_in(self.t_sim, self.disturbance.piece).is_none_or(|k| k == 0) {
            return Err(Error::Config(format!("t_sim = {} is not a positive multiple of the piece length", self.t_sim)).into());
        }
        Ok(())
    }
}

impl Scenario {
    pub fn mhe_config(&self) -> MheConfig {
        let c = &self.config;
        let mut cfg = MheConfig::new(c.horizon, c.dt, self.cert.clone(), c.sampler.clone());
        cfg.solver = c.solver.clone();
        cfg.equidistant_mode = c.equidistant_mode;
        cfg
    }

    pub fn disturbance(&self) -> CliResult<PiecewiseSignal> {
        let c = &self.config;
        generate_disturbance(&c.disturbance, self.model.dist_box(), c.t_sim, c.seed)
    }

    pub fn input(&self) -> CliResult<PiecewiseSignal> {
        let c = &self.config;
        let steps = PiecewiseSignal::steps_in(c.t_sim, c.dt).unwrap_or(0);
        Ok(PiecewiseSignal::constant(0.0, c.dt, steps, DVector::from_column_slice(&c.input))?)
    }

    pub fn run_data(&self) -> CliResult<RunData> {
        Ok(RunData::Simulated {
            chi: DVector::from_column_slice(&self.config.chi),
            u: self.input()?,
            w: self.disturbance()?,
        })
    }

    pub fn run(&self) -> CliResult<EstimationRun> {
        let chi_hat = DVector::from_column_slice(&self.config.chi_hat);
        Ok(run_mhe(&self.model, &self.mhe_config(), &chi_hat, &self.run_data()?, self.config.t_sim)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> serde_json::Value {
        json!({
            "model": "batch_reactor",
            "certificate": {
                "source": "synthesize",
                "lambda": 0.4,
                "mode": {"mode": "fixed_qr", "q": [[1000, 0, 0], [0, 1000, 0], [0, 0, 100]], "r": [[100]]}
            },
            "chi": [3, 1],
            "chi_hat": [0.1, 4.5],
            "disturbance": {"bound": 0.1, "piece": 0.01},
            "seed": 1,
            "t_sim": 1.0,
            "sampler": {"kind": "equidistant", "period": 0.1},
            "horizon": 2.0,
            "dt": 0.01
        })
    }

    fn parse(v: serde_json::Value) -> ScenarioConfig {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn loads_a_synthesized_scenario() {
        let s = parse(base()).load(None).unwrap();
        assert_eq!(s.model.name(), "batch_reactor");
        assert!(s.cert.verification().unwrap().pass);
        assert_eq!(s.disturbance().unwrap().len(), 100);
    }

    #[test]
    fn rejects_initial_states_outside_the_state_set() {
        let mut v = base();
        v["chi_hat"] = json!([-1.0, 4.5]);
        assert!(matches!(parse(v).load(None), Err(crate::CliError::Core(Error::Config(_)))));
    }

    #[test]
    fn rejects_piece_lengths_off_the_grid() {
        let mut v = base();
        v["disturbance"]["piece"] = json!(0.015);
        assert!(parse(v).load(None).is_err());
    }

    #[test]
    fn missing_certificate_file_is_a_config_error() {
        let mut v = base();
        v["certificate"] = json!({"source": "file", "path": "/nonexistent/cert.json"});
        let err = parse(v).load(None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}

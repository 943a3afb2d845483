//! Argument parsing and the subcommands.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mhect_core::analysis::audit_run;
use mhect_core::certify::{
    synthesize_certificate, verify_certificate, DetectabilityCertificate, GridSpec, SdpOptions, SynthesisMode,
    VerificationReport, DEFAULT_TOL_PSD,
};
use mhect_core::integrate::integrate;
use mhect_core::sysmodel::{ModelRef, SystemModel};
use mhect_core::Error;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bench::{bench_s5, BenchOptions};
use crate::export::{simulation_csv, write_run, Plot, Series, Style};
use crate::scenario::{Scenario, ScenarioConfig};
use crate::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "mhect", version, about = "Certified moving horizon estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Output directory [default: `out`, or the scenario's `out`].
    #[arg(long, global = true, env = "MHECT_OUT")]
    pub out: Option<PathBuf>,

    /// Worker threads for independent seeds.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a certificate from a JSON request, or verify one.
    Certify {
        config: PathBuf,
        /// Verify this certificate on the request's grid instead of synthesizing.
        #[arg(long)]
        verify: Option<PathBuf>,
        #[arg(long)]
        psd_tol: Option<f64>,
    },
    /// Simulate the plant of a scenario without estimation.
    Simulate(ScenarioArgs),
    /// Simulate and run the estimator.
    Estimate(ScenarioArgs),
    /// Simulate, estimate and audit the error bounds.
    Audit(ScenarioArgs),
    /// The batch-reactor benchmark.
    #[command(name = "bench-s5")]
    BenchS5 {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of consecutive seeds starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long, default_value_t = crate::bench::LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = crate::bench::HORIZON)]
        horizon: f64,
        #[arg(long, default_value_t = DEFAULT_TOL_PSD)]
        psd_tol: f64,
    },
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub horizon: Option<f64>,
}

/// Request read by `certify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub model: ModelRef,
    pub lambda: f64,
    pub mode: SynthesisMode,
    #[serde(default = "vertices")]
    pub grid: GridSpec,
    #[serde(default)]
    pub sdp: SdpOptions,
}

fn vertices() -> GridSpec {
    GridSpec::VerticesOnly
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(jobs) = cli.jobs {
        // Ignored when a pool already exists, as in tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let out = cli.out;
    match cli.command {
        Command::Certify { config, verify, psd_tol } => {
            certify(&config, verify.as_deref(), psd_tol, &out.unwrap_or_else(|| "out".into()))
        }
        Command::Simulate(a) => simulate(&load_scenario(&a)?, out),
        Command::Estimate(a) => estimate(&load_scenario(&a)?, out),
        Command::Audit(a) => audit(&load_scenario(&a)?, out),
        Command::BenchS5 { seed, seeds, lambda, horizon, psd_tol } => {
            let out = out.unwrap_or_else(|| "out".into());
            let opts = BenchOptions { seed, seeds, lambda, horizon, psd_tol, out: Some(out.clone()) };
            let s = bench_s5(&opts)?;
            println!(
                "bench-s5: {} certificate, rho = {:.4}, T = {} > {:.4}, {} seed(s) pass; artifacts in {}",
                serde_json::to_value(s.certificate.source)?.as_str().unwrap_or_default(),
                s.rho,
                s.horizon,
                s.min_horizon,
                s.runs.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {what} {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)
}

fn load_scenario(a: &ScenarioArgs) -> CliResult<Scenario> {
    let mut cfg = ScenarioConfig::from_file(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(h) = a.horizon {
        cfg.horizon = h;
    }
    cfg.load(a.config.parent())
}

fn out_dir(flag: Option<PathBuf>, s: &Scenario) -> PathBuf {
    flag.or_else(|| s.config.out.clone()).unwrap_or_else(|| "out".into())
}

fn report_text(model: &SystemModel, cert: &DetectabilityCertificate, rep: &VerificationReport) -> String {
    format!(
        "model: {}\nlambda: {}\nkappa: {}\ngrid: {:?}\ngrid points: {}\nmax LMI eigenvalue: {:.6e}\ntolerance: {:.1e}\nworst point: x = {:?}, u = {:?}, w = {:?}\nresult: {}\n",
        model.name(),
        cert.lambda(),
        cert.kappa(),
        rep.grid,
        rep.points,
        rep.max_eigenvalue,
        rep.tol_psd,
        rep.worst_point.x.as_slice(),
        rep.worst_point.u.as_slice(),
        rep.worst_point.w.as_slice(),
        if rep.pass { "feasible" } else { "NOT feasible" }
    )
}

fn certify(config: &Path, verify: Option<&Path>, psd_tol: Option<f64>, out: &Path) -> CliResult<()> {
    let req: CertifyConfig = read_json(config, "certify request")?;
    let model = req.model.load(config.parent())?;
    let tol = psd_tol.unwrap_or(req.sdp.tol_psd);
    std::fs::create_dir_all(out)?;
    let cert = match verify {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read certificate {}: {e}", path.display())))?;
            let cert = DetectabilityCertificate::from_json(&text)?;
            let rep = verify_certificate(&model, &cert, &req.grid, tol)?;
            std::fs::write(out.join("certify_report.txt"), report_text(&model, &cert, &rep))?;
            print!("{}", report_text(&model, &cert, &rep));
            if !rep.pass {
                return Err(CliError::Check {
                    name: "verify_certificate",
                    detail: format!("max LMI eigenvalue {:.3e} > {tol:.1e}", rep.max_eigenvalue),
                    code: 3,
                });
            }
            cert.with_verification(rep)
        }
        None => {
            let opts = SdpOptions { tol_psd: tol, ..req.sdp.clone() };
            let cert = match synthesize_certificate(&model, req.lambda, &req.mode, &req.grid, &opts) {
                Ok(c) => c,
                Err(Error::Infeasible(rep)) => {
                    std::fs::write(out.join("certify_report.txt"), format!("result: infeasible\n{rep}\n"))?;
                    return Err(Error::Infeasible(rep).into());
                }
                Err(e) => return Err(e.into()),
            };
            let rep = cert.verification().cloned().expect("synthesis attaches its verification");
            std::fs::write(out.join("certify_report.txt"), report_text(&model, &cert, &rep))?;
            print!("{}", report_text(&model, &cert, &rep));
            cert
        }
    };
    std::fs::write(out.join("certificate.json"), cert.to_json()?)?;
    Ok(())
}

fn simulate(s: &Scenario, out: Option<PathBuf>) -> CliResult<()> {
    let dir = out_dir(out, s);
    let c = &s.config;
    let (u, w) = (s.input()?, s.disturbance()?.refine(c.dt)?);
    let x = integrate(&s.model, &DVector::from_column_slice(&c.chi), &u, &w, 0.0, c.t_sim, c.dt)?;
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("truth.csv"), simulation_csv(&s.model, &x, &u, &w)?)?;
    let mut plot = Plot::new("simulated states", "t");
    for i in 0..s.model.state_dim() {
        let pts = x.states().iter().enumerate().map(|(k, v)| (c.dt * k as f64, v[i])).collect();
        plot = plot.with(Series::new(format!("x{}", i + 1), pts, Style::Line));
    }
    std::fs::write(dir.join("states.svg"), plot.to_svg())?;
    println!("simulated {} steps; artifacts in {}", x.len() - 1, dir.display());
    Ok(())
}

fn estimate(s: &Scenario, out: Option<PathBuf>) -> CliResult<()> {
    let dir = out_dir(out, s);
    let run = s.run()?;
    write_run(&dir, &run, None)?;
    let flagged = run.records.iter().filter(|r| r.flagged).count();
    let summary = json!({
        "samples": run.records.len(),
        "flagged": flagged,
        "delta_bar": run.sampling.delta_bar(),
        "max_wall_time": run.records.iter().map(|r| r.wall_time).fold(0.0, f64::max),
    });
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{} samples, {flagged} flagged; artifacts in {}", run.records.len(), dir.display());
    Ok(())
}

fn audit(s: &Scenario, out: Option<PathBuf>) -> CliResult<()> {
    let dir = out_dir(out, s);
    let run = s.run()?;
    let cfg = s.mhe_config();
    let rep = audit_run(&run, &s.cert, &cfg)?;
    write_run(&dir, &run, Some(&rep))?;
    let summary = json!({
        "rho": rep.rho,
        "delta_bar": rep.delta_bar,
        "factor": rep.factor,
        "equidistant_mode": rep.equidistant_mode,
        "constants": rep.constants,
        "identity_residual": rep.identity_residual,
        "worst_margin": rep.worst_margin,
        "pass": rep.pass,
        "prop3_pass": rep.prop3_pass,
        "linf_pass": rep.linf_pass,
        "samples": rep.records.len(),
        "flagged": run.records.iter().filter(|r| r.flagged).count(),
    });
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    if !(rep.pass && rep.prop3_pass && rep.linf_pass) {
        return Err(CliError::AuditFailed(format!(
            "worst margin {:.3e} (error bound {}, interval bound {}, sup bound {})",
            rep.worst_margin, rep.pass, rep.prop3_pass, rep.linf_pass
        )));
    }
    println!("audit passed at {} samples, rho = {:.4}; artifacts in {}", rep.records.len(), rep.rho, dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn run_args(args: &[&str]) -> i32 {
        main_with_args(std::iter::once("mhect").chain(args.iter().copied()))
    }

    fn scenario(dir: &Path, overrides: Value) -> PathBuf {
        let mut v = json!({
            "model": "batch_reactor",
            "certificate": {
                "source": "synthesize",
                "lambda": 0.4,
                "mode": {"mode": "fixed_qr", "q": [[1000, 0, 0], [0, 1000, 0], [0, 0, 100]], "r": [[100]]}
            },
            "chi": [3, 1],
            "chi_hat": [0.1, 4.5],
            "disturbance": {"bound": 0.1, "piece": 0.01},
            "seed": 3,
            "t_sim": 2.5,
            "sampler": {"kind": "equidistant", "period": 0.1},
            "horizon": 2.0,
            "dt": 0.01
        });
        for (k, val) in overrides.as_object().unwrap() {
            v[k] = val.clone();
        }
        let path = dir.join("scenario.json");
        std::fs::write(&path, v.to_string()).unwrap();
        path
    }

    fn s(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        let req: CertifyConfig = read_json(&dir.join("certify.json"), "request").unwrap();
        assert_eq!(req.lambda, 0.4);
        let s = ScenarioConfig::from_file(&dir.join("scenario.json")).unwrap().load(Some(&dir)).unwrap();
        assert_eq!(s.config.t_sim, 5.0);
    }

    #[test]
    fn bench_writes_its_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        assert_eq!(run_args(&["bench-s5", "--out", s(tmp.path())]), 0);
        for f in ["estimate.csv", "samples.csv", "truth.csv", "bounds.csv", "summary.json", "certificate.json"] {
            assert!(tmp.path().join(f).is_file(), "{f}");
        }
        for f in ["disturbance.svg", "sampling.svg", "states.svg", "error.svg"] {
            assert!(tmp.path().join(f).is_file(), "{f}");
        }
        let summary: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["pass"], true);
        assert_eq!(summary["runs"][0]["samples"], 50);
    }

    #[test]
    fn bench_with_slow_discount_is_a_horizon_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert_eq!(run_args(&["bench-s5", "--lambda", "0.9", "--out", s(tmp.path())]), 3);
    }

    #[test]
    fn bench_seeds_get_their_own_directories() {
        let tmp = tempfile::tempdir().unwrap();
        assert_eq!(run_args(&["bench-s5", "--seed", "5", "--seeds", "2", "--jobs", "2", "--out", s(tmp.path())]), 0);
        assert!(tmp.path().join("seed-5/estimate.csv").is_file());
        assert!(tmp.path().join("seed-6/estimate.csv").is_file());
    }

    #[test]
    fn estimate_is_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = scenario(tmp.path(), json!({}));
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        assert_eq!(run_args(&["estimate", s(&cfg), "--out", s(&a)]), 0);
        assert_eq!(run_args(&["estimate", s(&cfg), "--out", s(&b)]), 0);
        for f in ["estimate.csv", "truth.csv"] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
        }
        let strip = |p: PathBuf| -> Vec<String> {
            let text = std::fs::read_to_string(p).unwrap();
            text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
        };
        assert_eq!(strip(a.join("samples.csv")), strip(b.join("samples.csv")));
    }

    #[test]
    fn seed_flag_overrides_the_scenario() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = scenario(tmp.path(), json!({}));
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        assert_eq!(run_args(&["simulate", s(&cfg), "--out", s(&a)]), 0);
        assert_eq!(run_args(&["simulate", s(&cfg), "--seed", "4", "--out", s(&b)]), 0);
        assert_ne!(std::fs::read(a.join("truth.csv")).unwrap(), std::fs::read(b.join("truth.csv")).unwrap());
        let header = std::fs::read_to_string(a.join("truth.csv")).unwrap();
        assert!(header.starts_with("t,x1,x2,w1,w2,w3,y1\n"));
        assert_eq!(header.lines().count(), 251);
    }

    #[test]
    fn equidistant_audit_passes() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = scenario(tmp.path(), json!({"equidistant_mode": true}));
        assert_eq!(run_args(&["audit", s(&cfg), "--out", s(tmp.path())]), 0);
        let summary: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["factor"], 4.0);
        assert_eq!(summary["delta_bar"], 0.0);
        assert!(tmp.path().join("bounds.csv").is_file());
    }

    #[test]
    fn short_horizon_exits_with_3() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = scenario(tmp.path(), json!({}));
        assert_eq!(run_args(&["audit", s(&cfg), "--horizon", "1.5", "--out", s(tmp.path())]), 3);
    }

    #[test]
    fn bad_configuration_exits_with_2() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = scenario(tmp.path(), json!({"chi_hat": [0.1, 99.0]}));
        assert_eq!(run_args(&["estimate", s(&cfg), "--out", s(tmp.path())]), 2);
        assert_eq!(run_args(&["estimate", "/nonexistent.json"]), 2);
        assert_eq!(run_args(&["no-such-command"]), 2);
    }

    #[test]
    fn out_defaults_to_the_scenario_field() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("from-config");
        let cfg = scenario(tmp.path(), json!({"out": target}));
        let cli = Cli::try_parse_from(["mhect", "simulate", s(&cfg)]).unwrap();
        let Command::Simulate(a) = cli.command else { panic!() };
        assert_eq!(out_dir(None, &load_scenario(&a).unwrap()), target);
    }

    #[test]
    fn certify_synthesizes_and_verifies() {
        let tmp = tempfile::tempdir().unwrap();
        let req = tmp.path().join("req.json");
        std::fs::write(
            &req,
            json!({
                "model": "batch_reactor",
                "lambda": 0.4,
                "mode": {"mode": "fixed_qr", "q": [[1000, 0, 0], [0, 1000, 0], [0, 0, 100]], "r": [[100]]}
            })
            .to_string(),
        )
        .unwrap();
        let out = tmp.path().join("synth");
        assert_eq!(run_args(&["certify", s(&req), "--out", s(&out)]), 0);
        let cert = out.join("certificate.json");
        assert!(DetectabilityCertificate::from_json(&std::fs::read_to_string(&cert).unwrap()).is_ok());
        let report = std::fs::read_to_string(out.join("certify_report.txt")).unwrap();
        assert!(report.contains("result: feasible"));

        // The rounded published matrix misses the default tolerance.
        let published = tmp.path().join("published.json");
        std::fs::write(&published, crate::bench::published_certificate().to_json().unwrap()).unwrap();
        let v = tmp.path().join("verify");
        assert_eq!(run_args(&["certify", s(&req), "--verify", s(&published), "--out", s(&v)]), 3);
        assert_eq!(run_args(&["certify", s(&req), "--verify", s(&published), "--psd-tol", "1e-4", "--out", s(&v)]), 0);
        assert_eq!(run_args(&["certify", s(&req), "--verify", s(&cert), "--out", s(&v)]), 0);
    }

    #[test]
    fn infeasible_synthesis_exits_with_3() {
        let tmp = tempfile::tempdir().unwrap();
        let model = tmp.path().join("unstable.json");
        std::fs::write(
            &model,
            r#"{"name": "unstable", "state_dim": 1, "dist_dim": 1, "output_dim": 1,
                "f": [[{"coeff": 1.0, "x": [1]}]],
                "h": [[{"coeff": 1.0, "w": [1]}]],
                "state_box": [[-1, 1]], "dist_box": [[-1, 1]]}"#,
        )
        .unwrap();
        let req = tmp.path().join("req.json");
        std::fs::write(
            &req,
            json!({"model": {"file": "unstable.json"}, "lambda": 0.5, "mode": {"mode": "fixed_qr", "q": [[1]], "r": [[1]]}})
                .to_string(),
        )
        .unwrap();
        let out = tmp.path().join("o");
        assert_eq!(run_args(&["certify", s(&req), "--out", s(&out)]), 3);
        assert!(std::fs::read_to_string(out.join("certify_report.txt")).unwrap().contains("infeasible"));
    }
}

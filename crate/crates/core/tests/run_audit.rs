use mhect_core::analysis::audit_run;
use mhect_core::certify::DetectabilityCertificate;
use mhect_core::mhe::{benchmark_schedule, run_mhe, EstimationRun, MheConfig, RunData, SamplerSpec};
use mhect_core::sysmodel::{batch_reactor, PiecewiseSignal};
use mhect_core::Error;
use nalgebra::{DMatrix, DVector};

fn published_cert() -> DetectabilityCertificate {
    let p = DMatrix::from_row_slice(2, 2, &[4.009, 3.768, 3.768, 3.549]);
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1000.0, 1000.0, 100.0]));
    let r = DMatrix::from_element(1, 1, 100.0);
    DetectabilityCertificate::new(p, q, r, 0.4).unwrap()
}

/// Bounded pseudo-random disturbance from a linear congruential sequence.
fn disturbance(seed: u64, len: usize, bound: f64) -> PiecewiseSignal {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let values = (0..len).map(|_| DVector::from_fn(3, |_, _| bound * next())).collect();
    PiecewiseSignal::new(0.0, 0.01, 3, values).unwrap()
}

fn simulated(w: PiecewiseSignal) -> RunData {
    RunData::Simulated {
        chi: DVector::from_vec(vec![3.0, 1.0]),
        u: PiecewiseSignal::zeros(0.0, 0.01, 0, 0).unwrap(),
        w,
    }
}

fn run(cfg: &MheConfig, chi_hat: [f64; 2], w: PiecewiseSignal, t_sim: f64) -> EstimationRun {
    run_mhe(&batch_reactor(), cfg, &DVector::from_row_slice(&chi_hat), &simulated(w), t_sim).unwrap()
}

fn benchmark_cfg() -> MheConfig {
    MheConfig::new(2.0, 0.01, published_cert(), SamplerSpec::Explicit { times: benchmark_schedule() })
}

#[test]
fn benchmark_run_satisfies_the_bounds() {
    let cfg = benchmark_cfg();
    let r = run(&cfg, [0.1, 4.5], disturbance(1, 500, 0.1), 5.0);
    assert_eq!(r.records.len(), 50);
    for rec in &r.records {
        assert!(!rec.flagged, "{rec:?}");
        assert!(rec.cost <= rec.truth_cost.unwrap() * (1.0 + 1e-6));
    }
    let rep = audit_run(&r, &published_cert(), &cfg).unwrap();
    assert!(rep.pass && rep.prop3_pass && rep.linf_pass);
    assert_eq!(rep.factor, 8.0);
    assert!((rep.delta_bar - 0.19).abs() < 1e-12);
    assert!(rep.identity_residual <= 1e-12);
    assert!(rep.records.iter().all(|b| b.rhs >= 0.0));
}

#[test]
fn priors_are_read_back_from_the_stored_estimate() {
    let cfg = benchmark_cfg();
    let r = run(&cfg, [0.1, 4.5], disturbance(2, 500, 0.1), 5.0);
    for rec in &r.records {
        let start = rec.index - (rec.window / 0.01).round() as usize;
        assert_eq!(rec.prior, r.estimate.states()[start]);
        if rec.t_i <= 2.0 {
            assert!((rec.window - rec.t_i).abs() < 1e-12);
            assert_eq!(rec.prior, r.chi_hat);
        }
    }
}

#[test]
fn noise_free_perfect_prior_is_exact() {
    let cfg = benchmark_cfg();
    let r = run(&cfg, [3.0, 1.0], disturbance(0, 500, 0.0), 5.0);
    let truth = r.truth.as_ref().unwrap();
    for rec in &r.records {
        let e = (&truth.x.states()[rec.index] - &r.estimate.states()[rec.index]).norm();
        assert!(e <= 1e-6, "t = {}: {e}", rec.t_i);
    }
    let rep = audit_run(&r, &published_cert(), &cfg).unwrap();
    assert!(rep.records.iter().all(|b| b.lhs <= 1e-10));
}

#[test]
fn equidistant_mode_uses_the_tight_constant() {
    let mut cfg = MheConfig::new(2.0, 0.01, published_cert(), SamplerSpec::Equidistant { period: 0.1 });
    cfg.equidistant_mode = true;
    let r = run(&cfg, [0.1, 4.5], disturbance(3, 500, 0.1), 5.0);
    let rep = audit_run(&r, &published_cert(), &cfg).unwrap();
    assert_eq!(rep.factor, 4.0);
    assert_eq!(rep.delta_bar, 0.0);
    assert!(rep.pass);

    cfg.horizon = 2.05;
    let err = run_mhe(
        &batch_reactor(),
        &cfg,
        &DVector::from_vec(vec![0.1, 4.5]),
        &simulated(disturbance(3, 500, 0.1)),
        5.0,
    );
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn audit_refuses_short_horizons_and_missing_truth() {
    let cfg = MheConfig::new(1.5, 0.01, published_cert(), SamplerSpec::Equidistant { period: 0.1 });
    let r = run(&cfg, [0.1, 4.5], disturbance(4, 300, 0.1), 3.0);
    assert!(matches!(audit_run(&r, &published_cert(), &cfg), Err(Error::Horizon(_))));

    let mut no_truth = r.clone();
    no_truth.truth = None;
    assert!(matches!(audit_run(&no_truth, &published_cert(), &cfg), Err(Error::Audit(_))));
}

#[test]
fn horizon_must_exceed_the_largest_gap() {
    let cfg = MheConfig::new(0.1, 0.01, published_cert(), SamplerSpec::Explicit { times: benchmark_schedule() });
    let err = run_mhe(
        &batch_reactor(),
        &cfg,
        &DVector::from_vec(vec![0.1, 4.5]),
        &simulated(disturbance(5, 500, 0.1)),
        5.0,
    );
    assert!(matches!(err, Err(Error::Horizon(_))));
}

#[test]
fn event_triggered_gaps_stay_clamped() {
    let spec = SamplerSpec::EventTriggered { threshold: Some(1e-3), min_gap: 0.02, max_gap: 0.15 };
    let cfg = MheConfig::new(2.0, 0.01, published_cert(), spec);
    let r = run(&cfg, [0.1, 4.5], disturbance(6, 300, 0.1), 3.0);
    let mut prev = 0;
    for &k in r.sampling.indices() {
        assert!((2..=15).contains(&(k - prev)), "gap {}", k - prev);
        prev = k;
    }
    // The poor prior makes early innovations large: the first gap is the minimum.
    assert_eq!(r.sampling.indices()[0], 2);
    assert!(audit_run(&r, &published_cert(), &cfg).unwrap().pass);

    let never = SamplerSpec::EventTriggered { threshold: None, min_gap: 0.02, max_gap: 0.15 };
    let cfg = MheConfig::new(2.0, 0.01, published_cert(), never);
    let r = run(&cfg, [0.1, 4.5], disturbance(6, 300, 0.1), 3.0);
    assert_eq!(r.sampling.indices(), (1..=20).map(|k| 15 * k).collect::<Vec<_>>());
}

#[test]
fn identical_inputs_give_identical_exports() {
    let cfg = benchmark_cfg();
    let a = run(&cfg, [0.1, 4.5], disturbance(7, 500, 0.1), 5.0);
    let b = run(&cfg, [0.1, 4.5], disturbance(7, 500, 0.1), 5.0);
    assert_eq!(a.estimate_csv(), b.estimate_csv());
    assert_eq!(a.truth_csv(), b.truth_csv());
    let strip = |s: String| s.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
    assert_eq!(strip(a.samples_csv()), strip(b.samples_csv()));
}

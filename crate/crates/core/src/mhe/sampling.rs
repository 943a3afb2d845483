use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::sysmodel::PiecewiseSignal;

/// Strictly increasing sampling times on the `dt` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSet {
    times: Vec<f64>,
    dt: f64,
    indices: Vec<usize>,
}

impl SamplingSet {
    pub fn new(times: Vec<f64>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return config("sampling grid step must be positive");
        }
        let mut indices = Vec::with_capacity(times.len());
        for &t in &times {
            if !(t >= 0.0) {
                return config(format!("sampling time {t} is negative"));
            }
            let Some(k) = PiecewiseSignal::steps_in(t, dt) else {
                return config(format!("sampling time {t} is not a multiple of dt = {dt}"));
            };
            if indices.last().is_some_and(|&prev| k <= prev) {
                return config("sampling times must be strictly increasing");
            }
            indices.push(k);
        }
        Ok(Self { times, dt, indices })
    }

    /// Sampling set from grid indices.
    pub fn from_indices(indices: Vec<usize>, dt: f64) -> Result<Self> {
        Self::new(indices.iter().map(|&k| k as f64 * dt).collect(), dt)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Smallest sampling time `≥ t`; a sampling time maps to itself.
    pub fn k_of(&self, t: f64) -> Result<f64> {
        let tol = 1e-9 * self.dt;
        self.times
            .iter()
            .copied()
            .find(|&s| s >= t - tol)
            .ok_or_else(|| Error::Domain(format!("t = {t} is after the last sampling time")))
    }

    /// `δ̄ = sup_t k(t) − t`, the largest gap including the one from 0.
    pub fn delta_bar(&self) -> f64 {
        let mut prev = 0usize;
        let mut gap = 0usize;
        for &k in &self.indices {
            gap = gap.max(k - prev);
            prev = k;
        }
        gap as f64 * self.dt
    }

    /// Largest gap in grid steps.
    pub fn max_gap_steps(&self) -> usize {
        let mut prev = 0usize;
        self.indices
            .iter()
            .map(|&k| {
                let g = k - prev;
                prev = k;
                g
            })
            .max()
            .unwrap_or(0)
    }
}

/// How sampling times are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerSpec {
    /// `δ, 2δ, …` up to `t_sim`.
    Equidistant { period: f64 },
    Explicit { times: Vec<f64> },
    /// Sample once the innovation energy since the last sample reaches
    /// `threshold` (never when `null`), with the gap clamped to
    /// `[min_gap, max_gap]`.
    EventTriggered {
        threshold: Option<f64>,
        min_gap: f64,
        max_gap: f64,
    },
}

/// Event rule in grid steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventTrigger {
    pub threshold: f64,
    pub min_steps: usize,
    pub max_steps: usize,
}

impl EventTrigger {
    pub fn new(threshold: Option<f64>, min_gap: f64, max_gap: f64, dt: f64) -> Result<Self> {
        let steps = |g: f64, name: &str| {
            PiecewiseSignal::steps_in(g, dt)
                .filter(|&k| k > 0)
                .ok_or_else(|| Error::Config(format!("{name} = {g} is not a positive multiple of dt = {dt}")))
        };
        let (min_steps, max_steps) = (steps(min_gap, "min_gap")?, steps(max_gap, "max_gap")?);
        if min_steps > max_steps {
            return config("min_gap exceeds max_gap");
        }
        let threshold = threshold.unwrap_or(f64::INFINITY);
        if threshold.is_nan() || threshold < 0.0 {
            return config("event threshold must be non-negative");
        }
        Ok(Self { threshold, min_steps, max_steps })
    }

    /// Next sampling index after `prev`, or `None` past `last`.
    ///
    /// `energy(k)` is the innovation energy accumulated on `[prev, k)`.
    pub fn next(&self, prev: usize, last: usize, mut energy: impl FnMut(usize) -> f64) -> Option<usize> {
        let lo = prev + self.min_steps;
        if lo > last {
            return None;
        }
        let hi = (prev + self.max_steps).min(last);
        if self.threshold.is_finite() {
            for k in lo..hi {
                if energy(k) >= self.threshold {
                    return Some(k);
                }
            }
        }
        Some(hi)
    }
}

impl SamplerSpec {
    /// Rejects gaps that are not positive multiples of `dt`.
    pub fn validate(&self, dt: f64) -> Result<()> {
        match self {
            SamplerSpec::Equidistant { period } => {
                if PiecewiseSignal::steps_in(*period, dt).is_none_or(|k| k == 0) {
                    return config(format!("period {period} is not a positive multiple of dt = {dt}"));
                }
                Ok(())
            }
            SamplerSpec::Explicit { times } => SamplingSet::new(times.clone(), dt).map(|_| ()),
            SamplerSpec::EventTriggered { threshold, min_gap, max_gap } => {
                EventTrigger::new(*threshold, *min_gap, *max_gap, dt).map(|_| ())
            }
        }
    }
}

/// Builds the sampling set on `(0, t_sim]`.
///
/// Event-triggered sets need the innovation energy `innovation(prev, k)`
/// accumulated on `[prev, k)` in grid indices; without it only an infinite
/// threshold is accepted.
pub fn make_sampler(
    spec: &SamplerSpec,
    t_sim: f64,
    dt: f64,
    innovation: Option<&mut dyn FnMut(usize, usize) -> f64>,
) -> Result<SamplingSet> {
    spec.validate(dt)?;
    let Some(last) = PiecewiseSignal::steps_in(t_sim, dt) else {
        return config(format!("t_sim = {t_sim} is not a multiple of dt = {dt}"));
    };
    match spec {
        SamplerSpec::Equidistant { period } => {
            let p = PiecewiseSignal::steps_in(*period, dt).expect("validated");
            SamplingSet::from_indices((1..=last / p).map(|k| k * p).collect(), dt)
        }
        SamplerSpec::Explicit { times } => {
            let set = SamplingSet::new(times.clone(), dt)?;
            if set.indices().last().is_some_and(|&k| k > last) {
                return config(format!("explicit sampling time beyond t_sim = {t_sim}"));
            }
            Ok(set)
        }
        SamplerSpec::EventTriggered { threshold, min_gap, max_gap } => {
            let trig = EventTrigger::new(*threshold, *min_gap, *max_gap, dt)?;
            let mut innovation = innovation;
            if trig.threshold.is_finite() && innovation.is_none() {
                return config("a finite event threshold needs an innovation signal");
            }
            let mut out = Vec::new();
            let mut prev = 0;
            while let Some(k) = trig.next(prev, last, |k| innovation.as_mut().map_or(0.0, |f| f(prev, k))) {
                out.push(k);
                prev = k;
            }
            SamplingSet::from_indices(out, dt)
        }
    }
}

/// The benchmark's non-equidistant schedule on `[0, 5]`: gaps (in units of
/// 0.01) of 1, 2, 3, 4, 6 and 8, five times each, then twenty gaps of 19.
/// Fifty samples, denser at the start, largest gap 0.19.
pub fn benchmark_schedule() -> Vec<f64> {
    let mut gaps: Vec<usize> = [1, 2, 3, 4, 6, 8].iter().flat_map(|&g| [g; 5]).collect();
    gaps.extend([19; 20]);
    let mut k = 0;
    gaps.iter()
        .map(|g| {
            k += g;
            k as f64 * 0.01
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// `sup k(t) − t` by scanning the grid just after every node.
    fn delta_bar_scan(set: &SamplingSet) -> f64 {
        let dt = set.dt();
        let last = *set.indices().last().unwrap();
        (0..last)
            .map(|k| {
                // Just after node k the next sample is at least one step away.
                let t = k as f64 * dt + 1e-6 * dt;
                set.k_of(t).unwrap() - k as f64 * dt
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn k_of_examples() {
        let s = SamplingSet::new(vec![0.1, 0.3], 0.01).unwrap();
        assert_eq!(s.k_of(0.05).unwrap(), 0.1);
        assert_eq!(s.k_of(0.3).unwrap(), 0.3);
        assert_eq!(s.k_of(0.1).unwrap(), 0.1);
        assert!(matches!(s.k_of(0.31), Err(Error::Domain(_))));
    }

    #[test]
    fn equidistant_set() {
        let s = make_sampler(&SamplerSpec::Equidistant { period: 0.1 }, 5.0, 0.01, None).unwrap();
        assert_eq!(s.len(), 50);
        assert_relative_eq!(s.delta_bar(), 0.1, epsilon = 1e-12);
        assert_relative_eq!(delta_bar_scan(&s), 0.1, epsilon = 1e-9);
    }

    #[test]
    fn benchmark_schedule_invariants() {
        let times = benchmark_schedule();
        let s = make_sampler(&SamplerSpec::Explicit { times }, 5.0, 0.01, None).unwrap();
        assert_eq!(s.len(), 50);
        assert_relative_eq!(*s.times().last().unwrap(), 5.0, epsilon = 1e-12);
        assert_relative_eq!(s.delta_bar(), 0.19, epsilon = 1e-12);
        assert_relative_eq!(delta_bar_scan(&s), 0.19, epsilon = 1e-9);
        // Denser early: the first half second holds more samples than the last.
        let early = s.times().iter().filter(|&&t| t <= 0.5).count();
        let late = s.times().iter().filter(|&&t| t > 4.5).count();
        assert!(early > late);
    }

    #[test]
    fn infinite_threshold_samples_every_max_gap() {
        let spec = SamplerSpec::EventTriggered { threshold: None, min_gap: 0.05, max_gap: 0.2 };
        let s = make_sampler(&spec, 1.0, 0.01, None).unwrap();
        assert_eq!(s.indices(), &[20, 40, 60, 80, 100]);
    }

    #[test]
    fn event_trigger_fires_on_energy() {
        let spec = SamplerSpec::EventTriggered { threshold: Some(1.0), min_gap: 0.02, max_gap: 0.2 };
        // Energy grows by 0.25 per step: fires after four steps.
        let mut energy = |prev: usize, k: usize| 0.25 * (k - prev) as f64;
        let s = make_sampler(&spec, 0.2, 0.01, Some(&mut energy)).unwrap();
        assert_eq!(s.indices(), &[4, 8, 12, 16, 20]);
        assert!(make_sampler(&spec, 0.2, 0.01, None).is_err());
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(SamplingSet::new(vec![0.2, 0.1], 0.01).is_err());
        assert!(SamplingSet::new(vec![0.105], 0.01).is_err());
        assert!(SamplingSet::new(vec![-0.1], 0.01).is_err());
        assert!(make_sampler(&SamplerSpec::Explicit { times: vec![5.1] }, 5.0, 0.01, None).is_err());
    }
}

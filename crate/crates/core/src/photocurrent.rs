//! Photocurrent transients from terminal pair populations, detector response
//! and sampling.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ensemble::BroadeningSpec;
use crate::error::{invalid, Error, Result};
use crate::hamiltonians::{DriveParams, PairParams};
use crate::output::fmt_f64;
use crate::propagator::{KsmRates, StepControl};
use crate::sequences::{run_sequence, InitialState, PulseSegment, PulseSequence};
use crate::spin::{pair_projectors, trace_product, DensityMatrix, SpinSystem};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransientModel {
    /// A per unit singlet population; negative, a singlet excess quenches.
    pub coeff_singlet: f64,
    /// A per unit triplet population.
    pub coeff_triplet: f64,
    /// s
    pub tau_singlet_relax: f64,
    /// s
    pub tau_triplet_relax: f64,
    /// A
    #[serde(default)]
    pub baseline: f64,
}

impl Default for TransientModel {
    fn default() -> Self {
        Self {
            coeff_singlet: -1e-10,
            coeff_triplet: 1e-10,
            tau_singlet_relax: 10e-6,
            tau_triplet_relax: 40e-6,
            baseline: 0.0,
        }
    }
}

impl TransientModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("coeff_singlet", self.coeff_singlet),
            ("coeff_triplet", self.coeff_triplet),
            ("baseline", self.baseline),
        ] {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        for (name, v) in [
            ("tau_singlet_relax", self.tau_singlet_relax),
            ("tau_triplet_relax", self.tau_triplet_relax),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("{name} > 0 violated (got {v})")));
            }
        }
        Ok(())
    }

    /// Current deviation at time `t` after the pulse end.
    pub fn delta_current(&self, dev: &PopulationDeviation, t: f64) -> f64 {
        self.coeff_singlet * dev.singlet * (-t / self.tau_singlet_relax).exp()
            + self.coeff_triplet * dev.triplet * (-t / self.tau_triplet_relax).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    /// First-order low-pass time constant, s.
    pub rise_time: f64,
    /// RMS jitter of the sampling instant, s.
    #[serde(default)]
    pub sample_jitter: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            rise_time: 12e-6,
            sample_jitter: 0.0,
        }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.rise_time >= 0.0 && self.rise_time.is_finite()) {
            return Err(invalid("rise_time", "rise_time >= 0 violated"));
        }
        if !(self.sample_jitter >= 0.0 && self.sample_jitter.is_finite()) {
            return Err(invalid("sample_jitter", "sample_jitter >= 0 violated"));
        }
        Ok(())
    }
}

/// Deviations of singlet and total triplet populations from a reference state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PopulationDeviation {
    pub singlet: f64,
    pub triplet: f64,
}

impl PopulationDeviation {
    pub fn between(state: &DensityMatrix, reference: &DensityMatrix) -> Result<Self> {
        if state.dim() != 4 || reference.dim() != 4 {
            return Err(Error::DimensionMismatch {
                expected: 4,
                found: if state.dim() != 4 {
                    state.dim()
                } else {
                    reference.dim()
                },
            });
        }
        let p = pair_projectors(&SpinSystem::pair(), 0, 1)?;
        let t = p.triplet();
        Ok(Self {
            singlet: trace_product(state.op(), &p.singlet)
                - trace_product(reference.op(), &p.singlet),
            triplet: trace_product(state.op(), &t) - trace_product(reference.op(), &t),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurrentTrace {
    /// s, increasing.
    pub times: Vec<f64>,
    /// A
    pub current: Vec<f64>,
    /// Level before the transient; the detector starts settled here.
    pub baseline: f64,
}

impl CurrentTrace {
    pub fn new(times: Vec<f64>, current: Vec<f64>, baseline: f64) -> Result<Self> {
        if times.len() != current.len() {
            return Err(Error::GridMismatch(format!(
                "{} times, {} samples",
                times.len(),
                current.len()
            )));
        }
        if times.is_empty() {
            return Err(invalid("times", "must not be empty"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("times", "must be strictly increasing"));
        }
        Ok(Self {
            times,
            current,
            baseline,
        })
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], self.times[self.times.len() - 1])
    }

    /// Index and value of the sample farthest from the baseline.
    pub fn extremum(&self) -> (usize, f64) {
        let k = (0..self.current.len())
            .max_by(|&a, &b| {
                (self.current[a] - self.baseline)
                    .abs()
                    .total_cmp(&(self.current[b] - self.baseline).abs())
            })
            .expect("non-empty");
        (k, self.current[k])
    }

    /// Pointwise sum on an identical grid.
    pub fn add(&self, other: &CurrentTrace) -> Result<CurrentTrace> {
        if self.times != other.times {
            return Err(Error::GridMismatch(
                "traces sampled on different grids".into(),
            ));
        }
        Ok(CurrentTrace {
            times: self.times.clone(),
            current: self
                .current
                .iter()
                .zip(&other.current)
                .map(|(a, b)| a + b)
                .collect(),
            baseline: self.baseline + other.baseline,
        })
    }

    /// `time_us,current_pA`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time_us,current_pA")?;
        for (t, i) in self.times.iter().zip(&self.current) {
            writeln!(w, "{},{}", fmt_f64(t * 1e6), fmt_f64(i * 1e12))?;
        }
        Ok(())
    }
}

/// Two-exponential relaxation sampled every `dt` on `[0, horizon]`.
pub fn transient_from_state(
    dev: &PopulationDeviation,
    m: &TransientModel,
    horizon: f64,
    dt: f64,
) -> Result<CurrentTrace> {
    m.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon", "must be > 0"));
    }
    if !(dt > 0.0 && dt <= horizon) {
        return Err(invalid("dt", "must be in (0, horizon]"));
    }
    let n = (horizon / dt).round().max(1.0) as usize;
    let times: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
    let current = times
        .iter()
        .map(|&t| m.baseline + m.delta_current(dev, t))
        .collect();
    CurrentTrace::new(times, current, m.baseline)
}

/// First-order low-pass with the input taken piecewise linear between
/// samples; the update is exact for that input.
pub fn apply_detector(trace: &CurrentTrace, d: &DetectorModel) -> Result<CurrentTrace> {
    d.validate()?;
    if d.rise_time == 0.0 {
        return Ok(trace.clone());
    }
    let tau = d.rise_time;
    let (t, x) = (&trace.times, &trace.current);
    let mut y = Vec::with_capacity(x.len());
    y.push(trace.baseline);
    for k in 0..x.len() - 1 {
        let h = t[k + 1] - t[k];
        let a = (-h / tau).exp();
        let one_minus_a = -(-h / tau).exp_m1();
        let slope = (x[k + 1] - x[k]) / h;
        y.push(a * y[k] + one_minus_a * x[k] + slope * (h - tau * one_minus_a));
    }
    CurrentTrace::new(t.clone(), y, trace.baseline)
}

/// Linear interpolation.
pub fn sample_at(trace: &CurrentTrace, t: f64) -> Result<f64> {
    let (start, end) = trace.span();
    if !(t >= start && t <= end) {
        return Err(Error::OutOfSpan { t, start, end });
    }
    let ts = &trace.times;
    let k = match ts.binary_search_by(|v| v.total_cmp(&t)) {
        Ok(k) => return Ok(trace.current[k]),
        Err(k) => k - 1,
    };
    let f = (t - ts[k]) / (ts[k + 1] - ts[k]);
    Ok(trace.current[k] + f * (trace.current[k + 1] - trace.current[k]))
}

/// Sample at `t` displaced by Gaussian jitter, clamped to the trace span.
pub fn sample_jittered(trace: &CurrentTrace, t: f64, d: &DetectorModel, seed: u64) -> Result<f64> {
    if d.sample_jitter == 0.0 {
        return sample_at(trace, t);
    }
    let (start, end) = trace.span();
    if !(t >= start && t <= end) {
        return Err(Error::OutOfSpan { t, start, end });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal =
        Normal::new(0.0, d.sample_jitter).map_err(|e| invalid("sample_jitter", e.to_string()))?;
    let shifted = (t + normal.sample(&mut rng)).clamp(start, end);
    sample_at(trace, shifted)
}

/// Transient setup shared by both runs of a phase-change comparison.
#[derive(Clone, Debug)]
pub struct TransientSetup {
    pub pair: PairParams,
    pub drive: DriveParams,
    pub rates: KsmRates,
    pub broadening: BroadeningSpec,
    pub model: TransientModel,
    pub detector: DetectorModel,
    /// Total pulse length, s.
    pub total: f64,
    /// Phase reversal point of the second run, s.
    pub phase_change_at: f64,
    pub horizon: f64,
    pub dt: f64,
    pub sample_time: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct TransientRun {
    pub deviation: PopulationDeviation,
    pub raw: CurrentTrace,
    pub filtered: CurrentTrace,
    /// Filtered current minus baseline at the sampling time, A.
    pub sampled_delta: f64,
}

/// The steady state is driven by one pulse of length `total`, once at fixed
/// phase and once reversed at `phase_change_at`.
pub fn phase_change_transients(s: &TransientSetup) -> Result<(TransientRun, TransientRun)> {
    if !(s.phase_change_at > 0.0 && s.phase_change_at < s.total) {
        return Err(invalid("phase_change_at", "must lie inside the pulse"));
    }
    let plain = PulseSequence::new(vec![PulseSegment::new(s.total, s.drive, "pulse")]);
    let reversed =
        PulseSequence::phase_reversal(s.phase_change_at, s.total - s.phase_change_at, s.drive);
    let run = |seq: &PulseSequence| -> Result<TransientRun> {
        let traj = run_sequence(
            &InitialState::SteadyState,
            seq,
            &s.pair,
            &s.rates,
            &s.broadening,
            &StepControl::default(),
        )?;
        let deviation = PopulationDeviation::between(traj.final_state(), &traj.states[0])?;
        let raw = transient_from_state(&deviation, &s.model, s.horizon, s.dt)?;
        let filtered = apply_detector(&raw, &s.detector)?;
        let sampled_delta =
            sample_jittered(&filtered, s.sample_time, &s.detector, s.seed)? - filtered.baseline;
        Ok(TransientRun {
            deviation,
            raw,
            filtered,
            sampled_delta,
        })
    };
    Ok((run(&plain)?, run(&reversed)?))
}

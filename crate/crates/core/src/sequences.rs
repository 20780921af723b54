//! Pulse programs and the nutation / phase-reversal echo experiments.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ensemble::{
    build_ensemble, ensemble_average, ensemble_map, BroadeningSpec, EnsembleMember,
};
use crate::error::{invalid, Error, Result};
use crate::hamiltonians::{rotating_pair_hamiltonian, DriveParams, PairParams};
use crate::output::fmt_f64;
use crate::propagator::{
    evolve, steady_state, KsmRates, PiecewiseConstant, Sampling, StepControl, Trajectory,
};
use crate::spin::{pair_kets, DensityMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    /// Seconds.
    pub duration: f64,
    /// rad/s; zero for free evolution.
    pub rabi_omega1: f64,
    pub phase_deg: f64,
    #[serde(default)]
    pub label: String,
}

impl PulseSegment {
    pub fn new(duration: f64, drive: DriveParams, label: &str) -> Self {
        Self {
            duration,
            rabi_omega1: drive.rabi_omega1,
            phase_deg: drive.phase_deg,
            label: label.to_string(),
        }
    }

    pub fn free(duration: f64) -> Self {
        Self {
            duration,
            rabi_omega1: 0.0,
            phase_deg: 0.0,
            label: "free".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub segments: Vec<PulseSegment>,
}

impl PulseSequence {
    pub fn new(segments: Vec<PulseSegment>) -> Self {
        Self { segments }
    }

    /// `tau` at `drive`, then `second` at the reversed phase.
    pub fn phase_reversal(tau: f64, second: f64, drive: DriveParams) -> Self {
        Self::new(vec![
            PulseSegment::new(tau, drive, "first"),
            PulseSegment::new(second, drive.reversed(), "reversed"),
        ])
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (k, s) in self.segments.iter().enumerate() {
            if !(s.duration.is_finite() && s.duration >= 0.0) {
                return Err(invalid(&format!("segments[{k}].duration"), "must be >= 0"));
            }
            if !(s.rabi_omega1.is_finite() && s.rabi_omega1 >= 0.0) {
                return Err(invalid(
                    &format!("segments[{k}].rabi_omega1"),
                    "must be >= 0",
                ));
            }
            if !s.phase_deg.is_finite() {
                return Err(invalid(
                    &format!("segments[{k}].phase_deg"),
                    "must be finite",
                ));
            }
        }
        if !(self.duration() > 0.0) {
            return Err(invalid("segments", "total duration must be > 0"));
        }
        Ok(())
    }
}

/// Starting state of a pulse experiment.
#[derive(Clone, Debug)]
pub enum InitialState {
    /// Trace-normalized stationary state of each member with the drive off.
    SteadyState,
    /// Pure `|T->`.
    TripletMinus,
    Explicit(DensityMatrix),
}

impl InitialState {
    fn resolve(&self, pair: &PairParams, rates: &KsmRates) -> Result<DensityMatrix> {
        match self {
            InitialState::SteadyState => {
                let h = rotating_pair_hamiltonian(pair, &DriveParams::new(0.0, 0.0)?);
                steady_state(&h, rates)?.normalized()
            }
            InitialState::TripletMinus => DensityMatrix::pure(&pair_kets()[3]),
            InitialState::Explicit(rho) => {
                if rho.dim() != 4 {
                    return Err(Error::DimensionMismatch {
                        expected: 4,
                        found: rho.dim(),
                    });
                }
                Ok(rho.clone())
            }
        }
    }
}

fn member_pair(pair: &PairParams, m: &EnsembleMember) -> PairParams {
    PairParams {
        detuning_a: pair.detuning_a + m.detuning_a,
        detuning_b: pair.detuning_b + m.detuning_b,
        exchange_j: pair.exchange_j,
    }
}

fn member_schedule(
    seq: &PulseSequence,
    pair: &PairParams,
    m: &EnsembleMember,
) -> Result<PiecewiseConstant> {
    let p = member_pair(pair, m);
    let segments = seq
        .segments
        .iter()
        .map(|s| {
            let d = DriveParams {
                rabi_omega1: s.rabi_omega1 * m.rabi_scale,
                phase_deg: crate::hamiltonians::normalize_phase(s.phase_deg),
            };
            (s.duration, rotating_pair_hamiltonian(&p, &d))
        })
        .collect();
    PiecewiseConstant::new(0.0, segments)
}

/// Per-member trajectory plus the integrated recombination deficit
/// `Q(t) = R(0) t - int_0^t R dt`.
fn member_run(
    init: &InitialState,
    seq: &PulseSequence,
    pair: &PairParams,
    rates: &KsmRates,
    m: &EnsembleMember,
    ctrl: &StepControl,
) -> Result<(Trajectory, Vec<f64>)> {
    let p = member_pair(pair, m);
    let rho0 = init.resolve(&p, rates)?;
    let schedule = member_schedule(seq, pair, m)?;
    let traj = evolve(&rho0, &schedule, rates, 0.0, seq.duration(), ctrl)?;
    let r0 = traj.series("recomb_rate").expect("series")[0];
    let q = traj
        .times
        .iter()
        .zip(traj.series("recombined").expect("series"))
        .map(|(t, y)| r0 * t - y)
        .collect();
    Ok((traj, q))
}

/// Ensemble-averaged trajectory of a pulse program. The averaged trajectory
/// carries an extra `Q` series (integrated recombination deficit).
pub fn run_sequence(
    init: &InitialState,
    seq: &PulseSequence,
    pair: &PairParams,
    rates: &KsmRates,
    ens: &BroadeningSpec,
    ctrl: &StepControl,
) -> Result<Trajectory> {
    seq.validate()?;
    pair.validate()?;
    let members = build_ensemble(ens)?;
    let runs = ensemble_map(&members, |m| member_run(init, seq, pair, rates, m, ctrl))?;
    let times = runs[0].0.times.clone();
    for (t, _) in &runs {
        if t.times != times {
            return Err(Error::GridMismatch("member sample times differ".into()));
        }
    }
    let mut states = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let rho = DensityMatrix::weighted_sum(
            members
                .iter()
                .zip(&runs)
                .map(|(m, r)| (m.weight, &r.0.states[k])),
        )
        .expect("non-empty ensemble");
        states.push(rho);
    }
    let mut observables = Vec::new();
    for (name, _) in &runs[0].0.observables {
        let series: Vec<Vec<f64>> = runs
            .iter()
            .map(|r| r.0.series(name).expect("same names").to_vec())
            .collect();
        observables.push((name.clone(), ensemble_average(&members, &series)?));
    }
    let qs: Vec<Vec<f64>> = runs.iter().map(|r| r.1.clone()).collect();
    observables.push(("Q".to_string(), ensemble_average(&members, &qs)?));
    Ok(Trajectory {
        times,
        states,
        observables,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanAxis {
    /// Total program length; the first segment is truncated below `tau_180`.
    TotalLength,
    /// Length of the reversed segment only.
    SecondSegment,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanResult {
    /// Column name in CSV output, e.g. `total_ns`.
    pub abscissa_name: String,
    /// Seconds.
    pub abscissa: Vec<f64>,
    pub pop_tminus: Vec<f64>,
    pub pop_s: Vec<f64>,
    pub q: Vec<f64>,
    pub trace: Vec<f64>,
}

impl ScanResult {
    pub fn len(&self) -> usize {
        self.abscissa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissa.is_empty()
    }

    /// Index of the largest `pop_Tminus` with abscissa inside `[lo, hi]`.
    pub fn argmax_tminus_in(&self, lo: f64, hi: f64) -> Option<usize> {
        (0..self.len())
            .filter(|&k| self.abscissa[k] >= lo && self.abscissa[k] <= hi)
            .max_by(|&a, &b| self.pop_tminus[a].total_cmp(&self.pop_tminus[b]))
    }

    /// Value interpolated at abscissa `x` (seconds).
    pub fn pop_tminus_at(&self, x: f64) -> Option<f64> {
        interpolate(&self.abscissa, &self.pop_tminus, x)
    }

    /// `<abscissa>,pop_Tminus,pop_S,Q` with the abscissa in ns.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{},pop_Tminus,pop_S,Q", self.abscissa_name)?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_f64(self.abscissa[k] * 1e9),
                fmt_f64(self.pop_tminus[k]),
                fmt_f64(self.pop_s[k]),
                fmt_f64(self.q[k])
            )?;
        }
        Ok(())
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let k = xs.windows(2).position(|w| x >= w[0] && x <= w[1])?;
    let (x0, x1) = (xs[k], xs[k + 1]);
    if x1 == x0 {
        return Some(ys[k]);
    }
    let f = (x - x0) / (x1 - x0);
    Some(ys[k] + f * (ys[k + 1] - ys[k]))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("grid", "must not be empty"));
    }
    if grid.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(invalid("grid", "entries must be finite and >= 0"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("grid", "must be strictly increasing"));
    }
    Ok(())
}

/// Runs `seq` once per member, sampling at `sample_times` (relative to the
/// program start), and collects the averaged terminal observables.
fn scan_program(
    init: &InitialState,
    seq: &PulseSequence,
    sample_times: &[f64],
    pair: &PairParams,
    rates: &KsmRates,
    ens: &BroadeningSpec,
    abscissa_name: &str,
    abscissa: Vec<f64>,
) -> Result<ScanResult> {
    let ctrl = StepControl::with_sampling(Sampling::Times(sample_times.to_vec()));
    let traj = run_sequence(init, seq, pair, rates, ens, &ctrl)?;
    // Map each requested time to its sample (duplicates collapse in the trajectory).
    let pick = |name: &str| -> Vec<f64> {
        let s = traj.series(name).expect("series");
        sample_times
            .iter()
            .map(|&t| {
                let k = traj
                    .times
                    .iter()
                    .position(|&u| (u - t).abs() <= 1e-15 * t.abs().max(1e-30) || u == t)
                    .expect("sampled time");
                s[k]
            })
            .collect()
    };
    Ok(ScanResult {
        abscissa_name: abscissa_name.to_string(),
        abscissa,
        pop_tminus: pick("pop_Tminus"),
        pop_s: pick("pop_S"),
        q: pick("Q"),
        trace: pick("trace"),
    })
}

/// Phase-reversal echo: `[tau_180 at phi]` followed by the reversed drive.
/// The grid holds total lengths or second-segment lengths depending on `axis`.
#[allow(clippy::too_many_arguments)]
pub fn echo_scan(
    init: &InitialState,
    tau_180: f64,
    grid: &[f64],
    axis: ScanAxis,
    pair: &PairParams,
    rates: &KsmRates,
    ens: &BroadeningSpec,
    drive: &DriveParams,
) -> Result<ScanResult> {
    check_grid(grid)?;
    if !(tau_180 > 0.0 && tau_180.is_finite()) {
        return Err(invalid("tau_180", "must be > 0"));
    }
    let (times, name) = match axis {
        ScanAxis::TotalLength => (grid.to_vec(), "total_ns"),
        ScanAxis::SecondSegment => (
            grid.iter().map(|s| tau_180 + s).collect::<Vec<_>>(),
            "second_ns",
        ),
    };
    let end = *times.last().expect("non-empty");
    let seq = if end <= tau_180 {
        PulseSequence::new(vec![PulseSegment::new(end, *drive, "first")])
    } else {
        PulseSequence::phase_reversal(tau_180, end - tau_180, *drive)
    };
    let sample: Vec<f64> = times.iter().map(|&t| t.max(0.0)).collect();
    if sample[0] == 0.0 && sample.len() == 1 {
        return Err(invalid("grid", "needs a positive length"));
    }
    scan_program(init, &seq, &sample, pair, rates, ens, name, grid.to_vec())
}

/// Single pulse of increasing length.
pub fn rabi_scan(
    init: &InitialState,
    grid: &[f64],
    pair: &PairParams,
    rates: &KsmRates,
    ens: &BroadeningSpec,
    drive: &DriveParams,
) -> Result<ScanResult> {
    check_grid(grid)?;
    let end = *grid.last().expect("non-empty");
    if !(end > 0.0) {
        return Err(invalid("grid", "needs a positive length"));
    }
    let seq = PulseSequence::new(vec![PulseSegment::new(end, *drive, "nutation")]);
    scan_program(
        init,
        &seq,
        grid,
        pair,
        rates,
        ens,
        "duration_ns",
        grid.to_vec(),
    )
}

/// Full width at half depth of the `pop_Tminus` peak found inside `[lo, hi]`.
/// Depth is measured from the scan minimum inside the same window.
pub fn echo_width(scan: &ScanResult, lo: f64, hi: f64) -> Option<f64> {
    let peak = scan.argmax_tminus_in(lo, hi)?;
    let inside: Vec<usize> = (0..scan.len())
        .filter(|&k| scan.abscissa[k] >= lo && scan.abscissa[k] <= hi)
        .collect();
    let floor = inside
        .iter()
        .map(|&k| scan.pop_tminus[k])
        .fold(f64::INFINITY, f64::min);
    let top = scan.pop_tminus[peak];
    let half = 0.5 * (top + floor);
    let (x, y) = (&scan.abscissa, &scan.pop_tminus);
    let cross = |k0: usize, k1: usize| x[k0] + (half - y[k0]) / (y[k1] - y[k0]) * (x[k1] - x[k0]);
    let first = *inside.first()?;
    let last = *inside.last()?;
    let mut left = None;
    let mut k = peak;
    while k > first {
        if y[k - 1] < half {
            left = Some(cross(k - 1, k));
            break;
        }
        k -= 1;
    }
    let mut right = None;
    let mut k = peak;
    while k < last {
        if y[k + 1] < half {
            right = Some(cross(k, k + 1));
            break;
        }
        k += 1;
    }
    Some(right? - left?)
}

/// Uniform grid `start, start+step, ..., <= end`.
pub fn uniform_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| start + k as f64 * step).collect()
}

/// Locations of local maxima of `y`, refined by a parabola through three points.
pub fn peak_positions(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 1..y.len().saturating_sub(1) {
        if y[k] > y[k - 1] && y[k] >= y[k + 1] {
            let (a, b, c) = (y[k - 1], y[k], y[k + 1]);
            let denom = a - 2.0 * b + c;
            let shift = if denom != 0.0 {
                0.5 * (a - c) / denom
            } else {
                0.0
            };
            out.push(x[k] + shift * (x[k + 1] - x[k - 1]) / 2.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{Spin, SpinSystem};
    use std::f64::consts::PI;

    const W1: f64 = 2.0 * PI * 10e6;

    fn resonant() -> PairParams {
        PairParams {
            detuning_a: 0.0,
            detuning_b: 0.0,
            exchange_j: 0.0,
        }
    }

    #[test]
    fn free_segment_leaves_state() {
        let rho0 = DensityMatrix::pure(&pair_kets()[0]).unwrap();
        let seq = PulseSequence::new(vec![PulseSegment::free(3e-6)]);
        let tr = run_sequence(
            &InitialState::Explicit(rho0.clone()),
            &seq,
            &resonant(),
            &KsmRates::ZERO,
            &BroadeningSpec::none(),
            &StepControl::default(),
        )
        .unwrap();
        assert!(tr.final_state().op().max_abs_diff(rho0.op()) < 1e-15);
    }

    #[test]
    fn reversed_pair_is_identity() {
        let rho0 = DensityMatrix::maximally_mixed(4);
        let rho0 = DensityMatrix::new(
            &rho0.op().scale(0.5)
                + &DensityMatrix::pure(&pair_kets()[3])
                    .unwrap()
                    .op()
                    .scale(0.5),
        )
        .unwrap();
        let seq = PulseSequence::phase_reversal(77e-9, 77e-9, DriveParams::new(W1, 33.0).unwrap());
        let tr = run_sequence(
            &InitialState::Explicit(rho0.clone()),
            &seq,
            &resonant(),
            &KsmRates::ZERO,
            &BroadeningSpec::rabi_only(0.3, 9),
            &StepControl::default(),
        )
        .unwrap();
        assert!(tr.final_state().op().max_abs_diff(rho0.op()) < 1e-9);
    }

    #[test]
    fn selective_pi_pulse_flips_deep_spin() {
        let sys = SpinSystem::pair();
        let pair = PairParams {
            detuning_a: 30.0 * W1,
            detuning_b: 0.0,
            exchange_j: 0.0,
        };
        let t_pi = PI / W1;
        let seq = PulseSequence::new(vec![PulseSegment::new(
            t_pi,
            DriveParams::new(W1, 0.0).unwrap(),
            "pi",
        )]);
        let tr = run_sequence(
            &InitialState::TripletMinus,
            &seq,
            &pair,
            &KsmRates::ZERO,
            &BroadeningSpec::none(),
            &StepControl::default(),
        )
        .unwrap();
        let du = sys.product_ket(&[Spin::Down, Spin::Up]).unwrap();
        let pop = tr.final_state().population(&du);
        // Independent single-spin Rabi formulas for the two electrons.
        let omega_a = (W1 * W1 + pair.detuning_a.powi(2)).sqrt();
        let flip_a = (W1 / omega_a).powi(2) * (omega_a * t_pi / 2.0).sin().powi(2);
        let flip_b = (W1 * t_pi / 2.0).sin().powi(2);
        assert!((pop - flip_b * (1.0 - flip_a)).abs() < 1e-12);
        assert!((pop - 1.0).abs() < 1e-3);
    }

    #[test]
    fn unbroadened_echo_scan_is_plain_nutation() {
        let grid = uniform_grid(0.0, 300e-9, 5e-9);
        let scan = echo_scan(
            &InitialState::TripletMinus,
            100e-9,
            &grid,
            ScanAxis::TotalLength,
            &resonant(),
            &KsmRates::ZERO,
            &BroadeningSpec::none(),
            &DriveParams::new(W1, 0.0).unwrap(),
        )
        .unwrap();
        for (k, &t) in grid.iter().enumerate() {
            let net = if t <= 100e-9 { t } else { 200e-9 - t };
            let expect = (W1 * net / 2.0).cos().powi(4);
            assert!((scan.pop_tminus[k] - expect).abs() < 1e-10, "{t}");
        }
    }

    #[test]
    fn echo_recovers_at_twice_tau() {
        let grid = uniform_grid(0.0, 300e-9, 2e-9);
        let scan = echo_scan(
            &InitialState::TripletMinus,
            100e-9,
            &grid,
            ScanAxis::TotalLength,
            &resonant(),
            &KsmRates::ZERO,
            &BroadeningSpec::rabi_only(0.2, 21),
            &DriveParams::new(W1, 0.0).unwrap(),
        )
        .unwrap();
        let at = |t: f64| scan.pop_tminus_at(t).unwrap();
        assert!(at(200e-9) >= 0.999 * scan.pop_tminus[0]);
        assert!(at(150e-9) <= 0.8);
        let k = scan.argmax_tminus_in(120e-9, 300e-9).unwrap();
        assert!((scan.abscissa[k] - 200e-9).abs() < 1e-12);
    }

    #[test]
    fn second_segment_axis_matches_total_axis() {
        let drive = DriveParams::new(W1, 0.0).unwrap();
        let ens = BroadeningSpec::rabi_only(0.2, 7);
        let a = echo_scan(
            &InitialState::TripletMinus,
            100e-9,
            &[0.0, 50e-9, 100e-9],
            ScanAxis::SecondSegment,
            &resonant(),
            &KsmRates::ZERO,
            &ens,
            &drive,
        )
        .unwrap();
        let b = echo_scan(
            &InitialState::TripletMinus,
            100e-9,
            &[100e-9, 150e-9, 200e-9],
            ScanAxis::TotalLength,
            &resonant(),
            &KsmRates::ZERO,
            &ens,
            &drive,
        )
        .unwrap();
        for k in 0..3 {
            assert!((a.pop_tminus[k] - b.pop_tminus[k]).abs() < 1e-14);
        }
        assert_eq!(a.abscissa_name, "second_ns");
    }

    #[test]
    fn rabi_peaks_are_spaced_by_the_period() {
        let pair = PairParams {
            detuning_a: 40.0 * W1,
            detuning_b: 0.0,
            exchange_j: 0.0,
        };
        let grid = uniform_grid(0.0, 500e-9, 1e-9);
        let scan = rabi_scan(
            &InitialState::TripletMinus,
            &grid,
            &pair,
            &KsmRates::ZERO,
            &BroadeningSpec::none(),
            &DriveParams::new(W1, 0.0).unwrap(),
        )
        .unwrap();
        let peaks = peak_positions(&scan.abscissa, &scan.pop_s);
        assert!(peaks.len() >= 4);
        let period = 2.0 * PI / W1;
        for w in peaks.windows(2) {
            assert!(((w[1] - w[0]) / period - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn nutation_decays_with_rabi_spread() {
        let pair = PairParams {
            detuning_a: 40.0 * W1,
            detuning_b: 0.0,
            exchange_j: 0.0,
        };
        let grid = uniform_grid(0.0, 400e-9, 1e-9);
        let scan = rabi_scan(
            &InitialState::TripletMinus,
            &grid,
            &pair,
            &KsmRates::ZERO,
            &BroadeningSpec::rabi_only(0.2, 21),
            &DriveParams::new(W1, 0.0).unwrap(),
        )
        .unwrap();
        // Singlet content oscillates around 1/4; compare the swing near the
        // first peak with the swing three periods later.
        let mean = 0.25;
        let first = scan.pop_s[..80]
            .iter()
            .map(|v| (v - mean).abs())
            .fold(0.0, f64::max);
        let late = scan.pop_s[290..320]
            .iter()
            .map(|v| (v - mean).abs())
            .fold(0.0, f64::max);
        assert!(late <= first / 3.0, "{late} {first}");
    }

    #[test]
    fn width_helper_on_triangle() {
        let x: Vec<f64> = (0..=20).map(|k| k as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| 1.0 - (v - 10.0).abs() / 10.0).collect();
        let s = ScanResult {
            abscissa_name: "x".into(),
            abscissa: x,
            pop_tminus: y,
            pop_s: vec![0.0; 21],
            q: vec![0.0; 21],
            trace: vec![1.0; 21],
        };
        assert!((echo_width(&s, 0.0, 20.0).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn steady_state_start_is_triplet_rich() {
        let rates = KsmRates {
            r_s: 1e7,
            r_t: 1e3,
            d: 1e4,
            g: 1e4,
            dephasing: 0.0,
        };
        let rho = InitialState::SteadyState
            .resolve(&resonant(), &rates)
            .unwrap();
        assert!((rho.trace() - 1.0).abs() < 1e-12);
        assert!(rho.population(&pair_kets()[3]) > 0.3);
        assert!(rho.population(&pair_kets()[0]) < 1e-2);
    }

    #[test]
    fn rejects_bad_grids() {
        let d = DriveParams::new(W1, 0.0).unwrap();
        let e = BroadeningSpec::none();
        assert!(rabi_scan(
            &InitialState::TripletMinus,
            &[2e-9, 1e-9],
            &resonant(),
            &KsmRates::ZERO,
            &e,
            &d
        )
        .is_err());
        assert!(rabi_scan(
            &InitialState::TripletMinus,
            &[],
            &resonant(),
            &KsmRates::ZERO,
            &e,
            &d
        )
        .is_err());
    }
}

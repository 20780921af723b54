//! Nuclear-spin readout through exchange-gated pair recombination.
//!
//! Stages: thermal polarization of the electron pair, adiabatic exchange
//! ramp, recombination window, laser flash and photoconductivity decay,
//! threshold classification.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hamiltonians::{
    block_eigen, coupled_blocks, find_avoided_crossing, readout_exchange_operator,
    readout_hamiltonian, readout_static_part, ExchangeRamp, RampShape, ReadoutSpinParams,
};
use crate::output::fmt_f64;
use crate::propagator::{evolve, ExchangeSweep, KsmRates, Sampling, StepControl};
use crate::spin::{
    pair_projectors, spin_operator, trace_product, Axis, DensityMatrix, Operator, Spin, SpinSystem,
};

pub const HBAR: f64 = 1.054_571_817e-34;
pub const K_B: f64 = 1.380_649e-23;
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Nuclear orientation under test. `Up` is the orientation whose branch
/// anticrosses the singlet and therefore reads as "1".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuclearBit {
    Up,
    Down,
}

impl NuclearBit {
    pub fn spin(self) -> Spin {
        match self {
            NuclearBit::Up => Spin::Up,
            NuclearBit::Down => Spin::Down,
        }
    }

    fn index(self) -> u64 {
        match self {
            NuclearBit::Up => 0,
            NuclearBit::Down => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlashParams {
    pub photon_energy_ev: f64,
    /// W
    pub power: f64,
    /// s
    pub duration: f64,
    pub quantum_efficiency: f64,
}

impl Default for FlashParams {
    fn default() -> Self {
        Self {
            photon_energy_ev: 2.0,
            power: 3.2e-9,
            duration: 1e-9,
            quantum_efficiency: 1.0,
        }
    }
}

impl FlashParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.photon_energy_ev > 0.0 && self.photon_energy_ev.is_finite()) {
            return Err(invalid("photon_energy_ev", "photon_energy_ev > 0 violated"));
        }
        for (name, v) in [("power", self.power), ("duration", self.duration)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("{name} >= 0 violated")));
            }
        }
        if !(0.0..=1.0).contains(&self.quantum_efficiency) {
            return Err(invalid(
                "quantum_efficiency",
                "quantum_efficiency in [0, 1] violated",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierParams {
    /// Band-band decay rate without a charged pair, 1/s.
    pub k_slow: f64,
    /// Additional trapping rate with a charged pair, 1/s.
    pub k_trap: f64,
    /// Evaluation delay after the flash, s.
    pub tau_decay: f64,
    /// Fraction of the initial conductivity below which "1" is read.
    /// Calibrated when absent.
    #[serde(default)]
    pub threshold: Option<f64>,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self {
            k_slow: 1e4,
            k_trap: 2e6,
            tau_decay: 2e-6,
            threshold: None,
        }
    }
}

impl ClassifierParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_trap > 0.0 && self.k_trap.is_finite()) {
            return Err(invalid("k_trap", "k_trap > 0 violated"));
        }
        if !(self.k_slow >= 0.0 && self.k_slow.is_finite()) {
            return Err(invalid("k_slow", "k_slow >= 0 violated"));
        }
        if !(self.tau_decay > 0.0 && self.tau_decay.is_finite()) {
            return Err(invalid("tau_decay", "tau_decay > 0 violated"));
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(invalid("threshold", "threshold in (0, 1) violated"));
            }
        }
        Ok(())
    }

    /// Deterministic normalized conductivity at `tau_decay`.
    pub fn deterministic_level(&self, charged: bool) -> f64 {
        (-self.rate(charged) * self.tau_decay).exp()
    }

    fn rate(&self, charged: bool) -> f64 {
        self.k_slow + if charged { self.k_trap } else { 0.0 }
    }

    /// Geometric mean of the neutral and charged levels at `tau_decay`.
    pub fn calibrated_threshold(&self) -> f64 {
        (-(self.k_slow + 0.5 * self.k_trap) * self.tau_decay).exp()
    }

    pub fn effective_threshold(&self) -> f64 {
        self.threshold
            .unwrap_or_else(|| self.calibrated_threshold())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayMode {
    Deterministic,
    Stochastic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutParams {
    pub spins: ReadoutSpinParams,
    pub ramp: ExchangeRamp,
    pub rates: KsmRates,
    /// s
    pub tau_life: f64,
    /// K
    pub temperature: f64,
    pub flash: FlashParams,
    pub classifier: ClassifierParams,
    pub decay_mode: DecayMode,
    /// Step control for the exchange ramp.
    pub drift_tol: f64,
}

fn two_pi_hz(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * f
}

impl Default for ReadoutParams {
    fn default() -> Self {
        let spins = ReadoutSpinParams {
            omega_p: two_pi_hz(9.73e9),
            omega_db: two_pi_hz(9.70e9),
            omega_n: two_pi_hz(60e6),
            hyperfine_a: two_pi_hz(117e6),
        };
        Self {
            spins,
            ramp: ExchangeRamp {
                j_max: spins.omega_p + spins.omega_db,
                tau_slope: 5e-6,
                shape: RampShape::RaisedCosine,
                hold: 1e-6,
            },
            rates: KsmRates {
                r_s: 5e6,
                r_t: 0.0,
                d: 0.0,
                g: 0.0,
                dephasing: 0.0,
            },
            tau_life: 1e-6,
            temperature: 0.02,
            flash: FlashParams::default(),
            classifier: ClassifierParams::default(),
            decay_mode: DecayMode::Stochastic,
            drift_tol: StepControl::default().drift_tol,
        }
    }
}

impl ReadoutParams {
    pub fn validate(&self) -> Result<()> {
        self.spins.validate()?;
        self.ramp.validate()?;
        self.rates.validate()?;
        if self.rates.d != 0.0 {
            return Err(Error::DissociationInReadout(self.rates.d));
        }
        if !(self.tau_life > 0.0 && self.tau_life.is_finite()) {
            return Err(invalid("tau_life", "tau_life > 0 violated"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid("temperature", "temperature > 0 violated"));
        }
        if !(self.drift_tol > 0.0) {
            return Err(invalid("drift_tol", "must be > 0"));
        }
        self.flash.validate()?;
        self.classifier.validate()
    }

    pub fn step_control(&self) -> StepControl {
        StepControl {
            drift_tol: self.drift_tol,
            ..StepControl::default()
        }
    }
}

/// Boltzmann state of the electron Zeeman terms, times a pure nuclear state.
pub fn thermal_initial_state(
    spins: &ReadoutSpinParams,
    temperature: f64,
    bit: NuclearBit,
) -> Result<DensityMatrix> {
    spins.validate()?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(invalid("temperature", "temperature > 0 violated"));
    }
    let beta = HBAR / (K_B * temperature);
    let energies: Vec<f64> = [
        (Spin::Up, Spin::Up),
        (Spin::Up, Spin::Down),
        (Spin::Down, Spin::Up),
        (Spin::Down, Spin::Down),
    ]
    .iter()
    .map(|(p, d)| spins.omega_p * p.sz() + spins.omega_db * d.sz())
    .collect();
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = energies
        .iter()
        .map(|e| (-beta * (e - e_min)).exp())
        .collect();
    let z: f64 = w.iter().sum();
    let electrons = Operator::from_real_diagonal(&w.iter().map(|x| x / z).collect::<Vec<_>>());
    let nuc = match bit {
        NuclearBit::Up => Operator::from_real_diagonal(&[1.0, 0.0]),
        NuclearBit::Down => Operator::from_real_diagonal(&[0.0, 1.0]),
    };
    DensityMatrix::new(electrons.kron(&nuc))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepDiagnostics {
    /// Narrowest gap met by the occupied branch, rad/s. `None` when that
    /// branch is an isolated eigenstate.
    pub min_gap: Option<f64>,
    /// Exchange at the narrowest gap, rad/s.
    pub j_star: Option<f64>,
    /// Rate of change of the diabatic energy difference at the crossing, rad/s^2.
    pub sweep_rate: Option<f64>,
    /// `exp(-2 pi (min_gap/2)^2 / sweep_rate)`.
    pub landau_zener: Option<f64>,
    /// Population left on the adiabatic continuation of the occupied branch,
    /// relative to the final trace.
    pub adiabatic_population: f64,
    /// `Tr(P_S rho)` over the electron pair at the end of the sweep.
    pub final_singlet_content: f64,
}

impl SweepDiagnostics {
    /// Population that left the adiabatic branch.
    pub fn diabatic_probability(&self) -> f64 {
        1.0 - self.adiabatic_population
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rho: DensityMatrix,
    pub diagnostics: SweepDiagnostics,
}

/// Unitary evolution under the ramped readout Hamiltonian over
/// `[0, tau_slope + hold]`.
pub fn adiabatic_sweep(
    rho0: &DensityMatrix,
    spins: &ReadoutSpinParams,
    ramp: &ExchangeRamp,
    ctrl: &StepControl,
) -> Result<SweepOutcome> {
    spins.validate()?;
    ramp.validate()?;
    if rho0.dim() != 8 {
        return Err(Error::DimensionMismatch {
            expected: 8,
            found: rho0.dim(),
        });
    }
    let base = readout_static_part(spins);
    let coupling = readout_exchange_operator();
    let blocks = coupled_blocks(&[&base, &coupling]);
    let schedule = ExchangeSweep::new(base.clone(), coupling.clone(), *ramp, 0.0);
    let ctrl = StepControl {
        sampling: Sampling::Endpoints,
        ..ctrl.clone()
    };
    let traj = evolve(
        rho0,
        &schedule,
        &KsmRates::ZERO,
        0.0,
        ramp.duration(),
        &ctrl,
    )?;
    let rho = traj.final_state().clone();

    // Occupied branch: the j = 0 eigenstate holding the most population.
    let (block, rank, ket) = blocks
        .iter()
        .flat_map(|b| {
            block_eigen(&base, b)
                .into_iter()
                .enumerate()
                .map(move |(r, (_, v))| (b.clone(), r, v))
        })
        .max_by(|x, y| {
            rho0.op()
                .expectation_in(&x.2)
                .re
                .total_cmp(&rho0.op().expectation_in(&y.2).re)
        })
        .expect("non-empty spectrum");
    let final_h = &base + &coupling.scale(ramp.j_max);
    let final_vec = &block_eigen(&final_h, &block)[rank].1;
    let adiabatic_population = rho.op().expectation_in(final_vec).re / rho.trace();

    let crossing = find_avoided_crossing(spins, &ket, ramp.j_max);
    let sweep_rate = crossing.map(|x| x.diabatic_slope * ramp.derivative(ramp.time_at(x.j_star)));
    let landau_zener = crossing.zip(sweep_rate).map(|(x, v)| {
        if v > 0.0 {
            (-2.0 * std::f64::consts::PI * (0.5 * x.min_gap).powi(2) / v).exp()
        } else {
            0.0
        }
    });
    let sys = SpinSystem::readout();
    let (a, b) = sys.electron_pair();
    let ps = pair_projectors(&sys, a, b)?.singlet;
    let diagnostics = SweepDiagnostics {
        min_gap: crossing.map(|x| x.min_gap),
        j_star: crossing.map(|x| x.j_star),
        sweep_rate,
        landau_zener,
        adiabatic_population,
        final_singlet_content: trace_product(rho.op(), &ps),
    };
    Ok(SweepOutcome { rho, diagnostics })
}

/// Probability that the pair recombined (charging the deep level) during
/// `tau_life` at fixed exchange `j_hold`.
pub fn recombination_window(
    rho: &DensityMatrix,
    rates: &KsmRates,
    tau_life: f64,
    spins: &ReadoutSpinParams,
    j_hold: f64,
) -> Result<f64> {
    if rates.d != 0.0 {
        return Err(Error::DissociationInReadout(rates.d));
    }
    if !(tau_life > 0.0 && tau_life.is_finite()) {
        return Err(invalid("tau_life", "tau_life > 0 violated"));
    }
    let h = readout_hamiltonian(spins, j_hold);
    let traj = evolve(
        rho,
        &h,
        &rates.without_generation(),
        0.0,
        tau_life,
        &StepControl::default(),
    )?;
    let y = *traj
        .series("recombined")
        .expect("series")
        .last()
        .expect("sample");
    Ok(y.clamp(0.0, 1.0))
}

/// Electron-hole pairs produced by the flash.
pub fn photon_budget(f: &FlashParams) -> u64 {
    let photons =
        f.power * f.duration * f.quantum_efficiency / (f.photon_energy_ev * ELEMENTARY_CHARGE);
    photons.round() as u64
}

/// Normalized photoconductivity `sigma(t)/sigma(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayTrace {
    pub times: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl DecayTrace {
    /// `time_us,sigma`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time_us,sigma")?;
        for (t, v) in self.times.iter().zip(&self.sigma) {
            writeln!(w, "{},{}", fmt_f64(t * 1e6), fmt_f64(*v))?;
        }
        Ok(())
    }

    pub fn value_at(&self, t: f64) -> Result<f64> {
        let (start, end) = (self.times[0], self.times[self.times.len() - 1]);
        if !(t >= start && t <= end) {
            return Err(Error::OutOfSpan { t, start, end });
        }
        let k = self.times.partition_point(|&u| u < t);
        if self.times[k] == t {
            return Ok(self.sigma[k]);
        }
        let f = (t - self.times[k - 1]) / (self.times[k] - self.times[k - 1]);
        Ok(self.sigma[k - 1] + f * (self.sigma[k] - self.sigma[k - 1]))
    }
}

fn decay_grid(horizon: f64, tau_decay: f64) -> Vec<f64> {
    let n = 200;
    let mut t: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
    if tau_decay < horizon {
        t.push(tau_decay);
    }
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

fn decay_on_grid<R: Rng>(
    charged: bool,
    n_pairs: u64,
    c: &ClassifierParams,
    times: &[f64],
    mode: DecayMode,
    rng: &mut R,
) -> DecayTrace {
    let k = c.rate(charged);
    let sigma = match mode {
        DecayMode::Deterministic => times.iter().map(|t| (-k * t).exp()).collect(),
        DecayMode::Stochastic => {
            if n_pairs == 0 {
                vec![1.0; times.len()]
            } else {
                let lifetimes: Vec<f64> = (0..n_pairs)
                    .map(|_| {
                        let u: f64 = rng.random();
                        -(1.0 - u).ln() / k
                    })
                    .collect();
                times
                    .iter()
                    .map(|&t| lifetimes.iter().filter(|&&l| l > t).count() as f64 / n_pairs as f64)
                    .collect()
            }
        }
    };
    DecayTrace {
        times: times.to_vec(),
        sigma,
    }
}

/// Conductivity after the flash. The stochastic mode draws one exponential
/// lifetime per carrier from the seeded generator.
pub fn flash_decay(
    charged: bool,
    n_pairs: u64,
    c: &ClassifierParams,
    horizon: f64,
    mode: DecayMode,
    seed: u64,
) -> Result<DecayTrace> {
    c.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon", "must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(decay_on_grid(
        charged,
        n_pairs,
        c,
        &decay_grid(horizon, c.tau_decay),
        mode,
        &mut rng,
    ))
}

/// `1` when the conductivity at `tau_decay` fell below the threshold.
pub fn classify_readout(trace: &DecayTrace, c: &ClassifierParams) -> Result<u8> {
    let s0 = trace.value_at(trace.times[0])?;
    let s = trace.value_at(c.tau_decay)?;
    let ratio = if s0 > 0.0 { s / s0 } else { 1.0 };
    Ok(u8::from(ratio < c.effective_threshold()))
}

/// Spin-side stages for one nuclear orientation.
#[derive(Clone, Debug)]
pub struct SpinStages {
    pub bit: NuclearBit,
    pub initial: DensityMatrix,
    pub sweep: SweepOutcome,
    pub p_charged: f64,
    /// `<2 I_z>` of the surviving ensemble before and after the window.
    pub nuclear_polarization_initial: f64,
    pub nuclear_polarization_final: f64,
}

fn nuclear_polarization(rho: &DensityMatrix) -> f64 {
    let iz = spin_operator(&SpinSystem::readout(), 2, Axis::Z).expect("nucleus site");
    2.0 * trace_product(rho.op(), &iz) / rho.trace()
}

pub fn run_spin_stages(p: &ReadoutParams, bit: NuclearBit) -> Result<SpinStages> {
    p.validate()?;
    let initial = thermal_initial_state(&p.spins, p.temperature, bit)?;
    let sweep = adiabatic_sweep(&initial, &p.spins, &p.ramp, &p.step_control())?;
    let p_charged = recombination_window(&sweep.rho, &p.rates, p.tau_life, &p.spins, p.ramp.j_max)?;
    // Surviving ensemble after the window.
    let h = readout_hamiltonian(&p.spins, p.ramp.j_max);
    let after = evolve(
        &sweep.rho,
        &h,
        &p.rates.without_generation(),
        0.0,
        p.tau_life,
        &StepControl::default(),
    )?;
    Ok(SpinStages {
        bit,
        nuclear_polarization_initial: nuclear_polarization(&initial),
        nuclear_polarization_final: nuclear_polarization(after.final_state()),
        initial,
        sweep,
        p_charged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FidelityReport {
    pub n_trials: usize,
    pub n_pairs: u64,
    pub p_charged_up: f64,
    pub p_charged_down: f64,
    pub p_read1_given_up: f64,
    pub p_read1_given_down: f64,
    pub contrast: f64,
}

impl FidelityReport {
    /// Average probability of reading the right bit.
    pub fn fidelity(&self) -> f64 {
        0.5 * (1.0 + self.contrast)
    }
}

/// Counter-based generator for one trial: the stream identifies bit and trial.
fn trial_rng(seed: u64, bit: NuclearBit, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((bit.index() << 48) | trial as u64);
    rng
}

/// Fraction of trials read as "1" given a charging probability.
fn read1_fraction(
    p_charged: f64,
    bit: NuclearBit,
    p: &ReadoutParams,
    n_pairs: u64,
    n_trials: usize,
    seed: u64,
) -> Result<f64> {
    let grid = [0.0, p.classifier.tau_decay];
    let ones: Vec<u8> = (0..n_trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(seed, bit, k);
            // The charge outcome is drawn first so that runs differing only in
            // the flash share it.
            let charged = rng.random::<f64>() < p_charged;
            let tr = decay_on_grid(
                charged,
                n_pairs,
                &p.classifier,
                &grid,
                p.decay_mode,
                &mut rng,
            );
            classify_readout(&tr, &p.classifier)
        })
        .collect::<Result<Vec<u8>>>()?;
    let count: usize = ones.iter().map(|&b| b as usize).sum();
    Ok(count as f64 / n_trials as f64)
}

/// Full-pipeline Monte Carlo for both nuclear orientations.
pub fn readout_fidelity(p: &ReadoutParams, n_trials: usize, seed: u64) -> Result<FidelityReport> {
    if n_trials < 1 {
        return Err(invalid("n_trials", "n_trials >= 1 violated"));
    }
    let up = run_spin_stages(p, NuclearBit::Up)?;
    let down = run_spin_stages(p, NuclearBit::Down)?;
    fidelity_from_stages(p, up.p_charged, down.p_charged, n_trials, seed)
}

/// Classical stages only, reusing charging probabilities from the spin stages.
pub fn fidelity_from_stages(
    p: &ReadoutParams,
    p_charged_up: f64,
    p_charged_down: f64,
    n_trials: usize,
    seed: u64,
) -> Result<FidelityReport> {
    p.flash.validate()?;
    p.classifier.validate()?;
    let n_pairs = photon_budget(&p.flash);
    let up = read1_fraction(p_charged_up, NuclearBit::Up, p, n_pairs, n_trials, seed)?;
    let down = read1_fraction(p_charged_down, NuclearBit::Down, p, n_pairs, n_trials, seed)?;
    Ok(FidelityReport {
        n_trials,
        n_pairs,
        p_charged_up,
        p_charged_down,
        p_read1_given_up: up,
        p_read1_given_down: down,
        contrast: up - down,
    })
}

/// Flash power that yields `n` pairs for the other flash settings.
pub fn power_for_pairs(f: &FlashParams, n: u64) -> f64 {
    n as f64 * f.photon_energy_ev * ELEMENTARY_CHARGE / (f.duration * f.quantum_efficiency)
}

/// One pass of the full protocol for a known nuclear orientation.
#[derive(Clone, Debug)]
pub struct SingleShot {
    pub stages: SpinStages,
    pub charged: bool,
    pub n_pairs: u64,
    pub trace: DecayTrace,
    pub bit_read: u8,
}

/// Same generator stream as trial 0 of [`readout_fidelity`].
pub fn single_shot(p: &ReadoutParams, bit: NuclearBit, seed: u64) -> Result<SingleShot> {
    let stages = run_spin_stages(p, bit)?;
    let n_pairs = photon_budget(&p.flash);
    let mut rng = trial_rng(seed, bit, 0);
    let charged = rng.random::<f64>() < stages.p_charged;
    let grid = decay_grid(3.0 * p.classifier.tau_decay, p.classifier.tau_decay);
    let trace = decay_on_grid(
        charged,
        n_pairs,
        &p.classifier,
        &grid,
        p.decay_mode,
        &mut rng,
    );
    let bit_read = classify_readout(&trace, &p.classifier)?;
    Ok(SingleShot {
        stages,
        charged,
        n_pairs,
        trace,
        bit_read,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{c, pair_kets};

    fn fast_params() -> ReadoutParams {
        ReadoutParams::default()
    }

    #[test]
    fn photon_budget_examples() {
        assert_eq!(photon_budget(&FlashParams::default()), 10);
        assert_eq!(
            photon_budget(&FlashParams {
                power: 0.0,
                ..FlashParams::default()
            }),
            0
        );
        assert_eq!(
            photon_budget(&FlashParams {
                power: 6.4e-9,
                ..FlashParams::default()
            }),
            20
        );
        let f = FlashParams::default();
        assert_eq!(
            photon_budget(&FlashParams {
                power: power_for_pairs(&f, 50),
                ..f
            }),
            50
        );
    }

    #[test]
    fn thermal_limits_and_ratio() {
        let s = fast_params().spins;
        let cold = thermal_initial_state(&s, 1e-6, NuclearBit::Up).unwrap();
        let sys = SpinSystem::readout();
        let ket = sys
            .product_ket(&[Spin::Down, Spin::Down, Spin::Up])
            .unwrap();
        assert!((cold.population(&ket) - 1.0).abs() < 1e-15);
        let hot = thermal_initial_state(&s, 1e9, NuclearBit::Down).unwrap();
        for e in [
            [Spin::Up, Spin::Up],
            [Spin::Up, Spin::Down],
            [Spin::Down, Spin::Up],
            [Spin::Down, Spin::Down],
        ] {
            let k = sys.product_ket(&[e[0], e[1], Spin::Down]).unwrap();
            assert!((hot.population(&k) - 0.25).abs() < 1e-6);
        }
        let t = 0.3;
        let mid = thermal_initial_state(&s, t, NuclearBit::Up).unwrap();
        let pop = |a, b| mid.population(&sys.product_ket(&[a, b, Spin::Up]).unwrap());
        let r = pop(Spin::Up, Spin::Down) / pop(Spin::Down, Spin::Down);
        let expected = (-HBAR * s.omega_p / (K_B * t)).exp();
        assert!((r / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_examples() {
        let s = fast_params().spins;
        let rates = KsmRates {
            r_s: 3e6,
            ..KsmRates::ZERO
        };
        let sys = SpinSystem::readout();
        let nuc_down = sys
            .product_ket(&[Spin::Down, Spin::Down, Spin::Down])
            .unwrap();
        // Singlet times nuclear down: with A = 0 and equal electron Zeeman
        // frequencies the Hamiltonian commutes with P_S.
        let flat = ReadoutSpinParams {
            omega_p: 1e9,
            omega_db: 1e9,
            omega_n: 1e6,
            hyperfine_a: 0.0,
        };
        let singlet = DensityMatrix::pure(&pair_kets()[0]).unwrap().kron(
            &DensityMatrix::pure(&nalgebra::DVector::from_vec(vec![c(0.0), c(1.0)])).unwrap(),
        );
        let p = recombination_window(&singlet, &rates, 1e-6, &flat, 3e8).unwrap();
        assert!((p - (1.0 - (-3.0f64).exp())).abs() < 1e-12);
        assert!((p - 0.950).abs() < 1e-3);
        let tm = DensityMatrix::pure(&nuc_down).unwrap();
        let p_tm = recombination_window(&tm, &rates, 1e-6, &s, 1e10).unwrap();
        assert!(p_tm < 1e-14, "{p_tm:e}");
        let bad = KsmRates { d: 1.0, ..rates };
        assert!(matches!(
            recombination_window(&tm, &bad, 1e-6, &s, 0.0),
            Err(Error::DissociationInReadout(_))
        ));
    }

    #[test]
    fn deterministic_decay_and_classifier() {
        let c = ClassifierParams::default();
        let flat = flash_decay(
            false,
            10,
            &ClassifierParams { k_slow: 0.0, ..c },
            5e-6,
            DecayMode::Deterministic,
            0,
        )
        .unwrap();
        assert!(flat.sigma.iter().all(|&s| s == 1.0));
        let t = 1.0 / (c.k_slow + c.k_trap);
        let tr = flash_decay(true, 10, &c, 5e-6, DecayMode::Deterministic, 0).unwrap();
        assert!((tr.value_at(t).unwrap() - (-1f64).exp()).abs() < 1e-4);
        assert_eq!(classify_readout(&tr, &c).unwrap(), 1);
        let neutral = flash_decay(false, 10, &c, 5e-6, DecayMode::Deterministic, 0).unwrap();
        assert_eq!(classify_readout(&neutral, &c).unwrap(), 0);
        let thr = c.calibrated_threshold();
        let gm = (c.deterministic_level(true) * c.deterministic_level(false)).sqrt();
        assert!((thr - gm).abs() < 1e-15);
    }

    #[test]
    fn stochastic_decay_mean_matches_exponential() {
        let c = ClassifierParams::default();
        let trials = 10_000;
        let horizon = 2e-6;
        let t_probe = 0.5e-6;
        let samples: Vec<f64> = (0..trials)
            .map(|s| {
                flash_decay(true, 10, &c, horizon, DecayMode::Stochastic, s)
                    .unwrap()
                    .value_at(t_probe)
                    .unwrap()
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / trials as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials as f64 - 1.0);
        let se = (var / trials as f64).sqrt();
        let expect = (-(c.k_slow + c.k_trap) * t_probe).exp();
        assert!((mean - expect).abs() < 3.0 * se, "{mean} {expect} {se}");
    }

    #[test]
    fn zero_pairs_read_as_zero() {
        let c = ClassifierParams::default();
        let tr = flash_decay(true, 0, &c, 5e-6, DecayMode::Stochastic, 3).unwrap();
        assert_eq!(classify_readout(&tr, &c).unwrap(), 0);
    }

    #[test]
    fn classifier_needs_tau_decay_in_trace() {
        let c = ClassifierParams::default();
        let tr = flash_decay(true, 5, &c, 1e-6, DecayMode::Deterministic, 0).unwrap();
        assert!(matches!(
            classify_readout(&tr, &c),
            Err(Error::OutOfSpan { .. })
        ));
    }

    #[test]
    fn parameter_validation() {
        assert!(ClassifierParams {
            threshold: Some(1.5),
            ..ClassifierParams::default()
        }
        .validate()
        .is_err());
        assert!(FlashParams {
            quantum_efficiency: 1.2,
            ..FlashParams::default()
        }
        .validate()
        .is_err());
        let mut p = ReadoutParams::default();
        p.rates.d = 1.0;
        assert!(matches!(p.validate(), Err(Error::DissociationInReadout(_))));
    }
}

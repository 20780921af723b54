//! JSON run configuration. Frequencies are cyclic MHz, times ns, rates 1/s.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ensemble::{BroadeningSpec, Scheme};
use crate::error::{Error, Result};
use crate::hamiltonians::{DriveParams, ExchangeRamp, PairParams, RampShape, ReadoutSpinParams};
use crate::photocurrent::{DetectorModel, TransientModel};
use crate::propagator::KsmRates;
use crate::readout::{ClassifierParams, DecayMode, FlashParams, ReadoutParams};
use crate::sequences::{uniform_grid, InitialState, ScanAxis};

pub fn mhz(f: f64) -> f64 {
    2.0 * PI * 1e6 * f
}

pub fn to_mhz(w: f64) -> f64 {
    w / (2.0 * PI * 1e6)
}

pub fn ns(t: f64) -> f64 {
    t * 1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub output_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: "out".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSection {
    pub detuning_a_mhz: f64,
    pub detuning_b_mhz: f64,
    pub exchange_j_mhz: f64,
}

impl Default for PairSection {
    fn default() -> Self {
        Self {
            detuning_a_mhz: 30.0,
            detuning_b_mhz: 0.0,
            exchange_j_mhz: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveSection {
    pub rabi_mhz: f64,
    pub phase_deg: f64,
}

impl Default for DriveSection {
    fn default() -> Self {
        Self {
            rabi_mhz: 10.0,
            phase_deg: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSection {
    #[serde(rename = "r_S")]
    pub r_s: f64,
    #[serde(rename = "r_T")]
    pub r_t: f64,
    pub d: f64,
    #[serde(rename = "G")]
    pub g: f64,
    pub dephasing: f64,
}

impl Default for RatesSection {
    fn default() -> Self {
        Self {
            r_s: 1e7,
            r_t: 1e3,
            d: 1e4,
            g: 1e4,
            dephasing: 0.0,
        }
    }
}

impl RatesSection {
    fn readout_default() -> Self {
        Self {
            r_s: 5e6,
            r_t: 0.0,
            d: 0.0,
            g: 0.0,
            dephasing: 0.0,
        }
    }

    pub fn to_rates(&self) -> KsmRates {
        KsmRates {
            r_s: self.r_s,
            r_t: self.r_t,
            d: self.d,
            g: self.g,
            dephasing: self.dephasing,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BroadeningSection {
    pub sigma_detuning_a_mhz: f64,
    pub sigma_detuning_b_mhz: f64,
    pub sigma_rabi_rel: f64,
    pub n_nodes: usize,
    pub scheme: Scheme,
}

impl Default for BroadeningSection {
    fn default() -> Self {
        Self {
            sigma_detuning_a_mhz: 0.0,
            sigma_detuning_b_mhz: 3.0,
            sigma_rabi_rel: 0.2,
            n_nodes: 21,
            scheme: Scheme::GaussHermite,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    SteadyState,
    TripletMinus,
}

impl InitialKind {
    pub fn to_initial(self) -> InitialState {
        match self {
            InitialKind::SteadyState => InitialState::SteadyState,
            InitialKind::TripletMinus => InitialState::TripletMinus,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EchoSection {
    pub tau_180_ns: f64,
    pub grid_start_ns: f64,
    pub grid_end_ns: f64,
    pub grid_step_ns: f64,
    pub axis: ScanAxis,
    pub initial: InitialKind,
}

impl Default for EchoSection {
    fn default() -> Self {
        Self {
            tau_180_ns: 100.0,
            grid_start_ns: 0.0,
            grid_end_ns: 300.0,
            grid_step_ns: 1.0,
            axis: ScanAxis::TotalLength,
            initial: InitialKind::SteadyState,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RabiSection {
    pub grid_start_ns: f64,
    pub grid_end_ns: f64,
    pub grid_step_ns: f64,
    pub initial: InitialKind,
}

impl Default for RabiSection {
    fn default() -> Self {
        Self {
            grid_start_ns: 0.0,
            grid_end_ns: 500.0,
            grid_step_ns: 1.0,
            initial: InitialKind::SteadyState,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransientSection {
    pub coeff_singlet_pa: f64,
    pub coeff_triplet_pa: f64,
    pub tau_singlet_relax_ns: f64,
    pub tau_triplet_relax_ns: f64,
    pub baseline_pa: f64,
    /// Total pulse length of both runs.
    pub pulse_total_ns: f64,
    /// Where the second run reverses the phase.
    pub phase_change_ns: f64,
    pub horizon_ns: f64,
    pub dt_ns: f64,
    pub sample_ns: f64,
}

impl Default for TransientSection {
    fn default() -> Self {
        Self {
            coeff_singlet_pa: -100.0,
            coeff_triplet_pa: 100.0,
            tau_singlet_relax_ns: 10_000.0,
            tau_triplet_relax_ns: 40_000.0,
            baseline_pa: 0.0,
            pulse_total_ns: 200.0,
            phase_change_ns: 100.0,
            horizon_ns: 100_000.0,
            dt_ns: 10.0,
            sample_ns: 19_500.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub rise_time_ns: f64,
    pub sample_jitter_ns: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            rise_time_ns: 12_000.0,
            sample_jitter_ns: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlashSection {
    pub photon_energy_ev: f64,
    pub power_nw: f64,
    pub duration_ns: f64,
    pub quantum_efficiency: f64,
}

impl Default for FlashSection {
    fn default() -> Self {
        Self {
            photon_energy_ev: 2.0,
            power_nw: 3.2,
            duration_ns: 1.0,
            quantum_efficiency: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub k_slow: f64,
    pub k_trap: f64,
    pub tau_decay_ns: f64,
    /// Filled with the calibrated value when absent.
    pub threshold: Option<f64>,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self {
            k_slow: 1e4,
            k_trap: 2e6,
            tau_decay_ns: 2000.0,
            threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutSection {
    pub omega_p_mhz: f64,
    pub omega_db_mhz: f64,
    pub omega_n_mhz: f64,
    pub hyperfine_a_mhz: f64,
    /// Filled with `omega_p_mhz + omega_db_mhz` when absent.
    pub j_max_mhz: Option<f64>,
    pub tau_slope_ns: f64,
    pub ramp_shape: RampShape,
    pub hold_ns: f64,
    pub rates: RatesSection,
    pub tau_life_ns: f64,
    pub temperature_k: f64,
    pub drift_tol: f64,
    pub flash: FlashSection,
    pub classifier: ClassifierSection,
    pub decay_mode: DecayMode,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        Self {
            omega_p_mhz: 9730.0,
            omega_db_mhz: 9700.0,
            omega_n_mhz: 60.0,
            hyperfine_a_mhz: 117.0,
            j_max_mhz: None,
            tau_slope_ns: 5000.0,
            ramp_shape: RampShape::RaisedCosine,
            hold_ns: 1000.0,
            rates: RatesSection::readout_default(),
            tau_life_ns: 1000.0,
            temperature_k: 0.02,
            drift_tol: 5e-5,
            flash: FlashSection::default(),
            classifier: ClassifierSection::default(),
            decay_mode: DecayMode::Stochastic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelitySection {
    pub n_trials: usize,
    /// Flash pair counts to tabulate; the flash power is rescaled per count.
    pub pair_counts: Vec<u64>,
}

impl Default for FidelitySection {
    fn default() -> Self {
        Self {
            n_trials: 10_000,
            pair_counts: vec![5, 10, 20, 50],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelsSection {
    pub j_start_mhz: f64,
    /// Filled with the readout `j_max_mhz` when absent.
    pub j_end_mhz: Option<f64>,
    pub n_points: usize,
}

impl Default for LevelsSection {
    fn default() -> Self {
        Self {
            j_start_mhz: 0.0,
            j_end_mhz: None,
            n_points: 801,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub pair: PairSection,
    pub drive: DriveSection,
    pub rates: RatesSection,
    pub broadening: BroadeningSection,
    pub echo: EchoSection,
    pub rabi: RabiSection,
    pub transient: TransientSection,
    pub detector: DetectorSection,
    pub readout: ReadoutSection,
    pub fidelity: FidelitySection,
    pub levels: LevelsSection,
}

fn check(path: &str, ok: bool, bound: &str, value: impl std::fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{path}: {bound} violated (got {value})"
        )))
    }
}

fn finite(path: &str, v: f64) -> Result<()> {
    check(path, v.is_finite(), "finite value", v)
}

fn non_negative(path: &str, v: f64, name: &str) -> Result<()> {
    check(path, v.is_finite() && v >= 0.0, &format!("{name} >= 0"), v)
}

fn positive(path: &str, v: f64, name: &str) -> Result<()> {
    check(path, v.is_finite() && v > 0.0, &format!("{name} > 0"), v)
}

fn check_rates(prefix: &str, r: &RatesSection) -> Result<()> {
    non_negative(&format!("{prefix}.r_S"), r.r_s, "r_S")?;
    non_negative(&format!("{prefix}.r_T"), r.r_t, "r_T")?;
    non_negative(&format!("{prefix}.d"), r.d, "d")?;
    non_negative(&format!("{prefix}.G"), r.g, "G")?;
    non_negative(&format!("{prefix}.dephasing"), r.dephasing, "dephasing")?;
    check(
        &format!("{prefix}.r_S"),
        r.r_s >= r.r_t,
        "r_S >= r_T",
        r.r_s,
    )
}

fn check_grid(prefix: &str, start: f64, end: f64, step: f64) -> Result<()> {
    non_negative(&format!("{prefix}.grid_start_ns"), start, "grid_start_ns")?;
    positive(&format!("{prefix}.grid_step_ns"), step, "grid_step_ns")?;
    check(
        &format!("{prefix}.grid_end_ns"),
        end.is_finite() && end > start,
        "grid_end_ns > grid_start_ns",
        end,
    )?;
    let n = (end - start) / step;
    check(
        &format!("{prefix}.grid_step_ns"),
        n <= 1e6,
        "at most 1e6 grid points",
        n,
    )
}

impl Config {
    /// Fills derived defaults so that a dump states every value used.
    fn resolve(&mut self) {
        let r = &mut self.readout;
        if r.j_max_mhz.is_none() {
            r.j_max_mhz = Some(r.omega_p_mhz + r.omega_db_mhz);
        }
        if self.readout.classifier.threshold.is_none() {
            let thr = self.classifier_params_unresolved().calibrated_threshold();
            self.readout.classifier.threshold = Some(thr);
        }
        if self.levels.j_end_mhz.is_none() {
            self.levels.j_end_mhz = self.readout.j_max_mhz;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.pair;
        finite("pair.detuning_a_mhz", p.detuning_a_mhz)?;
        finite("pair.detuning_b_mhz", p.detuning_b_mhz)?;
        non_negative("pair.exchange_j_mhz", p.exchange_j_mhz, "exchange_j_mhz")?;
        non_negative("drive.rabi_mhz", self.drive.rabi_mhz, "rabi_mhz")?;
        finite("drive.phase_deg", self.drive.phase_deg)?;
        check_rates("rates", &self.rates)?;
        let b = &self.broadening;
        non_negative(
            "broadening.sigma_detuning_a_mhz",
            b.sigma_detuning_a_mhz,
            "sigma_detuning_a_mhz",
        )?;
        non_negative(
            "broadening.sigma_detuning_b_mhz",
            b.sigma_detuning_b_mhz,
            "sigma_detuning_b_mhz",
        )?;
        non_negative(
            "broadening.sigma_rabi_rel",
            b.sigma_rabi_rel,
            "sigma_rabi_rel",
        )?;
        check(
            "broadening.n_nodes",
            b.n_nodes >= 1,
            "n_nodes >= 1",
            b.n_nodes,
        )?;
        let e = &self.echo;
        positive("echo.tau_180_ns", e.tau_180_ns, "tau_180_ns")?;
        check_grid("echo", e.grid_start_ns, e.grid_end_ns, e.grid_step_ns)?;
        let r = &self.rabi;
        check_grid("rabi", r.grid_start_ns, r.grid_end_ns, r.grid_step_ns)?;
        if matches!(e.initial, InitialKind::SteadyState)
            || matches!(r.initial, InitialKind::SteadyState)
        {
            positive("rates.G", self.rates.g, "G (steady-state start)")?;
            check(
                "rates.d",
                self.rates.r_t + self.rates.d > 0.0,
                "r_T + d > 0 (steady-state start)",
                self.rates.d,
            )?;
        }
        let t = &self.transient;
        finite("transient.coeff_singlet_pa", t.coeff_singlet_pa)?;
        finite("transient.coeff_triplet_pa", t.coeff_triplet_pa)?;
        finite("transient.baseline_pa", t.baseline_pa)?;
        positive(
            "transient.tau_singlet_relax_ns",
            t.tau_singlet_relax_ns,
            "tau_singlet_relax_ns",
        )?;
        positive(
            "transient.tau_triplet_relax_ns",
            t.tau_triplet_relax_ns,
            "tau_triplet_relax_ns",
        )?;
        positive(
            "transient.pulse_total_ns",
            t.pulse_total_ns,
            "pulse_total_ns",
        )?;
        check(
            "transient.phase_change_ns",
            t.phase_change_ns > 0.0 && t.phase_change_ns < t.pulse_total_ns,
            "0 < phase_change_ns < pulse_total_ns",
            t.phase_change_ns,
        )?;
        positive("transient.horizon_ns", t.horizon_ns, "horizon_ns")?;
        check(
            "transient.dt_ns",
            t.dt_ns > 0.0 && t.dt_ns <= t.horizon_ns,
            "0 < dt_ns <= horizon_ns",
            t.dt_ns,
        )?;
        check(
            "transient.sample_ns",
            t.sample_ns >= 0.0 && t.sample_ns <= t.horizon_ns,
            "0 <= sample_ns <= horizon_ns",
            t.sample_ns,
        )?;
        non_negative(
            "detector.rise_time_ns",
            self.detector.rise_time_ns,
            "rise_time_ns",
        )?;
        non_negative(
            "detector.sample_jitter_ns",
            self.detector.sample_jitter_ns,
            "sample_jitter_ns",
        )?;
        self.validate_readout()?;
        check(
            "fidelity.n_trials",
            self.fidelity.n_trials >= 1,
            "n_trials >= 1",
            self.fidelity.n_trials,
        )?;
        let l = &self.levels;
        non_negative("levels.j_start_mhz", l.j_start_mhz, "j_start_mhz")?;
        if let Some(end) = l.j_end_mhz {
            check(
                "levels.j_end_mhz",
                end.is_finite() && end > l.j_start_mhz,
                "j_end_mhz > j_start_mhz",
                end,
            )?;
        }
        check(
            "levels.n_points",
            l.n_points >= 2,
            "n_points >= 2",
            l.n_points,
        )
    }

    fn validate_readout(&self) -> Result<()> {
        let r = &self.readout;
        positive("readout.omega_p_mhz", r.omega_p_mhz, "omega_p_mhz")?;
        positive("readout.omega_db_mhz", r.omega_db_mhz, "omega_db_mhz")?;
        non_negative("readout.omega_n_mhz", r.omega_n_mhz, "omega_n_mhz")?;
        non_negative(
            "readout.hyperfine_a_mhz",
            r.hyperfine_a_mhz,
            "hyperfine_a_mhz",
        )?;
        if let Some(j) = r.j_max_mhz {
            non_negative("readout.j_max_mhz", j, "j_max_mhz")?;
        }
        positive("readout.tau_slope_ns", r.tau_slope_ns, "tau_slope_ns")?;
        non_negative("readout.hold_ns", r.hold_ns, "hold_ns")?;
        check_rates("readout.rates", &r.rates)?;
        check(
            "readout.rates.d",
            r.rates.d == 0.0,
            "d = 0 during readout",
            r.rates.d,
        )?;
        positive("readout.tau_life_ns", r.tau_life_ns, "tau_life_ns")?;
        positive("readout.temperature_k", r.temperature_k, "temperature_k")?;
        positive("readout.drift_tol", r.drift_tol, "drift_tol")?;
        let f = &r.flash;
        positive(
            "readout.flash.photon_energy_ev",
            f.photon_energy_ev,
            "photon_energy_ev",
        )?;
        non_negative("readout.flash.power_nw", f.power_nw, "power_nw")?;
        non_negative("readout.flash.duration_ns", f.duration_ns, "duration_ns")?;
        check(
            "readout.flash.quantum_efficiency",
            (0.0..=1.0).contains(&f.quantum_efficiency),
            "0 <= quantum_efficiency <= 1",
            f.quantum_efficiency,
        )?;
        let c = &r.classifier;
        non_negative("readout.classifier.k_slow", c.k_slow, "k_slow")?;
        positive("readout.classifier.k_trap", c.k_trap, "k_trap")?;
        positive(
            "readout.classifier.tau_decay_ns",
            c.tau_decay_ns,
            "tau_decay_ns",
        )?;
        if let Some(t) = c.threshold {
            check(
                "readout.classifier.threshold",
                t > 0.0 && t < 1.0,
                "0 < threshold < 1",
                t,
            )?;
        }
        Ok(())
    }

    pub fn pair_params(&self) -> PairParams {
        PairParams {
            detuning_a: mhz(self.pair.detuning_a_mhz),
            detuning_b: mhz(self.pair.detuning_b_mhz),
            exchange_j: mhz(self.pair.exchange_j_mhz),
        }
    }

    pub fn drive_params(&self) -> Result<DriveParams> {
        DriveParams::new(mhz(self.drive.rabi_mhz), self.drive.phase_deg)
    }

    pub fn rates(&self) -> KsmRates {
        self.rates.to_rates()
    }

    pub fn broadening(&self) -> BroadeningSpec {
        let b = &self.broadening;
        BroadeningSpec {
            sigma_detuning_a: mhz(b.sigma_detuning_a_mhz),
            sigma_detuning_b: mhz(b.sigma_detuning_b_mhz),
            sigma_rabi_rel: b.sigma_rabi_rel,
            n_nodes: b.n_nodes,
            scheme: b.scheme,
            seed: self.run.seed,
        }
    }

    /// Echo grid in seconds.
    pub fn echo_grid(&self) -> Vec<f64> {
        let e = &self.echo;
        uniform_grid(e.grid_start_ns, e.grid_end_ns, e.grid_step_ns)
            .into_iter()
            .map(ns)
            .collect()
    }

    pub fn rabi_grid(&self) -> Vec<f64> {
        let r = &self.rabi;
        uniform_grid(r.grid_start_ns, r.grid_end_ns, r.grid_step_ns)
            .into_iter()
            .map(ns)
            .collect()
    }

    pub fn transient_model(&self) -> TransientModel {
        let t = &self.transient;
        TransientModel {
            coeff_singlet: t.coeff_singlet_pa * 1e-12,
            coeff_triplet: t.coeff_triplet_pa * 1e-12,
            tau_singlet_relax: ns(t.tau_singlet_relax_ns),
            tau_triplet_relax: ns(t.tau_triplet_relax_ns),
            baseline: t.baseline_pa * 1e-12,
        }
    }

    pub fn detector(&self) -> DetectorModel {
        DetectorModel {
            rise_time: ns(self.detector.rise_time_ns),
            sample_jitter: ns(self.detector.sample_jitter_ns),
        }
    }

    fn classifier_params_unresolved(&self) -> ClassifierParams {
        let c = &self.readout.classifier;
        ClassifierParams {
            k_slow: c.k_slow,
            k_trap: c.k_trap,
            tau_decay: ns(c.tau_decay_ns),
            threshold: c.threshold,
        }
    }

    pub fn readout_params(&self) -> ReadoutParams {
        let r = &self.readout;
        let spins = ReadoutSpinParams {
            omega_p: mhz(r.omega_p_mhz),
            omega_db: mhz(r.omega_db_mhz),
            omega_n: mhz(r.omega_n_mhz),
            hyperfine_a: mhz(r.hyperfine_a_mhz),
        };
        ReadoutParams {
            spins,
            ramp: ExchangeRamp {
                j_max: mhz(r.j_max_mhz.unwrap_or(r.omega_p_mhz + r.omega_db_mhz)),
                tau_slope: ns(r.tau_slope_ns),
                shape: r.ramp_shape,
                hold: ns(r.hold_ns),
            },
            rates: r.rates.to_rates(),
            tau_life: ns(r.tau_life_ns),
            temperature: r.temperature_k,
            flash: FlashParams {
                photon_energy_ev: r.flash.photon_energy_ev,
                power: r.flash.power_nw * 1e-9,
                duration: ns(r.flash.duration_ns),
                quantum_efficiency: r.flash.quantum_efficiency,
            },
            classifier: self.classifier_params_unresolved(),
            decay_mode: r.decay_mode,
            drift_tol: r.drift_tol,
        }
    }

    /// Exchange grid for level diagrams, rad/s.
    pub fn levels_grid(&self) -> Vec<f64> {
        let l = &self.levels;
        let end = l
            .j_end_mhz
            .unwrap_or(self.readout.omega_p_mhz + self.readout.omega_db_mhz);
        let n = l.n_points;
        (0..n)
            .map(|k| mhz(l.j_start_mhz + (end - l.j_start_mhz) * k as f64 / (n - 1) as f64))
            .collect()
    }
}

/// Parses, fills derived defaults and validates.
pub fn parse_config(text: &str) -> Result<Config> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path.is_empty() || path == "." {
            Error::Config(inner.to_string())
        } else {
            Error::Config(format!("{path}: {inner}"))
        }
    })?;
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

/// Pretty JSON with every field present.
pub fn dump_config(cfg: &Config) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}

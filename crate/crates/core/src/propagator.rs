//! Density-matrix propagation with spin-selective pair recombination.
//!
//! Equation of motion (column-stacked vectorization internally):
//!
//! ```text
//! d rho/dt = -i[H(t), rho] - (r_S/2){P_S, rho} - (r_T/2){P_T, rho} - d rho + (G/dim) I
//! ```
//!
//! Recombination and dissociation remove pairs, so the trace is the surviving
//! pair fraction. Every constant stretch of the Hamiltonian is propagated by
//! an exact exponential; time-dependent stretches are cut into steps whose
//! length keeps `||dH/dt|| h^2` below `StepControl::drift_tol`, each taken
//! with the fourth-order two-point Magnus exponential.
//!
//! Three exact propagation paths are used depending on which terms are active:
//! plain unitary (blocked by the Hamiltonian's symmetry), a non-Hermitian
//! effective Hamiltonian when pairs only recombine, and the full Liouvillian
//! augmented with the generation source and a recombination-yield counter.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hamiltonians::{coupled_blocks, sub_block, ExchangeRamp};
use crate::output::fmt_f64;
use crate::spin::{
    c, pair_projectors, spin_operator, trace_product, Axis, DensityMatrix, Operator,
    PairProjectors, SpinSystem, C64,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KsmRates {
    /// Singlet recombination rate, 1/s.
    #[serde(rename = "r_S")]
    pub r_s: f64,
    /// Triplet recombination rate, 1/s.
    #[serde(rename = "r_T")]
    pub r_t: f64,
    /// Pair dissociation rate, 1/s.
    pub d: f64,
    /// Pair generation rate, pairs/s.
    #[serde(rename = "G")]
    pub g: f64,
    /// Optional pure dephasing rate applied to each electron, 1/s.
    #[serde(default)]
    pub dephasing: f64,
}

impl KsmRates {
    pub const ZERO: KsmRates = KsmRates {
        r_s: 0.0,
        r_t: 0.0,
        d: 0.0,
        g: 0.0,
        dephasing: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r_S", self.r_s),
            ("r_T", self.r_t),
            ("d", self.d),
            ("G", self.g),
            ("dephasing", self.dephasing),
        ] {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
            if v < 0.0 {
                return Err(invalid(name, format!("{name} >= 0 violated (got {v})")));
            }
        }
        if self.r_s < self.r_t {
            return Err(invalid("r_S", "r_S >= r_T violated (spin selection rule)"));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    /// Same rates with generation switched off.
    pub fn without_generation(&self) -> Self {
        Self { g: 0.0, ..*self }
    }
}

/// How the trajectory is sampled.
#[derive(Clone, Debug, PartialEq)]
pub enum Sampling {
    Endpoints,
    Interval(f64),
    /// Absolute times inside `[t0, t1]`; endpoints are always included.
    Times(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepControl {
    /// Bound on `||dH/dt|| h^2` for time-dependent stretches.
    pub drift_tol: f64,
    pub min_step: f64,
    pub max_steps: usize,
    pub sampling: Sampling,
    /// Re-run with half the step and fail if the final states differ by more
    /// than [`SELF_CHECK_TOL`].
    pub self_check: bool,
}

pub const SELF_CHECK_TOL: f64 = 1e-8;

impl Default for StepControl {
    fn default() -> Self {
        Self {
            drift_tol: 5e-5,
            min_step: 1e-18,
            max_steps: 50_000_000,
            sampling: Sampling::Endpoints,
            self_check: false,
        }
    }
}

impl StepControl {
    pub fn with_sampling(sampling: Sampling) -> Self {
        Self {
            sampling,
            ..Self::default()
        }
    }

    fn halved(&self) -> Self {
        Self {
            drift_tol: self.drift_tol / 4.0,
            self_check: false,
            ..self.clone()
        }
    }
}

/// A Hamiltonian as a function of time.
pub trait Schedule: Sync {
    fn dim(&self) -> usize;
    fn at(&self, t: f64) -> Operator;
    /// Times at which `H(t)` jumps or changes analytic form.
    fn breakpoints(&self) -> Vec<f64>;
    /// Upper bound on `||dH/dt||` over `(a, b)`; zero when constant there.
    fn drift(&self, a: f64, b: f64) -> f64;
    /// Operators whose combined sparsity pattern covers `H(t)` for all `t`.
    fn structure(&self) -> Vec<Operator>;
}

impl Schedule for Operator {
    fn dim(&self) -> usize {
        Operator::dim(self)
    }
    fn at(&self, _t: f64) -> Operator {
        self.clone()
    }
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
    fn drift(&self, _a: f64, _b: f64) -> f64 {
        0.0
    }
    fn structure(&self) -> Vec<Operator> {
        vec![self.clone()]
    }
}

/// Consecutive constant Hamiltonians starting at `start`. The last one
/// persists after the program ends.
#[derive(Clone, Debug)]
pub struct PiecewiseConstant {
    pub start: f64,
    pub segments: Vec<(f64, Operator)>,
}

impl PiecewiseConstant {
    pub fn new(start: f64, segments: Vec<(f64, Operator)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(invalid("segments", "must not be empty"));
        }
        let dim = segments[0].1.dim();
        for (dur, h) in &segments {
            if !(*dur >= 0.0 && dur.is_finite()) {
                return Err(invalid("duration", "must be finite and >= 0"));
            }
            if h.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: h.dim(),
                });
            }
        }
        Ok(Self { start, segments })
    }

    pub fn end(&self) -> f64 {
        self.start + self.segments.iter().map(|s| s.0).sum::<f64>()
    }
}

impl Schedule for PiecewiseConstant {
    fn dim(&self) -> usize {
        self.segments[0].1.dim()
    }
    fn at(&self, t: f64) -> Operator {
        let mut edge = self.start;
        for (dur, h) in &self.segments {
            edge += dur;
            if t < edge {
                return h.clone();
            }
        }
        self.segments[self.segments.len() - 1].1.clone()
    }
    fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.segments.len());
        let mut edge = self.start;
        for (dur, _) in &self.segments {
            edge += dur;
            out.push(edge);
        }
        out
    }
    fn drift(&self, _a: f64, _b: f64) -> f64 {
        0.0
    }
    fn structure(&self) -> Vec<Operator> {
        self.segments.iter().map(|s| s.1.clone()).collect()
    }
}

/// `H(t) = base + j(t - start) * coupling` with `j` following an exchange ramp.
#[derive(Clone, Debug)]
pub struct ExchangeSweep {
    pub base: Operator,
    pub coupling: Operator,
    pub ramp: ExchangeRamp,
    pub start: f64,
    coupling_norm: f64,
}

impl ExchangeSweep {
    pub fn new(base: Operator, coupling: Operator, ramp: ExchangeRamp, start: f64) -> Self {
        let coupling_norm = coupling.norm_one();
        Self {
            base,
            coupling,
            ramp,
            start,
            coupling_norm,
        }
    }
}

impl Schedule for ExchangeSweep {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn at(&self, t: f64) -> Operator {
        let j = crate::hamiltonians::ramp_value(&self.ramp, t - self.start);
        &self.base + &self.coupling.scale(j)
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![self.start, self.start + self.ramp.tau_slope]
    }
    fn drift(&self, a: f64, b: f64) -> f64 {
        let (a, b) = (a - self.start, b - self.start);
        if b <= 0.0 || a >= self.ramp.tau_slope {
            return 0.0;
        }
        self.ramp.max_derivative() * self.coupling_norm
    }
    fn structure(&self) -> Vec<Operator> {
        vec![self.base.clone(), self.coupling.clone()]
    }
}

/// Recombination operator `K = r_S P_S + r_T P_T` and the remaining kinetic
/// terms for one spin system.
#[derive(Clone, Debug)]
pub struct Kinetics {
    pub rates: KsmRates,
    pub system: SpinSystem,
    pub projectors: PairProjectors,
    triplet: Operator,
    k: Operator,
    dephasing_ops: Vec<Operator>,
}

impl Kinetics {
    pub fn new(system: &SpinSystem, rates: &KsmRates) -> Result<Self> {
        rates.validate()?;
        let (a, b) = system.electron_pair();
        let projectors = pair_projectors(system, a, b)?;
        let triplet = projectors.triplet();
        let k = &projectors.singlet.scale(rates.r_s) + &triplet.scale(rates.r_t);
        let dephasing_ops = system
            .sites()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_electron())
            .map(|(i, _)| spin_operator(system, i, Axis::Z).map(|s| s.scale(2.0)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rates: *rates,
            system: system.clone(),
            projectors,
            triplet,
            k,
            dephasing_ops,
        })
    }

    pub fn for_dim(dim: usize, rates: &KsmRates) -> Result<Self> {
        Self::new(&system_for_dim(dim)?, rates)
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// `r_S Tr(P_S rho) + r_T Tr(P_T rho)`.
    pub fn recombination_rate(&self, rho: &Operator) -> f64 {
        trace_product(rho, &self.k)
    }

    fn is_closed(&self) -> bool {
        let r = &self.rates;
        r.r_s == 0.0 && r.r_t == 0.0 && r.d == 0.0 && r.g == 0.0 && r.dephasing == 0.0
    }

    fn is_sink_only(&self) -> bool {
        let r = &self.rates;
        r.d == 0.0 && r.g == 0.0 && r.dephasing == 0.0
    }

    /// Vectorized generator `L` (column stacking) without the source.
    pub fn liouvillian(&self, h: &Operator) -> DMatrix<C64> {
        let n = self.dim();
        let id = DMatrix::<C64>::identity(n, n);
        let hm = h.matrix();
        let km = self.k.matrix();
        let mi = C64::new(0.0, -1.0);
        let mut l = (id.kronecker(hm) - hm.transpose().kronecker(&id)) * mi;
        l -= (id.kronecker(km) + km.transpose().kronecker(&id)) * c(0.5);
        if self.rates.d != 0.0 {
            l -= DMatrix::<C64>::identity(n * n, n * n) * c(self.rates.d);
        }
        if self.rates.dephasing != 0.0 {
            let half = 0.5 * self.rates.dephasing;
            for s in &self.dephasing_ops {
                let sm = s.matrix();
                l += (sm.transpose().kronecker(sm) - DMatrix::identity(n * n, n * n)) * c(half);
            }
        }
        l
    }

    /// Vectorized `(G/dim) I`.
    fn source(&self) -> Vec<C64> {
        let n = self.dim();
        let mut v = vec![c(0.0); n * n];
        for i in 0..n {
            v[i + i * n] = c(self.rates.g / n as f64);
        }
        v
    }
}

pub fn system_for_dim(dim: usize) -> Result<SpinSystem> {
    match dim {
        4 => Ok(SpinSystem::pair()),
        8 => Ok(SpinSystem::readout()),
        _ => Err(Error::DimensionMismatch {
            expected: 4,
            found: dim,
        }),
    }
}

/// Sampled evolution.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// Named series: `trace`, `pop_S`, `pop_Tminus`, `pop_T0`, `pop_Tplus`,
    /// `recomb_rate` and the cumulative `recombined` yield.
    pub observables: Vec<(String, Vec<f64>)>,
}

pub const TRAJECTORY_SERIES: [&str; 7] = [
    "trace",
    "pop_S",
    "pop_Tminus",
    "pop_T0",
    "pop_Tplus",
    "recomb_rate",
    "recombined",
];

impl Trajectory {
    fn empty() -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            observables: TRAJECTORY_SERIES
                .iter()
                .map(|s| (s.to_string(), Vec::new()))
                .collect(),
        }
    }

    fn push(&mut self, t: f64, rho: DensityMatrix, kin: &Kinetics, recombined: f64) {
        let op = rho.op();
        let p = &kin.projectors;
        let vals = [
            rho.trace(),
            trace_product(op, &p.singlet),
            trace_product(op, &p.t_minus),
            trace_product(op, &p.t_zero),
            trace_product(op, &p.t_plus),
            kin.recombination_rate(op),
            recombined,
        ];
        for (series, v) in self.observables.iter_mut().zip(vals) {
            series.1.push(v);
        }
        self.times.push(t);
        self.states.push(rho);
    }

    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.observables
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn final_state(&self) -> &DensityMatrix {
        self.states
            .last()
            .expect("trajectories hold at least one sample")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `time,trace,pop_S,pop_Tminus,pop_T0,pop_Tplus,recomb_rate`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let cols = &TRAJECTORY_SERIES[..6];
        writeln!(w, "time,{}", cols.join(","))?;
        for k in 0..self.times.len() {
            let mut row = vec![fmt_f64(self.times[k])];
            for name in cols {
                row.push(fmt_f64(self.series(name).expect("known series")[k]));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// One propagation path. Closed and sink-only dynamics act as `rho -> V rho V^dagger`
/// with `V` block diagonal over the symmetry blocks of `H` and `K`.
enum Engine {
    Blocked { blocks: Vec<Vec<usize>>, sink: bool },
    Liouville,
}

/// Exact propagator over one constant stretch.
enum StepMap {
    /// One matrix per block.
    Blocked(Vec<DMatrix<C64>>),
    /// Augmented map on `[vec(rho), 1, recombined]`.
    Liouville(DMatrix<C64>),
}

/// Accumulated propagator over an interval between samples.
type Accum = StepMap;

/// `sqrt(3)/12`, the commutator weight of the two-point Magnus step.
const MAGNUS_C: f64 = 0.144_337_567_297_406_43;

/// Offset of the Gauss nodes from the step midpoint, in units of the step.
const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_9;

/// `G` with `exp(-i G dt)` equal to the two-point Magnus exponential of
/// `-i G(t)` sampled at the Gauss nodes.
fn magnus_generator(g1: &DMatrix<C64>, g2: &DMatrix<C64>, dt: f64) -> DMatrix<C64> {
    let comm = g1 * g2 - g2 * g1;
    (g1 + g2) * c(0.5) + comm * C64::new(0.0, MAGNUS_C * dt)
}

/// Generator on `[vec(rho), 1, recombined]`.
fn augmented(kin: &Kinetics, h: &Operator) -> DMatrix<C64> {
    let n = kin.dim();
    let m = n * n;
    let mut aug = DMatrix::<C64>::zeros(m + 2, m + 2);
    aug.view_mut((0, 0), (m, m)).copy_from(&kin.liouvillian(h));
    for (i, s) in kin.source().into_iter().enumerate() {
        aug[(i, m)] = s;
    }
    let km = kin.k.matrix();
    for i in 0..n {
        for j in 0..n {
            aug[(m + 1, i + j * n)] = km[(j, i)];
        }
    }
    aug
}

impl Engine {
    fn choose(kin: &Kinetics, schedule: &dyn Schedule) -> Self {
        if kin.is_closed() || kin.is_sink_only() {
            let mut st = schedule.structure();
            st.push(kin.k.clone());
            let refs: Vec<&Operator> = st.iter().collect();
            Engine::Blocked {
                blocks: coupled_blocks(&refs),
                sink: !kin.is_closed(),
            }
        } else {
            Engine::Liouville
        }
    }

    /// Exact exponential for a constant `H`, or the two-point Magnus
    /// exponential when `h2` holds the second Gauss sample.
    fn step_map(&self, kin: &Kinetics, h: &Operator, h2: Option<&Operator>, dt: f64) -> StepMap {
        match self {
            Engine::Blocked {
                blocks,
                sink: false,
            } => {
                let g = match h2 {
                    None => h.clone(),
                    Some(h2) => {
                        Operator::from_matrix(magnus_generator(h.matrix(), h2.matrix(), dt))
                            .expect("square")
                            .hermitian_part()
                    }
                };
                StepMap::Blocked(
                    blocks
                        .iter()
                        .map(|b| {
                            let eig = SymmetricEigen::new(sub_block(&g, b));
                            let v = &eig.eigenvectors;
                            let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| {
                                let x = -e * dt;
                                C64::new(x.cos(), x.sin())
                            }));
                            v * phases * v.adjoint()
                        })
                        .collect(),
                )
            }
            Engine::Blocked { blocks, sink: true } => {
                let half_k = kin.k.matrix() * C64::new(0.0, 0.5);
                let g1 = h.matrix() - &half_k;
                let g = match h2 {
                    None => g1,
                    Some(h2) => magnus_generator(&g1, &(h2.matrix() - &half_k), dt),
                };
                let heff = Operator::from_matrix(g).expect("square");
                StepMap::Blocked(
                    blocks
                        .iter()
                        .map(|b| {
                            let g = sub_block(&heff, b) * C64::new(0.0, -dt);
                            if b.len() == 1 {
                                DMatrix::from_element(1, 1, g[(0, 0)].exp())
                            } else {
                                g.exp()
                            }
                        })
                        .collect(),
                )
            }
            Engine::Liouville => {
                let a1 = augmented(kin, h);
                let omega = match h2 {
                    None => a1 * c(dt),
                    Some(h2) => {
                        let a2 = augmented(kin, h2);
                        let comm = &a1 * &a2 - &a2 * &a1;
                        (a1 + a2) * c(0.5 * dt) - comm * c(MAGNUS_C * dt * dt)
                    }
                };
                StepMap::Liouville(omega.exp())
            }
        }
    }

    fn identity(&self, n: usize) -> Accum {
        match self {
            Engine::Blocked { blocks, .. } => StepMap::Blocked(
                blocks
                    .iter()
                    .map(|b| DMatrix::identity(b.len(), b.len()))
                    .collect(),
            ),
            Engine::Liouville => StepMap::Liouville(DMatrix::identity(n * n + 2, n * n + 2)),
        }
    }
}

impl StepMap {
    fn compose(&mut self, step: &StepMap) {
        match (self, step) {
            (StepMap::Blocked(acc), StepMap::Blocked(s)) => {
                for (a, u) in acc.iter_mut().zip(s) {
                    *a = u * &*a;
                }
            }
            (StepMap::Liouville(acc), StepMap::Liouville(m)) => *acc = m * &*acc,
            _ => unreachable!("engine and map kinds always agree"),
        }
    }

    /// Applies the accumulated map; returns the new state and the recombined
    /// yield gained over the interval.
    fn apply(&self, engine: &Engine, rho: &Operator) -> (Operator, f64) {
        let n = rho.dim();
        match (self, engine) {
            (StepMap::Blocked(vs), Engine::Blocked { blocks, sink }) => {
                let mut v = DMatrix::<C64>::zeros(n, n);
                for (b, vb) in blocks.iter().zip(vs) {
                    for (a, &i) in b.iter().enumerate() {
                        for (bb, &j) in b.iter().enumerate() {
                            v[(i, j)] = vb[(a, bb)];
                        }
                    }
                }
                let out = Operator::from_matrix(&v * rho.matrix() * v.adjoint()).expect("square");
                let loss = if *sink {
                    rho.trace().re - out.trace().re
                } else {
                    0.0
                };
                (out, loss)
            }
            (StepMap::Liouville(m), _) => {
                let dim = n * n;
                let mut x = nalgebra::DVector::<C64>::zeros(dim + 2);
                for j in 0..n {
                    for i in 0..n {
                        x[i + j * n] = rho.get(i, j);
                    }
                }
                x[dim] = c(1.0);
                let y = m * x;
                let out = DMatrix::from_fn(n, n, |i, j| y[i + j * n]);
                (Operator::from_matrix(out).expect("square"), y[dim + 1].re)
            }
            _ => unreachable!("engine and accumulator kinds always agree"),
        }
    }
}

fn sample_times(t0: f64, t1: f64, sampling: &Sampling) -> Result<Vec<f64>> {
    let mut ts = vec![t0];
    match sampling {
        Sampling::Endpoints => {}
        Sampling::Interval(dt) => {
            if !(*dt > 0.0 && dt.is_finite()) {
                return Err(invalid("sampling interval", "must be > 0"));
            }
            let n = ((t1 - t0) / dt).floor() as usize;
            ts.extend((1..=n).map(|k| t0 + k as f64 * dt).filter(|&t| t < t1));
        }
        Sampling::Times(v) => {
            for &t in v {
                if !(t >= t0 && t <= t1) {
                    return Err(invalid(
                        "sampling times",
                        format!("{t:e} outside [{t0:e}, {t1:e}]"),
                    ));
                }
                ts.push(t);
            }
        }
    }
    ts.push(t1);
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * b.abs().max(1e-30));
    Ok(ts)
}

/// Propagates `rho0` from `t0` to `t1`.
pub fn evolve(
    rho0: &DensityMatrix,
    schedule: &dyn Schedule,
    rates: &KsmRates,
    t0: f64,
    t1: f64,
    ctrl: &StepControl,
) -> Result<Trajectory> {
    let traj = evolve_once(rho0, schedule, rates, t0, t1, ctrl)?;
    if ctrl.self_check {
        let fine = evolve_once(rho0, schedule, rates, t0, t1, &ctrl.halved())?;
        let diff = traj
            .final_state()
            .op()
            .max_abs_diff(fine.final_state().op());
        if diff > SELF_CHECK_TOL {
            return Err(Error::SelfCheck(diff));
        }
    }
    Ok(traj)
}

/// Largest entrywise change of the final state when every drift step is halved.
pub fn step_halving_difference(
    rho0: &DensityMatrix,
    schedule: &dyn Schedule,
    rates: &KsmRates,
    t0: f64,
    t1: f64,
    ctrl: &StepControl,
) -> Result<f64> {
    let coarse = evolve_once(rho0, schedule, rates, t0, t1, ctrl)?;
    let fine = evolve_once(rho0, schedule, rates, t0, t1, &ctrl.halved())?;
    Ok(coarse
        .final_state()
        .op()
        .max_abs_diff(fine.final_state().op()))
}

fn evolve_once(
    rho0: &DensityMatrix,
    schedule: &dyn Schedule,
    rates: &KsmRates,
    t0: f64,
    t1: f64,
    ctrl: &StepControl,
) -> Result<Trajectory> {
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(invalid("t1", "t1 > t0 required"));
    }
    if rho0.dim() != schedule.dim() {
        return Err(Error::DimensionMismatch {
            expected: schedule.dim(),
            found: rho0.dim(),
        });
    }
    let kin = Kinetics::for_dim(rho0.dim(), rates)?;
    let engine = Engine::choose(&kin, schedule);
    let samples = sample_times(t0, t1, &ctrl.sampling)?;
    let mut knots: Vec<f64> = samples.clone();
    knots.extend(
        schedule
            .breakpoints()
            .into_iter()
            .filter(|&b| b > t0 && b < t1),
    );
    knots.sort_by(f64::total_cmp);
    knots.dedup();

    let mut traj = Trajectory::empty();
    let mut rho = rho0.op().clone();
    let mut recombined = 0.0;
    traj.push(t0, DensityMatrix::from_evolved(rho.clone()), &kin, 0.0);
    let mut next_sample = 1;
    let mut steps_taken = 0usize;
    let mut accum = engine.identity(kin.dim());
    let mut cache: Option<(f64, Operator, Option<Operator>, StepMap)> = None;

    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = b - a;
        if len <= 0.0 {
            continue;
        }
        let drift = schedule.drift(a, b);
        let n_steps = if drift == 0.0 {
            1
        } else {
            let h = (ctrl.drift_tol / drift).sqrt();
            let n = (len / h).ceil().max(1.0) as usize;
            if len / (n as f64) < ctrl.min_step {
                return Err(Error::StepControl {
                    time: a,
                    step: len / n as f64,
                    min_step: ctrl.min_step,
                });
            }
            n
        };
        steps_taken += n_steps;
        if steps_taken > ctrl.max_steps {
            return Err(Error::StepControl {
                time: a,
                step: len / n_steps as f64,
                min_step: ctrl.min_step,
            });
        }
        let dt = len / n_steps as f64;
        for k in 0..n_steps {
            let mid = a + (k as f64 + 0.5) * dt;
            let (h1, h2) = if drift == 0.0 {
                (schedule.at(mid), None)
            } else {
                let h1 = schedule.at(mid - GAUSS_OFFSET * dt);
                let h2 = schedule.at(mid + GAUSS_OFFSET * dt);
                if h1 == h2 {
                    (h1, None)
                } else {
                    (h1, Some(h2))
                }
            };
            let reuse =
                matches!(&cache, Some((cdt, c1, c2, _)) if *cdt == dt && *c1 == h1 && *c2 == h2);
            if !reuse {
                let map = engine.step_map(&kin, &h1, h2.as_ref(), dt);
                cache = Some((dt, h1, h2, map));
            }
            accum.compose(&cache.as_ref().expect("cache filled").3);
        }
        if next_sample < samples.len() && b >= samples[next_sample] {
            let (next, gained) = accum.apply(&engine, &rho);
            rho = next.hermitian_part();
            recombined += gained;
            traj.push(
                b,
                DensityMatrix::from_evolved(rho.clone()),
                &kin,
                recombined,
            );
            next_sample += 1;
            accum = engine.identity(kin.dim());
        }
    }
    Ok(traj)
}

/// Stationary state of the driven, generating, recombining pair ensemble.
pub fn steady_state(h: &Operator, rates: &KsmRates) -> Result<DensityMatrix> {
    let op = steady_state_operator(h, rates)?;
    DensityMatrix::new(op)
}

/// Solves `L vec(rho) = -s` and checks the residual. The returned operator may
/// have a trace above one when `G` is large compared to the loss rates.
pub fn steady_state_operator(h: &Operator, rates: &KsmRates) -> Result<Operator> {
    rates.validate()?;
    if !(rates.r_s + rates.d > 0.0 && rates.r_t + rates.d > 0.0) {
        return Err(invalid(
            "rates",
            "r_S + d > 0 and r_T + d > 0 required for a steady state",
        ));
    }
    if !(rates.g > 0.0) {
        return Err(invalid("G", "G > 0 required for a steady state"));
    }
    let kin = Kinetics::for_dim(h.dim(), rates)?;
    let n = kin.dim();
    let l = kin.liouvillian(h);
    let s = nalgebra::DVector::from_vec(kin.source());
    let rhs = -&s;
    let x = l
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularGenerator("LU solve failed".into()))?;
    let residual = (&l * &x + &s).norm();
    if !(residual <= 1e-10 * rates.g) {
        return Err(Error::SingularGenerator(format!(
            "residual {residual:e} exceeds 1e-10 G"
        )));
    }
    let m = DMatrix::from_fn(n, n, |i, j| x[i + j * n]);
    Ok(Operator::from_matrix(m)?.hermitian_part())
}

/// `r_S Tr(P_S rho) + r_T Tr(P_T rho)`.
pub fn recombination_rate(rho: &DensityMatrix, rates: &KsmRates) -> Result<f64> {
    let kin = Kinetics::for_dim(rho.dim(), rates)?;
    Ok(kin.recombination_rate(rho.op()))
}

/// Residual norm of the stationarity condition, for checks.
pub fn steady_state_residual(h: &Operator, rates: &KsmRates, rho: &Operator) -> Result<f64> {
    let kin = Kinetics::for_dim(h.dim(), rates)?;
    let n = kin.dim();
    let l = kin.liouvillian(h);
    let x = nalgebra::DVector::from_fn(n * n, |k, _| rho.get(k % n, k / n));
    let s = nalgebra::DVector::from_vec(kin.source());
    Ok((l * x + s).norm())
}

impl Kinetics {
    pub fn triplet_projector(&self) -> &Operator {
        &self.triplet
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::{rotating_pair_hamiltonian, DriveParams, PairParams};
    use crate::spin::{pair_kets, Spin};

    fn drive_h(w1: f64) -> Operator {
        rotating_pair_hamiltonian(
            &PairParams {
                detuning_a: 0.0,
                detuning_b: 0.0,
                exchange_j: 0.0,
            },
            &DriveParams::new(w1, 0.0).unwrap(),
        )
    }

    #[test]
    fn free_evolution_is_identity() {
        let rho0 = DensityMatrix::pure(&pair_kets()[0]).unwrap();
        let tr = evolve(
            &rho0,
            &Operator::zeros(4),
            &KsmRates::ZERO,
            0.0,
            1e-6,
            &StepControl::with_sampling(Sampling::Interval(1e-7)),
        )
        .unwrap();
        assert_eq!(tr.len(), 11);
        for s in &tr.states {
            assert!(s.op().max_abs_diff(rho0.op()) < 1e-15);
        }
    }

    #[test]
    fn double_rabi_flip_matches_closed_form() {
        let sys = SpinSystem::pair();
        let w1 = 2.0 * std::f64::consts::PI * 10e6;
        let dd = sys.product_ket(&[Spin::Down, Spin::Down]).unwrap();
        let uu = sys.product_ket(&[Spin::Up, Spin::Up]).unwrap();
        let rho0 = DensityMatrix::pure(&dd).unwrap();
        let times: Vec<f64> = (1..40).map(|k| k as f64 * 3.7e-9).collect();
        let tr = evolve(
            &rho0,
            &drive_h(w1),
            &KsmRates::ZERO,
            0.0,
            150e-9,
            &StepControl::with_sampling(Sampling::Times(times)),
        )
        .unwrap();
        for (t, s) in tr.times.iter().zip(&tr.states) {
            let expected = (w1 * t / 2.0).sin().powi(4);
            assert!((s.population(&uu) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn singlet_decay_is_scalar() {
        let rho0 = DensityMatrix::pure(&pair_kets()[0]).unwrap();
        let rates = KsmRates {
            r_s: 3e6,
            r_t: 0.0,
            d: 2e5,
            g: 0.0,
            dephasing: 0.0,
        };
        let tr = evolve(
            &rho0,
            &Operator::zeros(4),
            &rates,
            0.0,
            1e-6,
            &StepControl::with_sampling(Sampling::Interval(1e-7)),
        )
        .unwrap();
        for (t, v) in tr.times.iter().zip(tr.series("trace").unwrap()) {
            assert!((v - (-(3e6 + 2e5) * t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn sink_and_liouville_paths_agree() {
        let p = PairParams {
            detuning_a: 2e8,
            detuning_b: -5e7,
            exchange_j: 1e7,
        };
        let h = rotating_pair_hamiltonian(&p, &DriveParams::new(6e7, 30.0).unwrap());
        let rho0 = DensityMatrix::maximally_mixed(4);
        let rates = KsmRates {
            r_s: 1e7,
            r_t: 1e5,
            d: 0.0,
            g: 0.0,
            dephasing: 0.0,
        };
        let ctrl = StepControl::default();
        let sink = evolve(&rho0, &h, &rates, 0.0, 3e-7, &ctrl).unwrap();
        // A vanishing dephasing term forces the Liouvillian path.
        let liou_rates = KsmRates {
            dephasing: 1e-300,
            ..rates
        };
        let liou = evolve(&rho0, &h, &liou_rates, 0.0, 3e-7, &ctrl).unwrap();
        assert!(
            sink.final_state()
                .op()
                .max_abs_diff(liou.final_state().op())
                < 1e-12
        );
        let ys = sink.series("recombined").unwrap()[1];
        let yl = liou.series("recombined").unwrap()[1];
        assert!((ys - yl).abs() < 1e-12, "{ys} {yl}");
    }

    #[test]
    fn steady_state_closed_form_without_hamiltonian() {
        let rates = KsmRates {
            r_s: 1e7,
            r_t: 1e3,
            d: 1e4,
            g: 1e4,
            dephasing: 0.0,
        };
        let rho = steady_state(&Operator::zeros(4), &rates).unwrap();
        let [s, tp, t0, tm] = pair_kets();
        let ps = rates.g / (4.0 * (rates.r_s + rates.d));
        let pt = rates.g / (4.0 * (rates.r_t + rates.d));
        assert!((rho.population(&s) - ps).abs() < 1e-12);
        for t in [tp, t0, tm] {
            assert!((rho.population(&t) - pt).abs() < 1e-12);
        }
    }

    #[test]
    fn steady_state_preconditions() {
        let bad = KsmRates {
            r_s: 0.0,
            r_t: 0.0,
            d: 0.0,
            g: 1.0,
            dephasing: 0.0,
        };
        assert!(steady_state(&Operator::zeros(4), &bad).is_err());
        let no_gen = KsmRates {
            r_s: 1.0,
            r_t: 0.0,
            d: 1.0,
            g: 0.0,
            dephasing: 0.0,
        };
        assert!(steady_state(&Operator::zeros(4), &no_gen).is_err());
    }

    #[test]
    fn recombination_rate_examples() {
        let rates = KsmRates {
            r_s: 5.0,
            r_t: 1.0,
            d: 0.0,
            g: 0.0,
            dephasing: 0.0,
        };
        let [s, _, _, tm] = pair_kets();
        let rt = recombination_rate(&DensityMatrix::pure(&tm).unwrap(), &rates).unwrap();
        assert!((rt - 1.0).abs() < 1e-15);
        let rs = recombination_rate(&DensityMatrix::pure(&s).unwrap(), &rates).unwrap();
        assert!((rs - 5.0).abs() < 1e-13);
        let rm = recombination_rate(&DensityMatrix::maximally_mixed(4), &rates).unwrap();
        assert!((rm - 2.0).abs() < 1e-13);
    }

    #[test]
    fn rates_validation_names_field() {
        let r = KsmRates {
            r_s: -1.0,
            ..KsmRates::ZERO
        };
        let err = r.validate().unwrap_err().to_string();
        assert!(err.contains("r_S"), "{err}");
        let r = KsmRates {
            r_s: 1.0,
            r_t: 2.0,
            ..KsmRates::ZERO
        };
        assert!(r.validate().is_err());
    }

    #[test]
    fn step_floor_is_reported_with_time() {
        let ramp = ExchangeRamp {
            j_max: 1e12,
            tau_slope: 1e-6,
            shape: crate::hamiltonians::RampShape::Linear,
            hold: 0.0,
        };
        let s = ExchangeSweep::new(Operator::zeros(4), drive_h(1.0), ramp, 0.0);
        let ctrl = StepControl {
            min_step: 1e-9,
            ..StepControl::default()
        };
        let err = evolve(
            &DensityMatrix::maximally_mixed(4),
            &s,
            &KsmRates::ZERO,
            0.0,
            1e-6,
            &ctrl,
        )
        .unwrap_err();
        assert!(matches!(err, Error::StepControl { time, .. } if time == 0.0));
    }

    #[test]
    fn rejects_reversed_interval() {
        let rho = DensityMatrix::maximally_mixed(4);
        assert!(evolve(
            &rho,
            &Operator::zeros(4),
            &KsmRates::ZERO,
            1.0,
            0.5,
            &StepControl::default()
        )
        .is_err());
    }
}

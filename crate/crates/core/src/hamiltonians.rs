//! Spin Hamiltonians.
//!
//! The pulse experiments use a rotating-wave pair Hamiltonian in which both
//! electrons see the same microwave field and selectivity comes only from
//! their detunings. The readout device uses a lab-frame three-spin Hamiltonian
//! (donor electron, deep-level electron, donor nucleus) with isotropic
//! hyperfine coupling and a gate-controlled isotropic exchange `j`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::output::fmt_f64;
use crate::spin::{
    pair_projectors, spin_dot, spin_operator, trace_product, Axis, Operator, SpinSystem, C64,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairParams {
    /// CE electron offset from the microwave frequency, rad/s.
    pub detuning_a: f64,
    /// Deep-level (db) electron offset, rad/s.
    pub detuning_b: f64,
    pub exchange_j: f64,
}

impl PairParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("detuning_a", self.detuning_a),
            ("detuning_b", self.detuning_b),
            ("exchange_j", self.exchange_j),
        ] {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if self.exchange_j < 0.0 {
            return Err(invalid("exchange_j", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriveParams {
    /// `omega_1 = gamma B_1`, rad/s.
    pub rabi_omega1: f64,
    /// Microwave phase in degrees, normalized to [0, 360).
    pub phase_deg: f64,
}

impl DriveParams {
    pub fn new(rabi_omega1: f64, phase_deg: f64) -> Result<Self> {
        if !(rabi_omega1.is_finite() && rabi_omega1 >= 0.0) {
            return Err(invalid("rabi_omega1", "must be finite and >= 0"));
        }
        if !phase_deg.is_finite() {
            return Err(invalid("phase_deg", "must be finite"));
        }
        Ok(Self {
            rabi_omega1,
            phase_deg: normalize_phase(phase_deg),
        })
    }

    /// Same amplitude, phase advanced by 180 degrees.
    pub fn reversed(&self) -> Self {
        Self {
            rabi_omega1: self.rabi_omega1,
            phase_deg: normalize_phase(self.phase_deg + 180.0),
        }
    }
}

pub fn normalize_phase(deg: f64) -> f64 {
    let p = deg.rem_euclid(360.0);
    if p >= 360.0 {
        0.0
    } else {
        p
    }
}

/// Exact `(cos, sin)` on multiples of 90 degrees so that reversed drives are
/// exact negatives.
fn cos_sin_deg(deg: f64) -> (f64, f64) {
    let p = normalize_phase(deg);
    match p {
        x if x == 0.0 => (1.0, 0.0),
        x if x == 90.0 => (0.0, 1.0),
        x if x == 180.0 => (-1.0, 0.0),
        x if x == 270.0 => (0.0, -1.0),
        _ => {
            let r = p.to_radians();
            (r.cos(), r.sin())
        }
    }
}

/// `dw_a S_z^a + dw_b S_z^b + w1 [cos(phi) Sx_tot + sin(phi) Sy_tot] + J S_a . S_b`.
pub fn rotating_pair_hamiltonian(p: &PairParams, d: &DriveParams) -> Operator {
    let sys = SpinSystem::pair();
    let op = |site, axis| spin_operator(&sys, site, axis).expect("pair sites");
    let zeeman = &op(0, Axis::Z).scale(p.detuning_a) + &op(1, Axis::Z).scale(p.detuning_b);
    let (cs, sn) = cos_sin_deg(d.phase_deg);
    let sx = &op(0, Axis::X) + &op(1, Axis::X);
    let sy = &op(0, Axis::Y) + &op(1, Axis::Y);
    let drive = &sx.scale(d.rabi_omega1 * cs) + &sy.scale(d.rabi_omega1 * sn);
    let exchange = spin_dot(&sys, 0, 1)
        .expect("pair sites")
        .scale(p.exchange_j);
    &(&zeeman + &drive) + &exchange
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutSpinParams {
    /// Donor-electron Zeeman frequency, rad/s.
    pub omega_p: f64,
    /// Deep-level electron Zeeman frequency, rad/s.
    pub omega_db: f64,
    /// Nuclear Zeeman frequency magnitude, rad/s (enters as `-omega_n I_z`).
    pub omega_n: f64,
    /// Isotropic hyperfine constant `A` of `A S_P . I`, rad/s.
    pub hyperfine_a: f64,
}

impl ReadoutSpinParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_p > 0.0 && self.omega_p.is_finite()) {
            return Err(invalid("omega_p", "must be > 0"));
        }
        if !(self.omega_db > 0.0 && self.omega_db.is_finite()) {
            return Err(invalid("omega_db", "must be > 0"));
        }
        if !(self.omega_n >= 0.0 && self.omega_n.is_finite()) {
            return Err(invalid("omega_n", "must be >= 0"));
        }
        if !(self.hyperfine_a >= 0.0 && self.hyperfine_a.is_finite()) {
            return Err(invalid("hyperfine_a", "must be >= 0"));
        }
        Ok(())
    }
}

/// The `j`-independent part of the readout Hamiltonian.
pub fn readout_static_part(s: &ReadoutSpinParams) -> Operator {
    let sys = SpinSystem::readout();
    let op = |site, axis| spin_operator(&sys, site, axis).expect("readout sites");
    let zeeman = &(&op(0, Axis::Z).scale(s.omega_p) + &op(1, Axis::Z).scale(s.omega_db))
        - &op(2, Axis::Z).scale(s.omega_n);
    let hyperfine = spin_dot(&sys, 0, 2)
        .expect("readout sites")
        .scale(s.hyperfine_a);
    &zeeman + &hyperfine
}

/// `S_P . S_db`, the operator multiplied by the gate-controlled exchange.
pub fn readout_exchange_operator() -> Operator {
    spin_dot(&SpinSystem::readout(), 0, 1).expect("readout sites")
}

/// `w_P S_z^P + w_db S_z^db - w_n I_z + A S_P . I + j S_P . S_db` on the
/// 8-dimensional donor-electron / deep-electron / nucleus space.
pub fn readout_hamiltonian(s: &ReadoutSpinParams, j: f64) -> Operator {
    &readout_static_part(s) + &readout_exchange_operator().scale(j)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RampShape {
    Linear,
    RaisedCosine,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExchangeRamp {
    pub j_max: f64,
    pub tau_slope: f64,
    pub shape: RampShape,
    pub hold: f64,
}

impl ExchangeRamp {
    pub fn validate(&self) -> Result<()> {
        if !(self.j_max >= 0.0 && self.j_max.is_finite()) {
            return Err(invalid("j_max", "must be >= 0"));
        }
        if !(self.tau_slope > 0.0 && self.tau_slope.is_finite()) {
            return Err(invalid("tau_slope", "must be > 0"));
        }
        if !(self.hold >= 0.0 && self.hold.is_finite()) {
            return Err(invalid("hold", "must be >= 0"));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.tau_slope + self.hold
    }

    /// `dj/dt`.
    pub fn derivative(&self, t: f64) -> f64 {
        if !(0.0..self.tau_slope).contains(&t) {
            return 0.0;
        }
        match self.shape {
            RampShape::Linear => self.j_max / self.tau_slope,
            RampShape::RaisedCosine => {
                0.5 * self.j_max * PI / self.tau_slope * (PI * t / self.tau_slope).sin()
            }
        }
    }

    /// Largest `|dj/dt|` over the ramp.
    pub fn max_derivative(&self) -> f64 {
        match self.shape {
            RampShape::Linear => self.j_max / self.tau_slope,
            RampShape::RaisedCosine => 0.5 * self.j_max * PI / self.tau_slope,
        }
    }

    /// Earliest time at which the ramp reaches `j` (clamped to the ramp).
    pub fn time_at(&self, j: f64) -> f64 {
        if self.j_max == 0.0 || j <= 0.0 {
            return 0.0;
        }
        let f = (j / self.j_max).min(1.0);
        match self.shape {
            RampShape::Linear => f * self.tau_slope,
            RampShape::RaisedCosine => self.tau_slope * (1.0 - 2.0 * f).acos() / PI,
        }
    }
}

/// Exchange seen at time `t` after the gate starts opening: rises from 0 to
/// `j_max` over `tau_slope`, then stays at `j_max`.
pub fn ramp_value(r: &ExchangeRamp, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= r.tau_slope {
        return r.j_max;
    }
    let x = t / r.tau_slope;
    match r.shape {
        RampShape::Linear => r.j_max * x,
        RampShape::RaisedCosine => 0.5 * r.j_max * (1.0 - (PI * x).cos()),
    }
}

/// Groups basis indices into blocks that no operator in `ops` connects.
///
/// Every readout Hamiltonian conserves total `m`, so this recovers the
/// {1, 3, 3, 1} block structure of the product basis.
pub fn coupled_blocks(ops: &[&Operator]) -> Vec<Vec<usize>> {
    let n = ops.first().map(|o| o.dim()).unwrap_or(0);
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for op in ops {
        for i in 0..n {
            for j in (i + 1)..n {
                if op.get(i, j).norm() > 0.0 || op.get(j, i).norm() > 0.0 {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut root_of_block: Vec<usize> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match root_of_block.iter().position(|&x| x == r) {
            Some(b) => blocks[b].push(i),
            None => {
                root_of_block.push(r);
                blocks.push(vec![i]);
            }
        }
    }
    blocks
}

pub(crate) fn sub_block(op: &Operator, idx: &[usize]) -> DMatrix<C64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| op.get(idx[a], idx[b]))
}

/// Ascending eigenpairs of a Hermitian block; vectors are embedded in the full
/// space.
pub(crate) fn block_eigen(op: &Operator, idx: &[usize]) -> Vec<(f64, DVector<C64>)> {
    let eig = SymmetricEigen::new(sub_block(op, idx));
    let mut out: Vec<(f64, DVector<C64>)> = (0..idx.len())
        .map(|k| {
            let mut v = DVector::zeros(op.dim());
            for (a, &i) in idx.iter().enumerate() {
                v[i] = eig.eigenvectors[(a, k)];
            }
            (eig.eigenvalues[k], v)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Eigenvalues and block-pure eigenvectors of a symmetry-blocked Hermitian
/// operator, sorted by energy.
pub(crate) fn blocked_eigen(op: &Operator, blocks: &[Vec<usize>]) -> Vec<(f64, DVector<C64>)> {
    let mut all: Vec<(f64, DVector<C64>)> =
        blocks.iter().flat_map(|b| block_eigen(op, b)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    all
}

const AMBIGUITY_TOL: f64 = 1e-6;
const REFINE_BELOW: f64 = 0.9;
const MAX_REFINE_DEPTH: u32 = 48;

/// Level diagram over an exchange grid.
///
/// `energies[k][b]` is branch `b` at grid point `k`. Branches are labelled by
/// ascending energy at the first grid point and then followed by maximum
/// eigenvector overlap, so each keeps its identity through crossings.
#[derive(Clone, Debug)]
pub struct LevelDiagram {
    pub j: Vec<f64>,
    pub energies: Vec<Vec<f64>>,
    pub singlet_character: Vec<Vec<f64>>,
    pub states: Vec<Vec<DVector<C64>>>,
    /// Smallest overlap between consecutive (possibly refined) steps, per branch.
    pub min_continuity: Vec<f64>,
    /// Branches whose matching was ambiguous at least once.
    pub flagged: Vec<bool>,
}

impl LevelDiagram {
    pub fn n_branches(&self) -> usize {
        self.flagged.len()
    }

    /// Branch whose first-point eigenvector has the largest overlap with `ket`.
    pub fn branch_starting_at(&self, ket: &DVector<C64>) -> usize {
        let first = &self.states[0];
        (0..first.len())
            .max_by(|&a, &b| overlap(&first[a], ket).total_cmp(&overlap(&first[b], ket)))
            .unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.n_branches();
        let mut header = vec!["j".to_string()];
        header.extend((1..=n).map(|i| format!("E_{i}")));
        header.extend((1..=n).map(|i| format!("singlet_character_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.j.len() {
            let mut row = vec![fmt_f64(self.j[k])];
            row.extend(self.energies[k].iter().map(|&e| fmt_f64(e)));
            row.extend(self.singlet_character[k].iter().map(|&e| fmt_f64(e)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn overlap(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    a.dotc(b).norm_sqr()
}

struct Matching {
    order: Vec<usize>,
    min_overlap: f64,
    per_branch: Vec<f64>,
    ambiguous: Vec<bool>,
}

fn match_branches(prev: &[DVector<C64>], next: &[(f64, DVector<C64>)]) -> Matching {
    let n = prev.len();
    let ov: Vec<Vec<f64>> = prev
        .iter()
        .map(|p| next.iter().map(|(_, v)| overlap(p, v)).collect())
        .collect();
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|b| (0..n).map(move |c| (b, c))).collect();
    pairs.sort_by(|x, y| ov[y.0][y.1].total_cmp(&ov[x.0][x.1]).then(x.cmp(y)));
    let mut order = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    for (b, cnd) in pairs {
        if order[b] == usize::MAX && !taken[cnd] {
            order[b] = cnd;
            taken[cnd] = true;
        }
    }
    let mut ambiguous = vec![false; n];
    let mut per_branch = vec![0.0; n];
    for b in 0..n {
        let best = ov[b][order[b]];
        per_branch[b] = best;
        let runner_up = (0..n)
            .filter(|&c| c != order[b])
            .map(|c| ov[b][c])
            .fold(0.0, f64::max);
        ambiguous[b] = best - runner_up < AMBIGUITY_TOL;
    }
    Matching {
        min_overlap: per_branch.iter().copied().fold(1.0, f64::min),
        order,
        per_branch,
        ambiguous,
    }
}

/// Carries branch vectors from `j0` to `j1`, bisecting the interval until
/// consecutive eigenvectors overlap well.
#[allow(clippy::too_many_arguments)]
fn advance(
    s: &ReadoutSpinParams,
    blocks: &[Vec<usize>],
    prev: &[DVector<C64>],
    j0: f64,
    j1: f64,
    depth: u32,
    continuity: &mut [f64],
    flagged: &mut [bool],
) -> Vec<(f64, DVector<C64>)> {
    let eig = blocked_eigen(&readout_hamiltonian(s, j1), blocks);
    let m = match_branches(prev, &eig);
    if m.min_overlap < REFINE_BELOW && depth < MAX_REFINE_DEPTH {
        let mid = 0.5 * (j0 + j1);
        let at_mid = advance(s, blocks, prev, j0, mid, depth + 1, continuity, flagged);
        let mid_vecs: Vec<DVector<C64>> = at_mid.into_iter().map(|(_, v)| v).collect();
        return advance(
            s,
            blocks,
            &mid_vecs,
            mid,
            j1,
            depth + 1,
            continuity,
            flagged,
        );
    }
    for b in 0..prev.len() {
        continuity[b] = continuity[b].min(m.per_branch[b]);
        flagged[b] |= m.ambiguous[b];
    }
    m.order.iter().map(|&c| eig[c].clone()).collect()
}

/// Level diagram of the readout Hamiltonian over a strictly increasing `j`
/// grid, with each branch tracked by eigenvector continuity.
pub fn instantaneous_spectrum(s: &ReadoutSpinParams, j_grid: &[f64]) -> Result<LevelDiagram> {
    s.validate()?;
    if j_grid.is_empty() {
        return Err(invalid("j_grid", "must not be empty"));
    }
    if j_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("j_grid", "must be strictly increasing"));
    }
    if j_grid.iter().any(|j| !j.is_finite()) {
        return Err(invalid("j_grid", "must be finite"));
    }
    let sys = SpinSystem::readout();
    let (a, b) = sys.electron_pair();
    let ps = pair_projectors(&sys, a, b)?.singlet;
    let blocks = coupled_blocks(&[&readout_static_part(s), &readout_exchange_operator()]);
    let n = sys.dim();

    let mut continuity = vec![1.0; n];
    let mut flagged = vec![false; n];
    let mut current = blocked_eigen(&readout_hamiltonian(s, j_grid[0]), &blocks);
    let mut diagram = LevelDiagram {
        j: Vec::with_capacity(j_grid.len()),
        energies: Vec::with_capacity(j_grid.len()),
        singlet_character: Vec::with_capacity(j_grid.len()),
        states: Vec::with_capacity(j_grid.len()),
        min_continuity: Vec::new(),
        flagged: Vec::new(),
    };
    for (k, &j) in j_grid.iter().enumerate() {
        if k > 0 {
            let prev: Vec<DVector<C64>> = current.iter().map(|(_, v)| v.clone()).collect();
            current = advance(
                s,
                &blocks,
                &prev,
                j_grid[k - 1],
                j,
                0,
                &mut continuity,
                &mut flagged,
            );
        }
        diagram.j.push(j);
        diagram
            .energies
            .push(current.iter().map(|(e, _)| *e).collect());
        diagram.singlet_character.push(
            current
                .iter()
                .map(|(_, v)| ps.expectation_in(v).re)
                .collect(),
        );
        diagram
            .states
            .push(current.iter().map(|(_, v)| v.clone()).collect());
    }
    diagram.min_continuity = continuity;
    diagram.flagged = flagged;
    Ok(diagram)
}

/// Minimum distance between the adiabatic level containing `ket` at `j = 0`
/// and its neighbours in the same symmetry block, and the diabatic sweep rate
/// `|d(E_1 - E_2)/dj|` at that point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AvoidedCrossing {
    pub j_star: f64,
    pub min_gap: f64,
    /// Slope of the diabatic energy difference with respect to `j`.
    pub diabatic_slope: f64,
}

/// Locates the narrowest avoided crossing met by the adiabatic level that
/// starts on `ket`, within `[0, j_max]`. Returns `None` when the level's
/// symmetry block is one-dimensional (nothing to anticross with).
pub fn find_avoided_crossing(
    s: &ReadoutSpinParams,
    ket: &DVector<C64>,
    j_max: f64,
) -> Option<AvoidedCrossing> {
    let h0 = readout_static_part(s);
    let x = readout_exchange_operator();
    let blocks = coupled_blocks(&[&h0, &x]);
    // Block holding most of the ket.
    let block = blocks
        .iter()
        .max_by(|a, b| {
            let wa: f64 = a.iter().map(|&i| ket[i].norm_sqr()).sum();
            let wb: f64 = b.iter().map(|&i| ket[i].norm_sqr()).sum();
            wa.total_cmp(&wb)
        })?
        .clone();
    if block.len() < 2 || j_max <= 0.0 {
        return None;
    }
    // The non-crossing rule keeps the energy rank of an adiabatic level fixed
    // within a block.
    let start = block_eigen(&h0, &block);
    let rank = (0..start.len())
        .max_by(|&a, &b| overlap(&start[a].1, ket).total_cmp(&overlap(&start[b].1, ket)))?;
    let levels = |j: f64| -> Vec<f64> {
        let h = &h0 + &x.scale(j);
        let eig = SymmetricEigen::new(sub_block(&h, &block));
        let mut e: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    };
    // Gap to the neighbour on a chosen side.
    let gap_side = |j: f64, up: bool| -> f64 {
        let e = levels(j);
        if up {
            e.get(rank + 1).map_or(f64::INFINITY, |u| u - e[rank])
        } else if rank > 0 {
            e[rank] - e[rank - 1]
        } else {
            f64::INFINITY
        }
    };
    let mut best: Option<(f64, bool, f64)> = None;
    let n_scan = 4000;
    for up in [true, false] {
        for k in 0..=n_scan {
            let j = j_max * k as f64 / n_scan as f64;
            let g = gap_side(j, up);
            if best.map_or(true, |(_, _, bg)| g < bg) {
                best = Some((j, up, g));
            }
        }
    }
    let (j0, up, _) = best?;
    // Golden-section refinement around the coarse minimum.
    let step = j_max / n_scan as f64;
    let (mut lo, mut hi) = ((j0 - step).max(0.0), (j0 + step).min(j_max));
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let mut c1 = hi - gr * (hi - lo);
    let mut c2 = lo + gr * (hi - lo);
    let (mut f1, mut f2) = (gap_side(c1, up), gap_side(c2, up));
    for _ in 0..200 {
        if f1 < f2 {
            hi = c2;
            c2 = c1;
            f2 = f1;
            c1 = hi - gr * (hi - lo);
            f1 = gap_side(c1, up);
        } else {
            lo = c1;
            c1 = c2;
            f1 = f2;
            c2 = lo + gr * (hi - lo);
            f2 = gap_side(c2, up);
        }
        if hi - lo < 1e-14 * j_max.max(1.0) {
            break;
        }
    }
    let j_star = 0.5 * (lo + hi);
    let min_gap = gap_side(j_star, up);
    // For a two-level anticrossing gap(j)^2 = (v (j - j*))^2 + gap_min^2, so
    // gap'' = v^2 / gap_min at the minimum.
    let dj = 0.05 * min_gap / x.norm_one().max(1e-300);
    let curvature =
        (gap_side(j_star + dj, up) - 2.0 * min_gap + gap_side(j_star - dj, up)) / (dj * dj);
    let diabatic_slope = (min_gap * curvature.max(0.0)).sqrt();
    Some(AvoidedCrossing {
        j_star,
        min_gap,
        diabatic_slope,
    })
}

/// `Tr(P_S |v><v|)` over the electron pair of the readout system.
pub fn singlet_character(v: &DVector<C64>) -> f64 {
    let sys = SpinSystem::readout();
    let (a, b) = sys.electron_pair();
    let ps = pair_projectors(&sys, a, b).expect("readout pair").singlet;
    trace_product(&Operator::projector(v), &ps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{pair_kets, total_sz, Spin};

    fn toy() -> ReadoutSpinParams {
        ReadoutSpinParams {
            omega_p: 10.0,
            omega_db: 10.0,
            omega_n: 0.01,
            hyperfine_a: 0.1,
        }
    }

    #[test]
    fn zeeman_only_pair_is_diagonal() {
        let p = PairParams {
            detuning_a: 3.0,
            detuning_b: 1.0,
            exchange_j: 0.0,
        };
        let h = rotating_pair_hamiltonian(&p, &DriveParams::new(0.0, 0.0).unwrap());
        let expected = Operator::from_real_diagonal(&[2.0, 1.0, -1.0, -2.0]);
        assert!(h.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn resonant_drive_is_collective_sx() {
        let p = PairParams {
            detuning_a: 0.0,
            detuning_b: 0.0,
            exchange_j: 0.0,
        };
        let h = rotating_pair_hamiltonian(&p, &DriveParams::new(2.5, 0.0).unwrap());
        let sys = SpinSystem::pair();
        let sx =
            &spin_operator(&sys, 0, Axis::X).unwrap() + &spin_operator(&sys, 1, Axis::X).unwrap();
        assert!(h.max_abs_diff(&sx.scale(2.5)) < 1e-15);
    }

    #[test]
    fn exchange_spectrum() {
        let p = PairParams {
            detuning_a: 0.0,
            detuning_b: 0.0,
            exchange_j: 4.0,
        };
        let h = rotating_pair_hamiltonian(&p, &DriveParams::new(0.0, 0.0).unwrap());
        let [s, tp, t0, tm] = pair_kets();
        assert!((h.expectation_in(&s).re + 3.0).abs() < 1e-14);
        for t in [tp, t0, tm] {
            let ht = h.matrix() * &t;
            assert!((ht - &t * c(1.0)).norm() < 1e-14);
        }
    }

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn phase_reversal_negates_drive() {
        let p = PairParams {
            detuning_a: 1.3,
            detuning_b: -0.4,
            exchange_j: 0.2,
        };
        for phase in [0.0, 37.0, 90.0, 200.0] {
            let d = DriveParams::new(5.0, phase).unwrap();
            let h1 = rotating_pair_hamiltonian(&p, &d);
            let h2 = rotating_pair_hamiltonian(&p, &d.reversed());
            let h0 = rotating_pair_hamiltonian(&p, &DriveParams::new(0.0, 0.0).unwrap());
            assert!((&h1 + &h2).max_abs_diff(&h0.scale(2.0)) <= 1e-13);
            assert!(h1.hermiticity_error() <= 1e-13);
        }
    }

    #[test]
    fn phase_normalization() {
        assert_eq!(DriveParams::new(1.0, 540.0).unwrap().phase_deg, 180.0);
        assert_eq!(DriveParams::new(1.0, -90.0).unwrap().phase_deg, 270.0);
        assert!(DriveParams::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn readout_conserves_total_m() {
        let s = toy();
        let jz = total_sz(&SpinSystem::readout());
        for j in [0.0, 3.0, 10.0, 25.0] {
            let h = readout_hamiltonian(&s, j);
            assert!(h.commutator(&jz).max_abs() <= 1e-13);
            assert!(h.hermiticity_error() <= 1e-13);
        }
        let blocks = coupled_blocks(&[&readout_static_part(&s), &readout_exchange_operator()]);
        let mut sizes: Vec<usize> = blocks.iter().map(|b| b.len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![1, 1, 3, 3]);
    }

    #[test]
    fn all_down_is_exact_eigenstate() {
        let sys = SpinSystem::readout();
        let ddd = sys
            .product_ket(&[Spin::Down, Spin::Down, Spin::Down])
            .unwrap();
        for (j, a) in [(0.0, 0.1), (7.0, 0.5), (50.0, 2.0)] {
            let s = ReadoutSpinParams {
                hyperfine_a: a,
                ..toy()
            };
            let h = readout_hamiltonian(&s, j);
            let hv = h.matrix() * &ddd;
            let e = h.expectation_in(&ddd);
            assert!((hv - &ddd * e).norm() < 1e-13);
        }
    }

    #[test]
    fn ramp_endpoints_and_midpoints() {
        let lin = ExchangeRamp {
            j_max: 8.0,
            tau_slope: 2.0,
            shape: RampShape::Linear,
            hold: 1.0,
        };
        assert_eq!(ramp_value(&lin, 0.0), 0.0);
        assert_eq!(ramp_value(&lin, 2.0), 8.0);
        assert_eq!(ramp_value(&lin, 2.5), 8.0);
        assert!((ramp_value(&lin, 1.0) - 4.0).abs() < 1e-15);
        let rc = ExchangeRamp {
            shape: RampShape::RaisedCosine,
            ..lin
        };
        assert!((ramp_value(&rc, 1.0) - 4.0).abs() < 1e-14);
        assert!((rc.derivative(1.0) - PI * 8.0 / 4.0).abs() < 1e-13);
        assert!(rc.derivative(0.0).abs() < 1e-15);
        assert!((rc.time_at(4.0) - 1.0).abs() < 1e-14);
        let mut last = 0.0;
        for k in 0..=100 {
            let v = ramp_value(&rc, 2.0 * k as f64 / 100.0);
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn spectrum_first_column_is_breit_rabi_plus_zeeman() {
        let s = ReadoutSpinParams {
            omega_p: 10.0,
            omega_db: 7.0,
            omega_n: 0.3,
            hyperfine_a: 0.8,
        };
        let d = instantaneous_spectrum(&s, &[0.0, 1.0]).unwrap();
        // Independent route: donor electron + nucleus closed form, db Zeeman added.
        let (wp, wn, a) = (s.omega_p, s.omega_n, s.hyperfine_a);
        let root = (((wp + wn) / 2.0).powi(2) + a * a / 4.0).sqrt();
        let pn = [
            (wp - wn) / 2.0 + a / 4.0,
            -(wp - wn) / 2.0 + a / 4.0,
            -a / 4.0 + root,
            -a / 4.0 - root,
        ];
        let mut expected: Vec<f64> = pn
            .iter()
            .flat_map(|e| [e + s.omega_db / 2.0, e - s.omega_db / 2.0])
            .collect();
        expected.sort_by(f64::total_cmp);
        for (e, x) in d.energies[0].iter().zip(&expected) {
            assert!((e - x).abs() < 1e-12, "{e} vs {x}");
        }
    }

    #[test]
    fn spectrum_rejects_unsorted_grid() {
        assert!(instantaneous_spectrum(&toy(), &[0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn tracked_branches() {
        let s = toy();
        let grid: Vec<f64> = (0..=200).map(|k| 0.1 * k as f64).collect();
        let d = instantaneous_spectrum(&s, &grid).unwrap();
        let sys = SpinSystem::readout();
        let down = sys
            .product_ket(&[Spin::Down, Spin::Down, Spin::Down])
            .unwrap();
        let up = sys
            .product_ket(&[Spin::Down, Spin::Down, Spin::Up])
            .unwrap();
        let bd = d.branch_starting_at(&down);
        for k in 0..grid.len() {
            assert!(overlap(&d.states[k][bd], &down) >= 0.999);
        }
        let bu = d.branch_starting_at(&up);
        let last = grid.len() - 1;
        assert!(d.singlet_character[last][bu] > 0.99);
        assert!(d.singlet_character[0][bu] < 1e-3);
        for k in 0..grid.len() {
            let sum: f64 = d.energies[k].iter().sum();
            let tr = readout_hamiltonian(&s, grid[k]).trace().re;
            assert!((sum - tr).abs() <= 1e-10 * tr.abs().max(1.0));
        }
    }

    #[test]
    fn avoided_crossing_near_ten_with_gap_linear_in_a() {
        let sys = SpinSystem::readout();
        let up = sys
            .product_ket(&[Spin::Down, Spin::Down, Spin::Up])
            .unwrap();
        let x1 = find_avoided_crossing(&toy(), &up, 20.0).unwrap();
        let x2 = find_avoided_crossing(
            &ReadoutSpinParams {
                hyperfine_a: 0.2,
                ..toy()
            },
            &up,
            20.0,
        )
        .unwrap();
        assert!((x1.j_star - 10.0).abs() < 0.2, "{x1:?}");
        let ratio = x2.min_gap / x1.min_gap;
        assert!((ratio - 2.0).abs() < 0.05, "{ratio}");
        // Diabatic slope: T- rises as j/4, S falls as -3j/4.
        assert!((x1.diabatic_slope - 1.0).abs() < 0.05, "{x1:?}");
        let down = sys
            .product_ket(&[Spin::Down, Spin::Down, Spin::Down])
            .unwrap();
        assert!(find_avoided_crossing(&toy(), &down, 20.0).is_none());
    }

    #[test]
    fn level_csv_header() {
        let d = instantaneous_spectrum(&toy(), &[0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("j,E_1,"));
        assert!(header.ends_with("singlet_character_8"));
        assert_eq!(text.lines().count(), 3);
    }
}

//! Spin-1/2 operators, pair projectors and density matrices on 2- and 3-site
//! product spaces.
//!
//! Basis convention: site 0 is the slowest-varying tensor index and each site
//! is enumerated up = 0, down = 1. With hbar = 1 all operators are in units of
//! hbar and all Hamiltonian coefficients are angular frequencies.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const HERMITIAN_TOL: f64 = 1e-12;
pub(crate) const POSITIVITY_TOL: f64 = 1e-9;
pub(crate) const TRACE_TOL: f64 = 1e-9;
const EXPECTATION_IMAG_TOL: f64 = 1e-10;

#[inline]
pub(crate) fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// What a site of the spin system physically is.
///
/// The shallow electron is the conduction-electron trap (CE) in the pair
/// experiments and the donor electron in the readout device; the deep electron
/// is the dangling bond or deep-level defect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SiteRole {
    ShallowElectron,
    DeepElectron,
    Nucleus,
}

impl SiteRole {
    pub fn is_electron(self) -> bool {
        !matches!(self, SiteRole::Nucleus)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    /// `m_s` of the state.
    pub fn sz(self) -> f64 {
        match self {
            Spin::Up => 0.5,
            Spin::Down => -0.5,
        }
    }

    fn index(self) -> usize {
        match self {
            Spin::Up => 0,
            Spin::Down => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpinSystem {
    sites: Vec<SiteRole>,
}

impl SpinSystem {
    pub fn new(sites: Vec<SiteRole>) -> Result<Self> {
        if !(2..=3).contains(&sites.len()) {
            return Err(Error::InvalidSystem(format!(
                "expected 2 or 3 sites, got {}",
                sites.len()
            )));
        }
        for (i, a) in sites.iter().enumerate() {
            if sites[i + 1..].contains(a) {
                return Err(Error::InvalidSystem(format!("duplicate site role {a:?}")));
            }
        }
        Ok(Self { sites })
    }

    /// CE (or donor) electron and deep-level electron.
    pub fn pair() -> Self {
        Self {
            sites: vec![SiteRole::ShallowElectron, SiteRole::DeepElectron],
        }
    }

    /// Donor electron, deep-level electron and the donor nucleus.
    pub fn readout() -> Self {
        Self {
            sites: vec![
                SiteRole::ShallowElectron,
                SiteRole::DeepElectron,
                SiteRole::Nucleus,
            ],
        }
    }

    pub fn sites(&self) -> &[SiteRole] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn dim(&self) -> usize {
        1 << self.sites.len()
    }

    pub fn site_of(&self, role: SiteRole) -> Option<usize> {
        self.sites.iter().position(|&r| r == role)
    }

    /// The two electron sites, in site order.
    pub fn electron_pair(&self) -> (usize, usize) {
        let mut it = self
            .sites
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_electron())
            .map(|(i, _)| i);
        // Constructors guarantee two electrons for the built-in systems; a
        // custom system without them has no pair to recombine.
        let a = it.next().unwrap_or(0);
        let b = it.next().unwrap_or(1);
        (a, b)
    }

    fn bit(&self, index: usize, site: usize) -> usize {
        (index >> (self.len() - 1 - site)) & 1
    }

    /// Index of a product basis ket.
    pub fn basis_index(&self, spins: &[Spin]) -> Result<usize> {
        if spins.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: spins.len(),
            });
        }
        Ok(spins.iter().fold(0, |acc, s| (acc << 1) | s.index()))
    }

    pub fn product_ket(&self, spins: &[Spin]) -> Result<DVector<C64>> {
        let mut v = DVector::zeros(self.dim());
        v[self.basis_index(spins)?] = c(1.0);
        Ok(v)
    }

    /// Total z projection of each product basis ket.
    pub fn magnetic_numbers(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                (0..self.len())
                    .map(|s| if self.bit(i, s) == 0 { 0.5 } else { -0.5 })
                    .sum()
            })
            .collect()
    }
}

/// Dense complex square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator(DMatrix<C64>);

impl Operator {
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        Ok(Self(m))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                c(diag[i])
            } else {
                c(0.0)
            }
        }))
    }

    pub fn projector(ket: &DVector<C64>) -> Self {
        Self(ket * ket.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(&self.0 * c(s))
    }

    pub fn scale_complex(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn commutator(&self, other: &Self) -> Self {
        Self(&self.0 * &other.0 - &other.0 * &self.0)
    }

    pub fn anticommutator(&self, other: &Self) -> Self {
        Self(&self.0 * &other.0 + &other.0 * &self.0)
    }

    pub fn kron(&self, other: &Self) -> Self {
        Self(self.0.kronecker(&other.0))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (&self.0 - &other.0)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn hermitian_part(&self) -> Self {
        Self((&self.0 + self.0.adjoint()) * c(0.5))
    }

    /// Spectral norm bound used for step control: the induced 1-norm.
    pub fn norm_one(&self) -> f64 {
        (0..self.dim())
            .map(|j| self.0.column(j).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Ascending eigenvalues of a Hermitian operator.
    pub fn eigenvalues_hermitian(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.hermitian_part().0)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn expectation_in(&self, ket: &DVector<C64>) -> C64 {
        (ket.adjoint() * &self.0 * ket)[(0, 0)]
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator(&self.0 + &rhs.0)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator(&self.0 - &rhs.0)
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator(&self.0 * &rhs.0)
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        Operator(-&self.0)
    }
}

impl Add for Operator {
    type Output = Operator;
    fn add(self, rhs: Operator) -> Operator {
        Operator(self.0 + rhs.0)
    }
}

impl Sub for Operator {
    type Output = Operator;
    fn sub(self, rhs: Operator) -> Operator {
        Operator(self.0 - rhs.0)
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Hermitian, positive semidefinite operator with trace in [0, 1].
///
/// A trace below one is the fraction of pairs that have not yet recombined or
/// dissociated.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(Operator);

impl DensityMatrix {
    pub fn new(op: Operator) -> Result<Self> {
        let herm = op.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!(
                "not Hermitian (deviation {herm:e})"
            )));
        }
        let tr = op.trace().re;
        if !(-TRACE_TOL..=1.0 + TRACE_TOL).contains(&tr) {
            return Err(Error::InvalidState(format!("trace {tr} outside [0, 1]")));
        }
        let min_ev = op.eigenvalues_hermitian().first().copied().unwrap_or(0.0);
        if min_ev < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_ev:e}"
            )));
        }
        Ok(Self(op.hermitian_part()))
    }

    /// Wraps a propagated state. Hermiticity is restored; trace and positivity
    /// are the caller's responsibility.
    pub(crate) fn from_evolved(op: Operator) -> Self {
        Self(op.hermitian_part())
    }

    pub fn pure(ket: &DVector<C64>) -> Result<Self> {
        let n = ket.norm();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!("ket norm {n} is not 1")));
        }
        Ok(Self(Operator::projector(ket)))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(Operator::identity(dim).scale(1.0 / dim as f64))
    }

    pub fn op(&self) -> &Operator {
        &self.0
    }

    pub fn into_op(self) -> Operator {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0
            .eigenvalues_hermitian()
            .first()
            .copied()
            .unwrap_or(0.0)
    }

    /// Rescaled to unit trace.
    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace();
        if tr <= 0.0 {
            return Err(Error::InvalidState("cannot normalize zero trace".into()));
        }
        Ok(Self(self.0.scale(1.0 / tr)))
    }

    /// Convex combination `w_1 rho_1 + w_2 rho_2 + ...`, accumulated in order.
    pub fn weighted_sum<'a>(
        items: impl IntoIterator<Item = (f64, &'a DensityMatrix)>,
    ) -> Option<Self> {
        let mut acc: Option<DMatrix<C64>> = None;
        for (w, rho) in items {
            let term = rho.0.matrix() * c(w);
            acc = Some(match acc {
                None => term,
                Some(a) => a + term,
            });
        }
        acc.map(|m| Self(Operator(m)))
    }

    pub fn population(&self, ket: &DVector<C64>) -> f64 {
        self.0.expectation_in(ket).re
    }

    pub fn kron(&self, other: &DensityMatrix) -> Self {
        Self(self.0.kron(&other.0))
    }
}

fn pauli(axis: Axis) -> DMatrix<C64> {
    let z = c(0.0);
    match axis {
        Axis::X => DMatrix::from_row_slice(2, 2, &[z, c(1.0), c(1.0), z]),
        Axis::Y => DMatrix::from_row_slice(2, 2, &[z, C64::new(0.0, -1.0), C64::new(0.0, 1.0), z]),
        Axis::Z => DMatrix::from_row_slice(2, 2, &[c(1.0), z, z, c(-1.0)]),
    }
}

/// `(1/2) sigma_axis` on `site`, identity on every other site.
pub fn spin_operator(system: &SpinSystem, site: usize, axis: Axis) -> Result<Operator> {
    if site >= system.len() {
        return Err(Error::SiteOutOfRange {
            site,
            len: system.len(),
        });
    }
    let half = pauli(axis) * c(0.5);
    let id = DMatrix::<C64>::identity(2, 2);
    let mut out = DMatrix::<C64>::identity(1, 1);
    for s in 0..system.len() {
        out = out.kronecker(if s == site { &half } else { &id });
    }
    Ok(Operator(out))
}

/// `S_a . S_b`.
pub fn spin_dot(system: &SpinSystem, a: usize, b: usize) -> Result<Operator> {
    let mut acc = Operator::zeros(system.dim());
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        acc = acc + &spin_operator(system, a, axis)? * &spin_operator(system, b, axis)?;
    }
    Ok(acc)
}

/// Sum of `S_z` over all sites.
pub fn total_sz(system: &SpinSystem) -> Operator {
    Operator::from_real_diagonal(&system.magnetic_numbers())
}

/// Singlet and triplet projectors of an electron pair.
#[derive(Clone, Debug)]
pub struct PairProjectors {
    pub singlet: Operator,
    pub t_plus: Operator,
    pub t_zero: Operator,
    pub t_minus: Operator,
}

impl PairProjectors {
    /// `P_T+ + P_T0 + P_T-`.
    pub fn triplet(&self) -> Operator {
        &(&self.t_plus + &self.t_zero) + &self.t_minus
    }

    pub fn all(&self) -> [&Operator; 4] {
        [&self.singlet, &self.t_plus, &self.t_zero, &self.t_minus]
    }
}

/// The four two-spin kets |S>, |T+>, |T0>, |T-> in the (up, down) basis.
pub fn pair_kets() -> [DVector<C64>; 4] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let v = |a: [f64; 4]| DVector::from_iterator(4, a.iter().map(|&x| c(x)));
    [
        v([0.0, r, -r, 0.0]),
        v([1.0, 0.0, 0.0, 0.0]),
        v([0.0, r, r, 0.0]),
        v([0.0, 0.0, 0.0, 1.0]),
    ]
}

fn check_pair(system: &SpinSystem, a: usize, b: usize) -> Result<()> {
    for s in [a, b] {
        if s >= system.len() {
            return Err(Error::SiteOutOfRange {
                site: s,
                len: system.len(),
            });
        }
    }
    if a == b || !system.sites[a].is_electron() || !system.sites[b].is_electron() {
        return Err(Error::InvalidPair(a, b));
    }
    Ok(())
}

/// Embeds a 4x4 operator acting on sites `(a, b)` into the full space.
fn embed_pair(system: &SpinSystem, a: usize, b: usize, op: &DMatrix<C64>) -> Operator {
    let n = system.dim();
    let rest_mask: usize = (0..system.len())
        .filter(|&s| s != a && s != b)
        .map(|s| 1 << (system.len() - 1 - s))
        .sum();
    Operator(DMatrix::from_fn(n, n, |i, j| {
        if i & rest_mask != j & rest_mask {
            return c(0.0);
        }
        let pi = system.bit(i, a) * 2 + system.bit(i, b);
        let pj = system.bit(j, a) * 2 + system.bit(j, b);
        op[(pi, pj)]
    }))
}

/// Projectors built from the pair kets, tensored with identity elsewhere.
pub fn pair_projectors(system: &SpinSystem, a: usize, b: usize) -> Result<PairProjectors> {
    check_pair(system, a, b)?;
    let [s, tp, t0, tm] = pair_kets();
    let p = |k: &DVector<C64>| embed_pair(system, a, b, &(k * k.adjoint()));
    Ok(PairProjectors {
        singlet: p(&s),
        t_plus: p(&tp),
        t_zero: p(&t0),
        t_minus: p(&tm),
    })
}

/// Singlet projector from the exchange identity `P_S = I/4 - S_a . S_b`.
pub fn singlet_projector_from_exchange(
    system: &SpinSystem,
    a: usize,
    b: usize,
) -> Result<Operator> {
    check_pair(system, a, b)?;
    Ok(&Operator::identity(system.dim()).scale(0.25) - &spin_dot(system, a, b)?)
}

/// `Tr(rho obs)` for a Hermitian observable.
pub fn expectation(rho: &DensityMatrix, obs: &Operator) -> Result<f64> {
    if rho.dim() != obs.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            found: obs.dim(),
        });
    }
    let herm = obs.hermiticity_error();
    if herm > HERMITIAN_TOL {
        return Err(Error::NotHermitian(herm));
    }
    let v = (rho.op() * obs).trace();
    if v.im.abs() > EXPECTATION_IMAG_TOL {
        return Err(Error::ComplexExpectation(v.im));
    }
    Ok(v.re)
}

/// `Tr(rho obs)` without validation, for hot loops on trusted operators.
pub(crate) fn trace_product(rho: &Operator, obs: &Operator) -> f64 {
    let (a, b) = (rho.matrix(), obs.matrix());
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..n {
            acc += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    acc
}

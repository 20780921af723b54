//! Static inhomogeneous broadening of detunings and drive strength.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::output::fmt_f64;

pub const MAX_MEMBERS: u128 = 1_000_000;
pub const PRUNE_WEIGHT: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    GaussHermite,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BroadeningSpec {
    /// rad/s
    pub sigma_detuning_a: f64,
    /// rad/s
    pub sigma_detuning_b: f64,
    /// Relative spread of the drive strength.
    pub sigma_rabi_rel: f64,
    /// Quadrature nodes per broadened dimension, or sample count for Monte Carlo.
    pub n_nodes: usize,
    pub scheme: Scheme,
    pub seed: u64,
}

impl BroadeningSpec {
    pub fn none() -> Self {
        Self {
            sigma_detuning_a: 0.0,
            sigma_detuning_b: 0.0,
            sigma_rabi_rel: 0.0,
            n_nodes: 1,
            scheme: Scheme::GaussHermite,
            seed: 0,
        }
    }

    pub fn rabi_only(sigma_rabi_rel: f64, n_nodes: usize) -> Self {
        Self {
            sigma_rabi_rel,
            n_nodes,
            ..Self::none()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_detuning_a", self.sigma_detuning_a),
            ("sigma_detuning_b", self.sigma_detuning_b),
            ("sigma_rabi_rel", self.sigma_rabi_rel),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("{name} >= 0 violated (got {v})")));
            }
        }
        if self.n_nodes < 1 {
            return Err(invalid("n_nodes", "n_nodes >= 1 violated"));
        }
        Ok(())
    }

    fn sigmas(&self) -> [f64; 3] {
        [
            self.sigma_detuning_a,
            self.sigma_detuning_b,
            self.sigma_rabi_rel,
        ]
    }
}

/// One quenched configuration. Detunings are offsets added to the pair's
/// centre detunings; the drive strength is multiplied by `rabi_scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleMember {
    pub detuning_a: f64,
    pub detuning_b: f64,
    pub rabi_scale: f64,
    pub weight: f64,
}

impl EnsembleMember {
    pub const CENTER: EnsembleMember = EnsembleMember {
        detuning_a: 0.0,
        detuning_b: 0.0,
        rabi_scale: 1.0,
        weight: 1.0,
    };

    fn from_standard(sig: &[f64; 3], x: [f64; 3], weight: f64) -> Self {
        Self {
            detuning_a: sig[0] * x[0],
            detuning_b: sig[1] * x[1],
            rabi_scale: 1.0 + sig[2] * x[2],
            weight,
        }
    }
}

/// Nodes and weights for expectations over a standard normal variable.
/// Weights sum to one; nodes are symmetric about zero.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "at least one node");
    if n == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let jac = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut x: Vec<f64> = SymmetricEigen::new(jac)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    x.sort_by(f64::total_cmp);
    // Newton polish on the orthonormal recurrence.
    let eval = |t: f64| -> (f64, f64) {
        let (mut prev, mut cur) = (0.0, 1.0);
        for k in 0..n {
            let next = (t * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
            prev = cur;
            cur = next;
        }
        (cur, prev)
    };
    for xi in x.iter_mut() {
        for _ in 0..3 {
            let (hn, hn1) = eval(*xi);
            let dx = hn / ((n as f64).sqrt() * hn1);
            *xi -= dx;
            if dx.abs() < 1e-16 * xi.abs().max(1.0) {
                break;
            }
        }
    }
    for i in 0..n / 2 {
        let m = 0.5 * (x[n - 1 - i] - x[i]);
        x[i] = -m;
        x[n - 1 - i] = m;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let mut w: Vec<f64> = x
        .iter()
        .map(|&t| {
            let (_, hn1) = eval(t);
            1.0 / (n as f64 * hn1 * hn1)
        })
        .collect();
    for i in 0..n / 2 {
        let m = 0.5 * (w[i] + w[n - 1 - i]);
        w[i] = m;
        w[n - 1 - i] = m;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    (x, w)
}

pub fn build_ensemble(spec: &BroadeningSpec) -> Result<Vec<EnsembleMember>> {
    spec.validate()?;
    let sig = spec.sigmas();
    let dims: Vec<usize> = (0..3).filter(|&k| sig[k] > 0.0).collect();
    if dims.is_empty() || spec.n_nodes == 1 {
        return Ok(vec![EnsembleMember::CENTER]);
    }
    match spec.scheme {
        Scheme::GaussHermite => {
            let count = (spec.n_nodes as u128).saturating_pow(dims.len() as u32);
            if count > MAX_MEMBERS {
                return Err(Error::EnsembleOverflow(count));
            }
            let (nodes, weights) = gauss_hermite(spec.n_nodes);
            let mut members = Vec::with_capacity(count as usize);
            let mut idx = vec![0usize; dims.len()];
            loop {
                let mut x = [0.0; 3];
                let mut w = 1.0;
                for (slot, &d) in dims.iter().enumerate() {
                    x[d] = nodes[idx[slot]];
                    w *= weights[idx[slot]];
                }
                if w > PRUNE_WEIGHT {
                    members.push(EnsembleMember::from_standard(&sig, x, w));
                }
                // Odometer over the tensor grid, last dimension fastest.
                let mut k = dims.len();
                loop {
                    if k == 0 {
                        return Ok(renormalize(members));
                    }
                    k -= 1;
                    idx[k] += 1;
                    if idx[k] < spec.n_nodes {
                        break;
                    }
                    idx[k] = 0;
                }
            }
        }
        Scheme::MonteCarlo => {
            if spec.n_nodes as u128 > MAX_MEMBERS {
                return Err(Error::EnsembleOverflow(spec.n_nodes as u128));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let w = 1.0 / spec.n_nodes as f64;
            Ok((0..spec.n_nodes)
                .map(|_| {
                    let mut x = [0.0; 3];
                    for &d in &dims {
                        x[d] = StandardNormal.sample(&mut rng);
                    }
                    EnsembleMember::from_standard(&sig, x, w)
                })
                .collect())
        }
    }
}

fn renormalize(mut members: Vec<EnsembleMember>) -> Vec<EnsembleMember> {
    let total: f64 = members.iter().map(|m| m.weight).sum();
    for m in members.iter_mut() {
        m.weight /= total;
    }
    members
}

/// Evaluates every member concurrently and returns results in member order.
pub fn ensemble_map<T, F>(members: &[EnsembleMember], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&EnsembleMember) -> Result<T> + Sync,
{
    members.par_iter().map(&f).collect()
}

/// Weighted sum of per-member series, reduced sequentially in member order.
pub fn ensemble_average(members: &[EnsembleMember], series: &[Vec<f64>]) -> Result<Vec<f64>> {
    if members.len() != series.len() {
        return Err(Error::GridMismatch(format!(
            "{} members but {} series",
            members.len(),
            series.len()
        )));
    }
    let Some(first) = series.first() else {
        return Err(Error::GridMismatch("empty ensemble".into()));
    };
    let mut acc = vec![0.0; first.len()];
    for (m, s) in members.iter().zip(series) {
        if s.len() != acc.len() {
            return Err(Error::GridMismatch(format!(
                "series of length {} against {}",
                s.len(),
                acc.len()
            )));
        }
        for (a, v) in acc.iter_mut().zip(s) {
            *a += m.weight * v;
        }
    }
    Ok(acc)
}

/// Parallel evaluation followed by the ordered reduction.
pub fn average_of<F>(members: &[EnsembleMember], f: F) -> Result<Vec<f64>>
where
    F: Fn(&EnsembleMember) -> Result<Vec<f64>> + Sync,
{
    let series = ensemble_map(members, f)?;
    ensemble_average(members, &series)
}

pub fn write_members_csv<W: Write>(members: &[EnsembleMember], mut w: W) -> Result<()> {
    writeln!(w, "detuning_a,detuning_b,rabi_scale,weight")?;
    for m in members {
        writeln!(
            w,
            "{},{},{},{}",
            fmt_f64(m.detuning_a),
            fmt_f64(m.detuning_b),
            fmt_f64(m.rabi_scale),
            fmt_f64(m.weight)
        )?;
    }
    Ok(())
}

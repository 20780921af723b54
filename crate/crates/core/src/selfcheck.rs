//! Invariant suites run by the `selfcheck` subcommand.

use std::time::Instant;

use serde::Serialize;

use crate::ensemble::{BroadeningSpec, Scheme};
use crate::error::Result;
use crate::hamiltonians::{
    readout_exchange_operator, readout_hamiltonian, readout_static_part, rotating_pair_hamiltonian,
    DriveParams, ExchangeRamp, PairParams, RampShape, ReadoutSpinParams,
};
use crate::propagator::{
    evolve, steady_state, steady_state_residual, step_halving_difference, ExchangeSweep, KsmRates,
    PiecewiseConstant, Sampling, StepControl,
};
use crate::readout::{readout_fidelity, thermal_initial_state, NuclearBit, ReadoutParams};
use crate::sequences::{echo_scan, uniform_grid, InitialState, ScanAxis};
use crate::spin::{
    pair_kets, pair_projectors, spin_dot, total_sz, DensityMatrix, Operator, SpinSystem,
};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed deviation.
    pub worst: f64,
    pub bound: f64,
    pub seconds: f64,
}

fn mhz(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * 1e6 * f
}

fn sample_pair() -> PairParams {
    PairParams {
        detuning_a: mhz(30.0),
        detuning_b: mhz(-4.0),
        exchange_j: mhz(1.5),
    }
}

fn drive() -> DriveParams {
    DriveParams::new(mhz(10.0), 0.0).expect("valid drive")
}

fn sample_readout() -> ReadoutSpinParams {
    ReadoutParams::default().spins
}

fn mixed_start() -> DensityMatrix {
    let [s, tp, t0, tm] = pair_kets();
    let w = [0.1, 0.2, 0.3, 0.4];
    DensityMatrix::weighted_sum(
        [s, tp, t0, tm]
            .iter()
            .map(|k| DensityMatrix::pure(k).expect("unit ket"))
            .collect::<Vec<_>>()
            .iter()
            .zip(w)
            .map(|(r, w)| (w, r)),
    )
    .expect("non-empty")
}

fn two_segment_program() -> Result<PiecewiseConstant> {
    let p = sample_pair();
    let d = drive();
    PiecewiseConstant::new(
        0.0,
        vec![
            (70e-9, rotating_pair_hamiltonian(&p, &d)),
            (130e-9, rotating_pair_hamiltonian(&p, &d.reversed())),
        ],
    )
}

/// Trace of closed and purely dephasing dynamics.
pub fn trace_preservation() -> Result<f64> {
    let prog = two_segment_program()?;
    let ctrl = StepControl::with_sampling(Sampling::Interval(5e-9));
    let mut worst = 0.0f64;
    for dephasing in [0.0, 3e6] {
        let rates = KsmRates {
            dephasing,
            ..KsmRates::ZERO
        };
        let tr = evolve(&mixed_start(), &prog, &rates, 0.0, prog.end(), &ctrl)?;
        for &x in tr.series("trace").expect("trace series") {
            worst = worst.max((x - 1.0).abs());
        }
    }
    Ok(worst)
}

/// Largest increase of the trace between samples with losses and no generation.
pub fn trace_monotone_without_generation() -> Result<f64> {
    let prog = two_segment_program()?;
    let ctrl = StepControl::with_sampling(Sampling::Interval(2e-9));
    let rates = KsmRates {
        r_s: 2e7,
        r_t: 1e6,
        d: 3e5,
        g: 0.0,
        dephasing: 1e6,
    };
    let tr = evolve(&mixed_start(), &prog, &rates, 0.0, prog.end(), &ctrl)?;
    let t = tr.series("trace").expect("trace series");
    Ok(t.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max))
}

/// Idempotence, orthogonality and completeness of the pair projectors, in both systems.
pub fn projector_algebra() -> Result<f64> {
    let mut worst = 0.0f64;
    for (sys, a, b) in [(SpinSystem::pair(), 0, 1), (SpinSystem::readout(), 0, 1)] {
        let p = pair_projectors(&sys, a, b)?;
        let all = p.all();
        let mut sum = Operator::zeros(sys.dim());
        for (i, pi) in all.iter().enumerate() {
            worst = worst.max((*pi * *pi).max_abs_diff(pi));
            worst = worst.max(pi.hermiticity_error());
            for pj in &all[i + 1..] {
                worst = worst.max((*pi * *pj).max_abs());
            }
            sum = &sum + *pi;
        }
        worst = worst.max(sum.max_abs_diff(&Operator::identity(sys.dim())));
    }
    Ok(worst)
}

/// `[H, J_z]` for the undriven pair and the readout Hamiltonian along the ramp.
pub fn total_sz_commutes() -> Result<f64> {
    let mut worst = 0.0f64;
    let undriven = DriveParams::new(0.0, 0.0)?;
    let h = rotating_pair_hamiltonian(&sample_pair(), &undriven);
    let jz = total_sz(&SpinSystem::pair());
    worst = worst.max(h.commutator(&jz).max_abs() / h.max_abs().max(1.0));
    let s = sample_readout();
    let jz = total_sz(&SpinSystem::readout());
    let jmax = s.omega_p + s.omega_db;
    for k in 0..=20 {
        let h = readout_hamiltonian(&s, jmax * k as f64 / 20.0);
        // relative to the operator scale, which is ~1e11 rad/s here
        worst = worst.max(h.commutator(&jz).max_abs() / h.max_abs());
    }
    Ok(worst)
}

/// Steady-state residual over `G`, and the zero-Hamiltonian closed form.
pub fn steady_state_checks() -> Result<(f64, f64)> {
    let rates = KsmRates {
        r_s: 1e7,
        r_t: 1e3,
        d: 1e4,
        g: 1e4,
        dephasing: 0.0,
    };
    let mut residual = 0.0f64;
    for h in [
        rotating_pair_hamiltonian(&sample_pair(), &drive()),
        rotating_pair_hamiltonian(&sample_pair(), &DriveParams::new(0.0, 0.0)?),
        Operator::zeros(4),
    ] {
        let rho = steady_state(&h, &rates)?;
        residual = residual.max(steady_state_residual(&h, &rates, rho.op())? / rates.g);
    }
    let rho = steady_state(&Operator::zeros(4), &rates)?;
    let [s, tp, t0, tm] = pair_kets();
    let ps = rates.g / (4.0 * (rates.r_s + rates.d));
    let pt = rates.g / (4.0 * (rates.r_t + rates.d));
    let mut closed = (rho.population(&s) - ps).abs();
    for t in [tp, t0, tm] {
        closed = closed.max((rho.population(&t) - pt).abs());
    }
    Ok((residual, closed))
}

/// Halving every drift step along exchange ramps, closed and lossy.
pub fn step_halving() -> Result<f64> {
    let s = sample_readout();
    let ramp = ExchangeRamp {
        j_max: s.omega_p + s.omega_db,
        tau_slope: 200e-9,
        shape: RampShape::Linear,
        hold: 50e-9,
    };
    let sweep = ExchangeSweep::new(
        readout_static_part(&s),
        readout_exchange_operator(),
        ramp,
        0.0,
    );
    let rho0 = thermal_initial_state(&s, 0.02, NuclearBit::Up)?;
    let ctrl = StepControl::default();
    let closed =
        step_halving_difference(&rho0, &sweep, &KsmRates::ZERO, 0.0, ramp.duration(), &ctrl)?;
    // Open dynamics on the pair, where the vectorized generator stays small.
    let pair_ramp = ExchangeRamp {
        j_max: mhz(80.0),
        tau_slope: 150e-9,
        shape: RampShape::RaisedCosine,
        hold: 20e-9,
    };
    let undriven = rotating_pair_hamiltonian(&sample_pair(), &DriveParams::new(0.0, 0.0)?);
    let pair_sweep = ExchangeSweep::new(
        undriven,
        spin_dot(&SpinSystem::pair(), 0, 1)?,
        pair_ramp,
        0.0,
    );
    let lossy = KsmRates {
        r_s: 2e7,
        r_t: 1e5,
        d: 1e5,
        g: 0.0,
        dephasing: 1e6,
    };
    let open = step_halving_difference(
        &mixed_start(),
        &pair_sweep,
        &lossy,
        0.0,
        pair_ramp.duration(),
        &ctrl,
    )?;
    Ok(closed.max(open))
}

fn seeded_outputs() -> Result<Vec<u8>> {
    let ens = BroadeningSpec {
        sigma_detuning_a: mhz(2.0),
        sigma_detuning_b: mhz(3.0),
        sigma_rabi_rel: 0.2,
        n_nodes: 64,
        scheme: Scheme::MonteCarlo,
        seed: 42,
    };
    let rates = KsmRates {
        r_s: 1e7,
        r_t: 1e3,
        d: 1e4,
        g: 1e4,
        dephasing: 0.0,
    };
    let grid: Vec<f64> = uniform_grid(0.0, 300.0, 10.0)
        .into_iter()
        .map(|t| t * 1e-9)
        .collect();
    let scan = echo_scan(
        &InitialState::SteadyState,
        100e-9,
        &grid,
        ScanAxis::TotalLength,
        &sample_pair(),
        &rates,
        &ens,
        &drive(),
    )?;
    let mut out = Vec::new();
    scan.write_csv(&mut out)?;
    let mut p = ReadoutParams::default();
    p.ramp.tau_slope = 1e-6;
    p.ramp.hold = 0.0;
    let report = readout_fidelity(&p, 2000, 42)?;
    out.extend(serde_json::to_vec(&report)?);
    Ok(out)
}

/// Seeded outputs, rerun on one thread and on the default pool.
pub fn reproducible_reruns() -> Result<bool> {
    let a = seeded_outputs()?;
    let b = seeded_outputs()?;
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| crate::error::Error::InvalidParameter {
            field: "threads".into(),
            reason: e.to_string(),
        })?;
    let c = single.install(seeded_outputs)?;
    Ok(a == b && a == c)
}

fn timed<F: FnOnce() -> Result<f64>>(name: &'static str, bound: f64, f: F) -> Result<SuiteResult> {
    let start = Instant::now();
    let worst = f()?;
    Ok(SuiteResult {
        name,
        passed: worst <= bound,
        worst,
        bound,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_all() -> Result<Vec<SuiteResult>> {
    let mut out = vec![
        timed("trace_preservation", 1e-9, trace_preservation)?,
        timed(
            "trace_monotone_g0",
            1e-15,
            trace_monotone_without_generation,
        )?,
        timed("projector_algebra", 1e-12, projector_algebra)?,
        timed("total_sz_commutes", 1e-13, total_sz_commutes)?,
    ];
    let start = Instant::now();
    let (residual, closed) = steady_state_checks()?;
    let secs = start.elapsed().as_secs_f64();
    out.push(SuiteResult {
        name: "steady_state_residual",
        passed: residual <= 1e-10,
        worst: residual,
        bound: 1e-10,
        seconds: secs,
    });
    out.push(SuiteResult {
        name: "steady_state_closed_form",
        passed: closed <= 1e-12,
        worst: closed,
        bound: 1e-12,
        seconds: 0.0,
    });
    out.push(timed("step_halving", 1e-8, step_halving)?);
    out.push(timed("reproducible_reruns", 0.0, || {
        Ok(if reproducible_reruns()? { 0.0 } else { 1.0 })
    })?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_halving_is_stable() {
        assert!(step_halving().unwrap() <= 1e-8);
    }

    #[test]
    fn cheap_suites_pass() {
        assert!(trace_preservation().unwrap() <= 1e-9);
        assert!(trace_monotone_without_generation().unwrap() <= 1e-15);
        assert!(projector_algebra().unwrap() <= 1e-12);
        assert!(total_sz_commutes().unwrap() <= 1e-13);
        let (r, c) = steady_state_checks().unwrap();
        assert!(r <= 1e-10 && c <= 1e-12, "{r} {c}");
    }
}

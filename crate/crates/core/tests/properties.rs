use proptest::prelude::*;

use sdrsim::config::{dump_config, mhz, parse_config};
use sdrsim::ensemble::{average_of, build_ensemble, gauss_hermite, BroadeningSpec, Scheme};
use sdrsim::hamiltonians::{
    readout_hamiltonian, rotating_pair_hamiltonian, DriveParams, PairParams, ReadoutSpinParams,
};
use sdrsim::photocurrent::{apply_detector, CurrentTrace, DetectorModel};
use sdrsim::propagator::{evolve, KsmRates, PiecewiseConstant, Sampling, StepControl};
use sdrsim::readout::{photon_budget, power_for_pairs, FlashParams};
use sdrsim::sequences::{run_sequence, InitialState, PulseSequence};
use sdrsim::spin::{pair_projectors, total_sz, DensityMatrix, Operator, SpinSystem};

fn pair_strategy() -> impl Strategy<Value = PairParams> {
    (-50.0..50.0f64, -50.0..50.0f64, -20.0..20.0f64).prop_map(|(a, b, j)| PairParams {
        detuning_a: mhz(a),
        detuning_b: mhz(b),
        exchange_j: mhz(j),
    })
}

fn drive_strategy() -> impl Strategy<Value = DriveParams> {
    (0.0..30.0f64, -360.0..360.0f64).prop_map(|(f, ph)| DriveParams::new(mhz(f), ph).unwrap())
}

/// Random mixed pair state built from a random 4x4 matrix M as M M^dag / tr.
fn state_strategy() -> impl Strategy<Value = DensityMatrix> {
    prop::collection::vec(-1.0..1.0f64, 32).prop_map(|v| {
        let m = nalgebra::DMatrix::from_fn(4, 4, |i, j| {
            num_complex::Complex64::new(v[4 * i + j], v[16 + 4 * i + j])
        });
        let rho = &m * m.adjoint();
        let tr = rho.trace().re;
        DensityMatrix::new(Operator::from_matrix(rho / num_complex::Complex64::from(tr)).unwrap())
            .unwrap()
    })
}

fn program(p: &PairParams, d: &DriveParams, t1: f64, t2: f64) -> PiecewiseConstant {
    PiecewiseConstant::new(
        0.0,
        vec![
            (t1, rotating_pair_hamiltonian(p, d)),
            (t2, rotating_pair_hamiltonian(p, &d.reversed())),
        ],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gauss_hermite_moments(n in 2usize..40) {
        let (x, w) = gauss_hermite(n);
        let sum: f64 = w.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&wi| wi > 0.0));
        let mean: f64 = x.iter().zip(&w).map(|(x, w)| x * w).sum();
        let var: f64 = x.iter().zip(&w).map(|(x, w)| x * x * w).sum();
        prop_assert!(mean.abs() < 1e-12);
        prop_assert!((var - 1.0).abs() < 1e-10);
        if n >= 3 {
            let m4: f64 = x.iter().zip(&w).map(|(x, w)| x.powi(4) * w).sum();
            prop_assert!((m4 - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ensemble_weights_and_spread(sa in 0.0..5.0f64, sb in 0.1..5.0f64, sr in 0.0..0.3f64, n in 3usize..12) {
        let spec = BroadeningSpec {
            sigma_detuning_a: mhz(sa),
            sigma_detuning_b: mhz(sb),
            sigma_rabi_rel: sr,
            n_nodes: n,
            scheme: Scheme::GaussHermite,
            seed: 0,
        };
        let m = build_ensemble(&spec).unwrap();
        let w: f64 = m.iter().map(|m| m.weight).sum();
        prop_assert!((w - 1.0).abs() < 1e-9);
        let var_b: f64 = m.iter().map(|m| m.weight * m.detuning_b * m.detuning_b).sum();
        // pruned tails cost at most a relative 1e-9 here
        prop_assert!((var_b / spec.sigma_detuning_b.powi(2) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn averaging_a_constant_returns_it(c in -10.0..10.0f64, sr in 0.0..0.4f64, n in 1usize..15) {
        let m = build_ensemble(&BroadeningSpec::rabi_only(sr, n)).unwrap();
        let avg = average_of(&m, |_| Ok(vec![c; 3])).unwrap();
        prop_assert!(avg.iter().all(|a| (a - c).abs() <= 1e-12 * c.abs().max(1.0)));
    }

    #[test]
    fn pair_hamiltonian_is_hermitian(p in pair_strategy(), d in drive_strategy()) {
        let h = rotating_pair_hamiltonian(&p, &d);
        prop_assert!(h.hermiticity_error() <= 1e-9 * h.max_abs().max(1.0));
    }

    #[test]
    fn undriven_pair_conserves_total_sz(p in pair_strategy()) {
        let h = rotating_pair_hamiltonian(&p, &DriveParams::new(0.0, 0.0).unwrap());
        let jz = total_sz(&SpinSystem::pair());
        prop_assert!(h.commutator(&jz).max_abs() <= 1e-12 * h.max_abs().max(1.0));
    }

    #[test]
    fn readout_hamiltonian_conserves_total_sz(j in 0.0..2.0e4f64, a in 1.0..200.0f64, dz in -100.0..100.0f64) {
        let s = ReadoutSpinParams {
            omega_p: mhz(9700.0 + dz),
            omega_db: mhz(9700.0),
            omega_n: mhz(60.0),
            hyperfine_a: mhz(a),
        };
        let h = readout_hamiltonian(&s, mhz(j));
        let jz = total_sz(&SpinSystem::readout());
        prop_assert!(h.commutator(&jz).max_abs() <= 1e-13 * h.max_abs());
    }

    #[test]
    fn closed_evolution_keeps_trace_and_positivity(
        p in pair_strategy(), d in drive_strategy(), rho in state_strategy(),
        t1 in 1e-9..200e-9f64, t2 in 1e-9..200e-9f64,
    ) {
        let prog = program(&p, &d, t1, t2);
        let ctrl = StepControl::with_sampling(Sampling::Interval(20e-9));
        let tr = evolve(&rho, &prog, &KsmRates::ZERO, 0.0, prog.end(), &ctrl).unwrap();
        for s in &tr.states {
            prop_assert!((s.trace() - 1.0).abs() <= 1e-9);
            prop_assert!(s.op().hermiticity_error() <= 1e-12);
            prop_assert!(s.min_eigenvalue() >= -1e-10);
        }
    }

    #[test]
    fn losses_never_raise_the_trace(
        p in pair_strategy(), d in drive_strategy(), rho in state_strategy(),
        r_s in 0.0..5e7f64, rt_frac in 0.0..1.0f64, diss in 0.0..1e6f64, deph in 0.0..1e7f64,
    ) {
        let prog = program(&p, &d, 80e-9, 120e-9);
        let rates = KsmRates { r_s, r_t: rt_frac * r_s, d: diss, g: 0.0, dephasing: deph };
        let ctrl = StepControl::with_sampling(Sampling::Interval(5e-9));
        let tr = evolve(&rho, &prog, &rates, 0.0, prog.end(), &ctrl).unwrap();
        let t = tr.series("trace").unwrap();
        prop_assert!(t.windows(2).all(|w| w[1] <= w[0] + 1e-14));
        prop_assert!(tr.states.iter().all(|s| s.min_eigenvalue() >= -1e-10));
    }

    #[test]
    fn projectors_resolve_identity(system in prop_oneof![Just(SpinSystem::pair()), Just(SpinSystem::readout())]) {
        let p = pair_projectors(&system, 0, 1).unwrap();
        let mut sum = Operator::zeros(system.dim());
        for pi in p.all() {
            prop_assert!((pi * pi).max_abs_diff(pi) <= 1e-12);
            sum = &sum + pi;
        }
        prop_assert!(sum.max_abs_diff(&Operator::identity(system.dim())) <= 1e-12);
    }

    #[test]
    fn double_phase_reversal_is_identity(
        scale in 0.5..1.5f64, f in 1.0..30.0f64, ph in 0.0..360.0f64, tau in 10e-9..300e-9f64,
    ) {
        let d = DriveParams::new(mhz(f) * scale, ph).unwrap();
        let rho0 = DensityMatrix::pure(&sdrsim::spin::pair_kets()[3]).unwrap();
        let seq = PulseSequence::phase_reversal(tau, tau, d);
        let zero = PairParams { detuning_a: 0.0, detuning_b: 0.0, exchange_j: 0.0 };
        let traj = run_sequence(
            &InitialState::Explicit(rho0.clone()),
            &seq,
            &zero,
            &KsmRates::ZERO,
            &BroadeningSpec::none(),
            &StepControl::default(),
        )
        .unwrap();
        prop_assert!(traj.final_state().op().max_abs_diff(rho0.op()) <= 1e-9);
    }

    #[test]
    fn photon_budget_inverts_power(n in 1u64..10_000, ev in 1.0..3.5f64, dur in 0.1e-9..100e-9f64, qe in 0.05..1.0f64) {
        let mut f = FlashParams { photon_energy_ev: ev, power: 1e-9, duration: dur, quantum_efficiency: qe };
        f.power = power_for_pairs(&f, n);
        prop_assert_eq!(photon_budget(&f), n);
    }

    #[test]
    fn detector_passes_dc_and_is_linear(
        rise in 1e-7..2e-5f64, a in -50.0..50.0f64, b in -50.0..50.0f64, level in -10.0..10.0f64,
    ) {
        let det = DetectorModel { rise_time: rise, sample_jitter: 0.0 };
        let n = 4000;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * 50e-9).collect();
        let flat = CurrentTrace::new(times.clone(), vec![level; n + 1], level).unwrap();
        let y = apply_detector(&flat, &det).unwrap();
        prop_assert!(y.current.iter().all(|v| (v - level).abs() <= 1e-12 * level.abs().max(1.0)));

        let x1: Vec<f64> = times.iter().map(|t| (-t / 3e-6).exp()).collect();
        let x2: Vec<f64> = times.iter().map(|t| (t / 7e-6).sin()).collect();
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(u, v)| a * u + b * v).collect();
        let f = |x: Vec<f64>| apply_detector(&CurrentTrace::new(times.clone(), x, 0.0).unwrap(), &det).unwrap().current;
        let (y1, y2, ym) = (f(x1), f(x2), f(mix));
        for k in 0..=n {
            prop_assert!((ym[k] - a * y1[k] - b * y2[k]).abs() <= 1e-11 * (a.abs() + b.abs()).max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn config_dump_is_a_fixed_point(rabi in 0.1..50.0f64, seed in 0u64..1_000_000, nodes in 1usize..40, rs in 0.0..1e8f64) {
        let text = format!(
            r#"{{"drive": {{"rabi_mhz": {rabi}}}, "run": {{"seed": {seed}}}, "broadening": {{"n_nodes": {nodes}}}, "rates": {{"r_S": {rs}}}}}"#
        );
        let once = dump_config(&parse_config(&text).unwrap());
        let twice = dump_config(&parse_config(&once).unwrap());
        prop_assert_eq!(once, twice);
    }
}

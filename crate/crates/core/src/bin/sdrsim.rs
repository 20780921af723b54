use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sdrsim::config::{dump_config, ns, parse_config, Config};
use sdrsim::error::{Error, Result};
use sdrsim::hamiltonians::instantaneous_spectrum;
use sdrsim::output::{fmt_f64, OutputDir};
use sdrsim::photocurrent::{phase_change_transients, TransientSetup};
use sdrsim::readout::{
    fidelity_from_stages, photon_budget, power_for_pairs, run_spin_stages, single_shot, NuclearBit,
};
use sdrsim::selfcheck;
use sdrsim::sequences::{echo_scan, rabi_scan, ScanAxis};

#[derive(Parser, Debug)]
#[command(
    name = "sdrsim",
    version,
    about = "Spin-dependent recombination simulator"
)]
struct Cli {
    /// JSON configuration; absent keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides run.output_dir.
    #[arg(long, global = true, env = "SDRSIM_OUT")]
    out: Option<PathBuf>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Default)]
struct ScanFlags {
    #[arg(long)]
    rabi_mhz: Option<f64>,
    #[arg(long)]
    grid_start_ns: Option<f64>,
    #[arg(long)]
    grid_end_ns: Option<f64>,
    #[arg(long)]
    grid_step_ns: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BitArg {
    Up,
    Down,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Nutation of the pair populations versus pulse length.
    Rabi(ScanFlags),
    /// Phase-reversal echo versus total sequence length.
    EchoScan {
        #[arg(long)]
        tau_180_ns: Option<f64>,
        #[command(flatten)]
        scan: ScanFlags,
    },
    /// Photocurrent transients with and without a phase change.
    Transient,
    /// Readout eigenvalues and singlet character versus exchange.
    Levels,
    /// One readout pass for a given nuclear orientation.
    Readout {
        #[arg(long, value_enum)]
        bit: BitArg,
    },
    /// Readout fidelity versus flash pair count.
    Fidelity {
        #[arg(long)]
        n_trials: Option<usize>,
    },
    /// Invariant suites.
    Selfcheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Rabi(_) => "rabi",
            Command::EchoScan { .. } => "echo-scan",
            Command::Transient => "transient",
            Command::Levels => "levels",
            Command::Readout { .. } => "readout",
            Command::Fidelity { .. } => "fidelity",
            Command::Selfcheck => "selfcheck",
        }
    }
}

fn load(cli: &Cli) -> Result<Config> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => "{}".to_string(),
    };
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.run.output_dir = out.to_string_lossy().into_owned();
    }
    let scan = |s: &ScanFlags, start: &mut f64, end: &mut f64, step: &mut f64, rabi: &mut f64| {
        if let Some(v) = s.grid_start_ns {
            *start = v;
        }
        if let Some(v) = s.grid_end_ns {
            *end = v;
        }
        if let Some(v) = s.grid_step_ns {
            *step = v;
        }
        if let Some(v) = s.rabi_mhz {
            *rabi = v;
        }
    };
    match &cli.command {
        Some(Command::Rabi(s)) => {
            let r = &mut cfg.rabi;
            scan(
                s,
                &mut r.grid_start_ns,
                &mut r.grid_end_ns,
                &mut r.grid_step_ns,
                &mut cfg.drive.rabi_mhz,
            );
        }
        Some(Command::EchoScan {
            tau_180_ns,
            scan: s,
        }) => {
            let e = &mut cfg.echo;
            scan(
                s,
                &mut e.grid_start_ns,
                &mut e.grid_end_ns,
                &mut e.grid_step_ns,
                &mut cfg.drive.rabi_mhz,
            );
            if let Some(t) = tau_180_ns {
                cfg.echo.tau_180_ns = *t;
            }
        }
        Some(Command::Fidelity { n_trials: Some(n) }) => cfg.fidelity.n_trials = *n,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cmd: &Command, cfg: &Config, out: &mut OutputDir) -> Result<()> {
    match cmd {
        Command::Rabi(_) => {
            let scan = rabi_scan(
                &cfg.rabi.initial.to_initial(),
                &cfg.rabi_grid(),
                &cfg.pair_params(),
                &cfg.rates(),
                &cfg.broadening(),
                &cfg.drive_params()?,
            )?;
            out.write_with("rabi.csv", |w| scan.write_csv(w))?;
            println!("rabi: {} points", scan.len());
        }
        Command::EchoScan { .. } => {
            let scan = echo_scan(
                &cfg.echo.initial.to_initial(),
                ns(cfg.echo.tau_180_ns),
                &cfg.echo_grid(),
                cfg.echo.axis,
                &cfg.pair_params(),
                &cfg.rates(),
                &cfg.broadening(),
                &cfg.drive_params()?,
            )?;
            out.write_with("echo.csv", |w| scan.write_csv(w))?;
            // echo window: total length within half a tau_180 of 2 tau_180
            let tau = ns(cfg.echo.tau_180_ns);
            let shift = match cfg.echo.axis {
                ScanAxis::TotalLength => tau,
                ScanAxis::SecondSegment => 0.0,
            };
            if let Some(k) = scan.argmax_tminus_in(shift + 0.5 * tau, shift + 1.5 * tau) {
                println!(
                    "echo-scan: pop_Tminus peak at {:.1} ns",
                    scan.abscissa[k] * 1e9
                );
            }
        }
        Command::Transient => {
            let t = &cfg.transient;
            let setup = TransientSetup {
                pair: cfg.pair_params(),
                drive: cfg.drive_params()?,
                rates: cfg.rates(),
                broadening: cfg.broadening(),
                model: cfg.transient_model(),
                detector: cfg.detector(),
                total: ns(t.pulse_total_ns),
                phase_change_at: ns(t.phase_change_ns),
                horizon: ns(t.horizon_ns),
                dt: ns(t.dt_ns),
                sample_time: ns(t.sample_ns),
                seed: cfg.run.seed,
            };
            let (plain, changed) = phase_change_transients(&setup)?;
            out.write_with("transient_plain.csv", |w| plain.filtered.write_csv(w))?;
            out.write_with("transient_phase_change.csv", |w| {
                changed.filtered.write_csv(w)
            })?;
            let mut summary =
                String::from("run,delta_singlet,delta_triplet,sample_us,delta_current_pA\n");
            for (name, r) in [("plain", &plain), ("phase_change", &changed)] {
                summary.push_str(&format!(
                    "{name},{},{},{},{}\n",
                    fmt_f64(r.deviation.singlet),
                    fmt_f64(r.deviation.triplet),
                    fmt_f64(t.sample_ns * 1e-3),
                    fmt_f64(r.sampled_delta * 1e12)
                ));
            }
            out.write("transient_summary.csv", summary.as_bytes())?;
            println!(
                "transient: |dI| at {} us: plain {:.4} pA, phase change {:.4} pA",
                t.sample_ns * 1e-3,
                plain.sampled_delta.abs() * 1e12,
                changed.sampled_delta.abs() * 1e12
            );
        }
        Command::Levels => {
            let diagram = instantaneous_spectrum(&cfg.readout_params().spins, &cfg.levels_grid())?;
            out.write_with("levels.csv", |w| diagram.write_csv(w))?;
            println!("levels: {} exchange values", cfg.levels.n_points);
        }
        Command::Readout { bit } => {
            let bit = match bit {
                BitArg::Up => NuclearBit::Up,
                BitArg::Down => NuclearBit::Down,
            };
            let p = cfg.readout_params();
            let shot = single_shot(&p, bit, cfg.run.seed)?;
            let d = &shot.stages.sweep.diagnostics;
            let report = serde_json::json!({
                "bit": bit,
                "initial_singlet_content": initial_singlet(&shot.stages.initial)?,
                "sweep": d,
                "diabatic_probability": d.diabatic_probability(),
                "p_charged": shot.stages.p_charged,
                "nuclear_polarization_initial": shot.stages.nuclear_polarization_initial,
                "nuclear_polarization_final": shot.stages.nuclear_polarization_final,
                "n_pairs": shot.n_pairs,
                "charged": shot.charged,
                "threshold": p.classifier.effective_threshold(),
                "bit_read": shot.bit_read,
            });
            let name = match bit {
                NuclearBit::Up => "up",
                NuclearBit::Down => "down",
            };
            let mut json = serde_json::to_string_pretty(&report)?;
            json.push('\n');
            out.write(&format!("readout_{name}.json"), json.as_bytes())?;
            out.write_with(&format!("readout_{name}_trace.csv"), |w| {
                shot.trace.write_csv(w)
            })?;
            println!(
                "readout {name}: singlet {:.6e}, p_charged {:.6e}, read {}",
                d.final_singlet_content, shot.stages.p_charged, shot.bit_read
            );
        }
        Command::Fidelity { .. } => {
            let p = cfg.readout_params();
            let up = run_spin_stages(&p, NuclearBit::Up)?;
            let down = run_spin_stages(&p, NuclearBit::Down)?;
            let mut csv = String::from(
                "n_pairs,power_nw,p_charged_up,p_charged_down,p_read1_given_up,p_read1_given_down,contrast,fidelity\n",
            );
            let mut counts = cfg.fidelity.pair_counts.clone();
            if counts.is_empty() {
                counts.push(photon_budget(&p.flash));
            }
            for n in counts {
                let mut q = p.clone();
                q.flash.power = power_for_pairs(&p.flash, n);
                let r = fidelity_from_stages(
                    &q,
                    up.p_charged,
                    down.p_charged,
                    cfg.fidelity.n_trials,
                    cfg.run.seed,
                )?;
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r.n_pairs,
                    fmt_f64(q.flash.power * 1e9),
                    fmt_f64(r.p_charged_up),
                    fmt_f64(r.p_charged_down),
                    fmt_f64(r.p_read1_given_up),
                    fmt_f64(r.p_read1_given_down),
                    fmt_f64(r.contrast),
                    fmt_f64(r.fidelity())
                ));
                println!(
                    "fidelity: {n} pairs -> contrast {:.4}, fidelity {:.4}",
                    r.contrast,
                    r.fidelity()
                );
            }
            out.write("fidelity.csv", csv.as_bytes())?;
        }
        Command::Selfcheck => {
            let results = selfcheck::run_all()?;
            let mut csv = String::from("suite,passed,worst,bound\n");
            for r in &results {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    r.name,
                    r.passed,
                    fmt_f64(r.worst),
                    fmt_f64(r.bound)
                ));
                println!(
                    "{:<26} {}  worst {:.3e}  bound {:.1e}  ({:.2} s)",
                    r.name,
                    if r.passed { "PASS" } else { "FAIL" },
                    r.worst,
                    r.bound,
                    r.seconds
                );
            }
            out.write("selfcheck.csv", csv.as_bytes())?;
            if let Some(bad) = results.iter().find(|r| !r.passed) {
                return Err(Error::SelfCheck(bad.worst));
            }
        }
    }
    Ok(())
}

fn initial_singlet(rho: &sdrsim::spin::DensityMatrix) -> Result<f64> {
    let p = sdrsim::spin::pair_projectors(&sdrsim::spin::SpinSystem::readout(), 0, 1)?;
    sdrsim::spin::expectation(rho, &p.singlet)
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) | Error::InvalidParameter { .. } | Error::DissociationInReadout(_) => {
            ExitCode::from(2)
        }
        _ => ExitCode::from(3),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    if cli.print_config {
        print!("{}", dump_config(&cfg));
        return ExitCode::SUCCESS;
    }
    let Some(cmd) = &cli.command else {
        eprintln!("no subcommand given; see --help");
        return ExitCode::from(2);
    };
    let mut out = match OutputDir::create(&cfg.run.output_dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("cannot create {}: {e}", cfg.run.output_dir);
            return ExitCode::from(3);
        }
    };
    if let Err(e) = run(cmd, &cfg, &mut out) {
        eprintln!("{} failed: {e}", cmd.name());
        return exit_code(&e);
    }
    // the output location does not change the inputs hash
    let mut canonical = cfg.clone();
    canonical.run.output_dir.clear();
    match out.finish(cmd.name(), cfg.run.seed, &dump_config(&canonical)) {
        Ok(m) => {
            println!("wrote {} files to {}", m.files.len(), cfg.run.output_dir);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("writing manifest failed: {e}");
            ExitCode::from(3)
        }
    }
}

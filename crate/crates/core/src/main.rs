use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use esta::config::RunConfig;
use esta::engine::{EstaSolution, EstaStatus};
use esta::output::{self, Manifest};
use esta::scans::{self, first_tau_above, Scheme, MARKER_FIDELITY};
use esta::schedule::ControlSchedule;
use esta::tdse::{endpoint_states, propagate, EndpointMode};
use esta::{Error, Result, TrapPotential};

#[derive(Parser)]
#[command(name = "esta", version, about = "Enhanced shortcuts to adiabaticity for trap expansion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    endpoint_mode: Option<Endpoint>,
    #[arg(long, global = true, value_enum)]
    scheme: Option<SchemeArg>,
    /// Number of correction components M
    #[arg(long, global = true)]
    components: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the corrected control schedule
    Synthesize,
    /// Propagate one schedule and report fidelity and energy
    Simulate,
    /// Fidelity against expansion time
    ScanFidelity,
    /// Amplitude-error sensitivity against expansion time
    ScanSensitivity,
    /// Fidelity along the gradient direction
    Landscape,
    /// Time-averaged energy relative to STA against expansion time
    Energy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Endpoint {
    Harmonic,
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Sta,
    Esta1,
    Esta2,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Sta => Scheme::Sta,
            SchemeArg::Esta1 => Scheme::Esta1,
            SchemeArg::Esta2 => Scheme::Esta2,
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let mut cfg = RunConfig::parse_file(path)?;
    if let Some(o) = &cli.out {
        cfg.set_out_dir(&o.to_string_lossy());
    }
    if let Some(w) = cli.workers {
        cfg.set_workers(w)?;
    }
    if let Some(e) = cli.endpoint_mode {
        cfg.set_endpoint_mode(match e {
            Endpoint::Harmonic => EndpointMode::Harmonic,
            Endpoint::Exact => EndpointMode::Exact,
        });
    }
    if let Some(s) = cli.scheme {
        cfg.set_scheme(s.into());
    }
    if let Some(m) = cli.components {
        cfg.set_components(m)?;
    }
    Ok(cfg)
}

fn record_solution(m: &mut Manifest, sol: &EstaSolution) {
    let status = match sol.status {
        EstaStatus::Ok => "ok",
        EstaStatus::NonConcave => "non-concave: esta2 fell back to esta1",
        EstaStatus::DegenerateGradient => "degenerate gradient: schedule left at STA",
    };
    m.text("esta_status", status)
        .real("f_approx", sol.f_approx)
        .real("grad_norm", sol.grad_norm())
        .real("curvature", sol.curvature)
        .real("eps1", sol.eps1)
        .real("eps2", sol.eps2)
        .reals("lambda1", &sol.lambda1)
        .reals("lambda2", &sol.lambda2)
        .int("quadrature_order", sol.convergence.quadrature_order)
        .real("quadrature_change", sol.convergence.quadrature_change)
        .int("time_nodes", sol.convergence.time_nodes)
        .real("time_change", sol.convergence.time_change);
    if sol.beyond_perturbative {
        m.text("warning", "approximate fidelity below zero: outside the perturbative regime");
    }
}

/// Corrected schedule for the configured scheme and M.
fn synthesize(cfg: &RunConfig, m: &mut Manifest) -> Result<ControlSchedule> {
    let problem = cfg.problem()?;
    let sim = cfg.simulator()?;
    let (engine, sol) = sim.solve(&problem, cfg.components())?;
    record_solution(m, &sol);
    Ok(engine.schedule().retuned(cfg.scheme().lambda(&sol)))
}

fn run(cmd: Command, cfg: &RunConfig) -> Result<bool> {
    let dir = Path::new(cfg.out_dir());
    let name = match cmd {
        Command::Synthesize => "synthesize",
        Command::Simulate => "simulate",
        Command::ScanFidelity => "scan-fidelity",
        Command::ScanSensitivity => "scan-sensitivity",
        Command::Landscape => "landscape",
        Command::Energy => "energy",
    };
    let mut m = Manifest::new(name);
    let mut complete = true;
    match cmd {
        Command::Synthesize => {
            let schedule = synthesize(cfg, &mut m)?;
            output::write_file(dir, "schedule.csv", &output::schedule_csv(&schedule, cfg.schedule_samples())?)?;
        }
        Command::Simulate => {
            let schedule = synthesize(cfg, &mut m)?;
            output::write_file(dir, "schedule.csv", &output::schedule_csv(&schedule, cfg.schedule_samples())?)?;
            let problem = cfg.problem()?;
            let sim = cfg.simulator()?;
            let trap = TrapPotential::new(problem.trap).with_amp_error(cfg.amp_error());
            let states = sim.endpoints(&problem)?;
            let out = propagate(&trap, &schedule, &states.0, &states.1, &sim.sim)?;
            output::write_file(dir, "energy.csv", &output::energy_csv(&out.energy_trace))?;
            m.real("fidelity", out.fidelity)
                .real("time_averaged_energy", out.time_averaged_energy())
                .real("norm_drift", out.norm_drift)
                .real("boundary_leak", out.boundary_leak);
            // the other endpoint convention, side by side
            let other = match sim.endpoint_mode {
                EndpointMode::Harmonic => EndpointMode::Exact,
                EndpointMode::Exact => EndpointMode::Harmonic,
            };
            let alt = endpoint_states(&TrapPotential::new(problem.trap), problem.gamma, other, sim.sim.grid)?;
            let f_alt = propagate(&trap, &schedule, &alt.0, &alt.1, &sim.sim)?.fidelity;
            m.real(&format!("fidelity_{other}"), f_alt);
        }
        Command::ScanFidelity | Command::ScanSensitivity | Command::Energy => {
            let spec = cfg.scan_spec(matches!(cmd, Command::ScanSensitivity), matches!(cmd, Command::Energy))?;
            let rows = scans::fidelity_scan(&spec, &cfg.simulator()?, cfg.workers())?;
            let file = match cmd {
                Command::ScanFidelity => "fidelity.csv",
                Command::ScanSensitivity => "sensitivity.csv",
                _ => "energy.csv",
            };
            output::write_file(dir, file, &output::scan_csv(&rows))?;
            let failed = rows.iter().filter(|r| !r.ok()).count();
            m.int("rows", rows.len()).int("failed_rows", failed);
            for &s in &spec.schemes {
                for &c in &spec.components {
                    let key = format!("first_tau_f095_{s}_m{c}");
                    match first_tau_above(&rows, s, c, MARKER_FIDELITY) {
                        Some(t) => m.real(&key, t),
                        None => m.text(&key, "none"),
                    };
                }
            }
            complete = failed == 0;
        }
        Command::Landscape => {
            let problem = cfg.problem()?;
            let l = scans::landscape_scan(&problem, cfg.components(), cfg.n_eps(), &cfg.simulator()?, cfg.workers())?;
            output::write_file(dir, "landscape.csv", &output::landscape_csv(&l))?;
            record_solution(&mut m, &l.solution);
            m.real("fidelity_sta", l.f_sta)
                .real("fidelity_eps1", l.f_eps1)
                .real("fidelity_eps2", l.f_eps2);
            if let Some(best) = l.argmax() {
                m.real("argmax_eps_over_eps2", best.eps_over_eps2);
            }
            complete = l.rows.iter().all(|r| r.f_true.is_finite());
        }
    }
    m.text("complete", if complete { "yes" } else { "no" });
    output::write_file(dir, "manifest.toml", &m.render(&cfg.emit()))?;
    Ok(complete)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(&cli).and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("esta: some scan points failed; see the status column");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("esta: {e}");
            ExitCode::FAILURE
        }
    }
}

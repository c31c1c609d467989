use clap::{Parser, Subcommand};
use lattice_gates::cli;
use lattice_gates::config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

/// Waveform synthesis for optical-lattice interferometer gates.
#[derive(Parser)]
#[command(name = "lattice-gates", version, about)]
struct Args {
    /// Key-value config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for emitted files.
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,

    /// Lattice depth V0 in recoil units.
    #[arg(long, global = true)]
    v0: Option<f64>,

    /// Momentum-basis truncation N_max.
    #[arg(long, global = true)]
    n_max: Option<usize>,

    /// Base seed for the solver's restarts.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of solver restarts.
    #[arg(long, global = true)]
    restarts: Option<usize>,

    /// Stop a solve once this re-propagated infidelity is reached.
    #[arg(long, global = true)]
    target: Option<f64>,

    /// Print solver progress.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export the Bloch band structure and wavefunctions.
    Bands,
    /// List the gate catalog.
    Catalog,
    /// Optimize (or derive) the waveform for a catalog gate.
    Optimize {
        /// Gate name, e.g. SPLIT3, Z6, RZ4@0.785, HOLD.
        gate: String,
        /// Override the tabulated gate duration (wr^-1).
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Re-propagate a waveform file against a gate target.
    Verify {
        waveform: PathBuf,
        gate: String,
    },
    /// Compose a program file into one waveform and simulate it.
    Compose {
        program: PathBuf,
        /// Sweep the PROPAGATE duration up to this value and emit fringe.tsv.
        #[arg(long)]
        sweep_propagate: Option<f64>,
        /// Number of sweep points.
        #[arg(long, default_value_t = 120)]
        sweep_points: usize,
    },
}

fn build_config(args: &Args) -> lattice_gates::Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(outdir) = &args.outdir {
        config.outdir = outdir.clone();
    }
    if let Some(v0) = args.v0 {
        config.set("v0", &v0.to_string())?;
    }
    if let Some(n_max) = args.n_max {
        config.set("n_max", &n_max.to_string())?;
    }
    if let Some(seed) = args.seed {
        config.solver.base_seed = seed;
    }
    if let Some(restarts) = args.restarts {
        config.solver.restarts = restarts;
    }
    if let Some(target) = args.target {
        config.solver.infidelity_target = target;
    }
    if args.verbose {
        config.solver.verbose = true;
    }
    config.validate()?;
    Ok(config)
}

fn run(args: &Args) -> lattice_gates::Result<ExitCode> {
    let config = build_config(args)?;
    match &args.command {
        Command::Bands => {
            cli::cmd_bands(&config)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Catalog => {
            cli::print_catalog(std::io::stdout().lock())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Optimize { gate, duration } => {
            let report = cli::cmd_optimize(&config, gate, *duration)?;
            println!(
                "{}: infidelity {:.3e} (target {:.1e}), max violation {:.3e}, {} restart(s), {:.1} s",
                report.gate,
                report.infidelity,
                config.solver.infidelity_target,
                report.max_violation,
                report.restarts.len(),
                report.wall_ms as f64 / 1e3,
            );
            if let Some(convention) = &report.time_reversal_convention {
                println!("time-reversal convention: {convention}");
            }
            println!("outputs in {}", config.outdir.display());
            if report.converged {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("warning: solver did not meet its targets; best effort emitted");
                Ok(ExitCode::from(3))
            }
        }
        Command::Verify { waveform, gate } => {
            let report = cli::cmd_verify(&config, waveform, gate)?;
            println!(
                "{}: infidelity {:.3e}, leakage {:.3e}, refine drift {:.3e}, edge population {:.3e}",
                report.gate, report.infidelity, report.leakage, report.refine_drift,
                report.edge_population
            );
            for (j, p) in report.path_populations.iter().enumerate() {
                println!("path constraint {j}: population {p:.4}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compose { program, sweep_propagate, sweep_points } => {
            cli::cmd_compose(&config, program, sweep_propagate.map(|t| (t, *sweep_points)))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            if matches!(err, lattice_gates::Error::Invalid(ref m) if m.contains("unknown gate")) {
                eprintln!("known catalog gates:");
                let _ = cli::print_catalog(std::io::stderr().lock());
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

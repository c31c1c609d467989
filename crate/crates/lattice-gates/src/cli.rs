//! Command implementations behind the binary: band export, gate
//! optimization, independent verification, program composition, catalog
//! listing. All file emission lives here.

use crate::catalog::{self, CatalogEntry, GateSpec, Provenance};
use crate::circuit::{self, CircuitProgram, Segment, WaveformLibrary};
use crate::collocation::CollocationProblem;
use crate::config::RunConfig;
use crate::lattice::BlochBasis;
use crate::objectives::{self, FidelityTerm};
use crate::propagator::{self, Initial, Waveform};
use crate::solver::{self, SolveReport};
use crate::{CMat, Error, Result};
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

fn ensure_outdir(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.outdir)?;
    Ok(())
}

fn out_path(config: &RunConfig, name: &str) -> PathBuf {
    config.outdir.join(name)
}

/// `bands`: write the Bloch-basis export and the wavefunction grids, print
/// the conduction-pair splitting diagnostics.
pub fn cmd_bands(config: &RunConfig) -> Result<()> {
    ensure_outdir(config)?;
    let basis = config.model()?.bloch_basis()?;

    let bands_path = out_path(config, "bands.tsv");
    basis.write_bands(std::io::BufWriter::new(fs::File::create(&bands_path)?))?;

    // ψ_ν(x) for ν <= 8 over two lattice periods
    let grid: Vec<f64> = (0..=512)
        .map(|i| -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / 512.0)
        .collect();
    let psi_path = out_path(config, "wavefunctions.tsv");
    let mut w = std::io::BufWriter::new(fs::File::create(&psi_path)?);
    let bands = basis.dim().min(9);
    write!(w, "# x")?;
    for nu in 0..bands {
        write!(w, "\tre_psi{nu}\tim_psi{nu}")?;
    }
    writeln!(w)?;
    let tables: Vec<Vec<crate::C64>> = (0..bands)
        .map(|nu| basis.bloch_wavefunction(nu, &grid))
        .collect::<Result<_>>()?;
    for (i, x) in grid.iter().enumerate() {
        write!(w, "{x:.17e}")?;
        for table in &tables {
            write!(w, "\t{:.17e}\t{:.17e}", table[i].re, table[i].im)?;
        }
        writeln!(w)?;
    }
    drop(w);

    println!("wrote {} and {}", bands_path.display(), psi_path.display());
    println!("bands: {} (V0 = {} wr, N_max = {})", basis.dim(), config.depth, config.n_max);
    let splittings = basis.pair_splittings();
    if !splittings.is_empty() {
        println!("conduction pair splittings:");
        for s in splittings {
            println!(
                "  E_{} - E_{} = {:.6e} wr  (gap below: {:.6e} wr)",
                s.upper, s.lower, s.splitting, s.gap_below
            );
        }
    }
    Ok(())
}

/// `catalog`: the gate table.
pub fn cmd_catalog() -> Vec<CatalogEntry> {
    catalog::catalog_entries()
}

pub fn print_catalog<W: Write>(mut w: W) -> Result<()> {
    writeln!(
        w,
        "{:<12} {:>6} {:>5}  {:<28} {:>11}  {}",
        "name", "T", "N_t", "target", "constraints", "provenance"
    )?;
    for e in cmd_catalog() {
        writeln!(
            w,
            "{:<12} {:>6.2} {:>5}  {:<28} {:>11}  {}",
            e.name, e.duration, e.n_t, e.target, e.constraints, e.provenance
        )?;
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.replace('@', "_")
}

fn waveform_path(config: &RunConfig, name: &str) -> PathBuf {
    out_path(config, &format!("{}.waveform.tsv", sanitize(name)))
}

/// Write waveform, report, per-source trajectories and spectrum for a gate.
fn save_gate_outputs(
    config: &RunConfig,
    spec: &GateSpec,
    basis: &BlochBasis,
    problem: &CollocationProblem,
    report: &SolveReport,
    waveform: &Waveform,
) -> Result<()> {
    ensure_outdir(config)?;
    let stem = sanitize(&spec.name());
    waveform.write_file(&waveform_path(config, &spec.name()))?;
    report.write_json(std::io::BufWriter::new(fs::File::create(
        out_path(config, &format!("{stem}.report.json")),
    )?))?;

    // trajectory history per propagated source state
    let sources: Vec<crate::CVec> = match &problem.loss_spec().term {
        FidelityTerm::StateTransfer { .. } => {
            vec![crate::CVec::from(problem.initial_frame().column(0))]
        }
        FidelityTerm::Unitary { subspace, .. } => {
            vec![subspace.logical_state(0), subspace.logical_state(1)]
        }
        FidelityTerm::SubspaceTransfer { source, .. } => {
            vec![source.logical_state(0), source.logical_state(1)]
        }
    };
    for (k, source) in sources.iter().enumerate() {
        let traj = propagator::propagate(basis.model(), waveform, Initial::State(source.clone()))?;
        let path = out_path(config, &format!("{stem}.trajectory{k}.tsv"));
        traj.write_bloch_history(basis, config.nu_show, std::io::BufWriter::new(fs::File::create(path)?))?;
    }

    let spectrum = objectives::fourier_spectrum(waveform);
    objectives::write_spectrum(
        &spectrum,
        std::io::BufWriter::new(fs::File::create(out_path(config, &format!("{stem}.spectrum.tsv")))?),
    )?;
    Ok(())
}

/// `optimize <GATE>`: build the problem, solve, verify, export. Derived
/// gates (RECOMBINE/SLOW/RELEASE) are produced by time-reversing their
/// source, solving it first when its waveform is not already on disk.
pub fn cmd_optimize(
    config: &RunConfig,
    gate_name: &str,
    duration_override: Option<f64>,
) -> Result<SolveReport> {
    let kind = catalog::GateKind::parse(gate_name)?;
    let spec = match duration_override {
        Some(t) => GateSpec::with_duration(kind, t)?,
        None => GateSpec::from_kind(kind)?,
    };
    let basis = config.model()?.bloch_basis()?;
    ensure_outdir(config)?;

    match spec.provenance.clone() {
        Provenance::Analytic => Err(Error::invalid(
            "PROPAGATE is analytic; compose it into a program instead of optimizing it",
        )),
        Provenance::Optimized => {
            let problem = spec.build_problem(&basis, config.penalty_weight, config.cutoff)?;
            let (report, waveform) = solver::solve_with_waveform(&problem, &config.solver)?;
            save_gate_outputs(config, &spec, &basis, &problem, &report, &waveform)?;
            Ok(report)
        }
        Provenance::TimeReversedFrom(source_name) => {
            let source_spec = GateSpec::with_duration(
                spec.kind.reversal_source().expect("derived gates have sources"),
                spec.duration,
            )?;
            // reuse the source waveform when present, otherwise solve it
            let source_file = waveform_path(config, &source_name);
            let (source_wave, source_report) = if source_file.exists() {
                (Waveform::read_file(&source_file)?, None)
            } else {
                let problem = source_spec.build_problem(&basis, config.penalty_weight, config.cutoff)?;
                let (report, wave) = solver::solve_with_waveform(&problem, &config.solver)?;
                save_gate_outputs(config, &source_spec, &basis, &problem, &report, &wave)?;
                (wave, Some(report))
            };
            let derived = catalog::derive_inverse(
                &basis,
                &source_spec,
                &source_wave,
                config.penalty_weight,
                config.cutoff,
            )?;
            let problem = spec.build_problem(&basis, config.penalty_weight, config.cutoff)?;
            let refine = propagator::refine_check(basis.model(), &derived.waveform, 4)?;
            let quality = solver::assess_waveform(&problem, &derived.waveform)?;
            let report = SolveReport {
                gate: spec.name(),
                method: format!("time reversal of {source_name}"),
                infidelity: quality.infidelity,
                internal_loss: f64::NAN,
                penalty_term: f64::NAN,
                max_violation: 0.0,
                feasible: true,
                converged: true,
                duration: spec.duration,
                n_t: spec.n_t,
                dt: derived.waveform.dt(),
                penalty_weight: config.penalty_weight,
                cutoff: config.cutoff,
                best_seed: source_report.as_ref().map(|r| r.best_seed).unwrap_or(0),
                restarts: source_report.map(|r| r.restarts).unwrap_or_default(),
                edge_population: quality.edge_population,
                path_populations: quality.path_populations,
                refine_drift: refine.fidelity_change,
                time_reversal_convention: Some(derived.convention.clone()),
                wall_ms: 0,
            };
            save_gate_outputs(config, &spec, &basis, &problem, &report, &derived.waveform)?;
            Ok(report)
        }
    }
}

/// Independent verification summary for a waveform file.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub gate: String,
    pub waveform_file: String,
    pub infidelity: f64,
    /// Population left outside the target subspace.
    pub leakage: f64,
    pub edge_population: f64,
    pub path_populations: Vec<f64>,
    pub refine_drift: f64,
    pub duration: f64,
    pub samples: usize,
}

/// `verify <FILE> <GATE>`: re-propagate a waveform from scratch against a
/// gate target.
pub fn cmd_verify(config: &RunConfig, waveform_file: &Path, gate_name: &str) -> Result<VerifyReport> {
    let waveform = Waveform::read_file(waveform_file)?;
    let kind = catalog::GateKind::parse(gate_name)?;
    let spec = GateSpec::with_duration(kind, waveform.duration())?;
    let basis = config.model()?.bloch_basis()?;
    let problem = spec.build_problem(&basis, config.penalty_weight, config.cutoff)?;

    let quality = solver::assess_waveform(&problem, &waveform)?;
    let refine = propagator::refine_check(basis.model(), &waveform, 4)?;

    // leakage: population that ends outside the target subspace
    let final_u = propagator::waveform_unitary(basis.model(), &waveform)?;
    let leakage = match &problem.loss_spec().term {
        FidelityTerm::StateTransfer { goal } => {
            let psi = &final_u * problem.initial_frame().column(0).clone_owned();
            1.0 - (goal.adjoint() * psi)[(0, 0)].norm_sqr()
        }
        FidelityTerm::Unitary { subspace, .. } => {
            let finals = [
                &final_u * subspace.logical_state(0),
                &final_u * subspace.logical_state(1),
            ];
            objectives::subspace_infidelity(&finals, subspace)
        }
        FidelityTerm::SubspaceTransfer { source, target } => {
            let finals = [&final_u * source.logical_state(0), &final_u * source.logical_state(1)];
            objectives::subspace_infidelity(&finals, target)
        }
    };

    let report = VerifyReport {
        gate: spec.name(),
        waveform_file: waveform_file.display().to_string(),
        infidelity: quality.infidelity,
        leakage,
        edge_population: quality.edge_population,
        path_populations: quality.path_populations,
        refine_drift: refine.fidelity_change,
        duration: waveform.duration(),
        samples: waveform.phases().len(),
    };
    ensure_outdir(config)?;
    let stem = sanitize(&spec.name());
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::numerical(format!("report serialization failed: {e}")))?;
    fs::write(out_path(config, &format!("{stem}.verify.json")), text)?;
    Ok(report)
}

/// Load the waveforms a program needs from the output directory, deriving
/// time-reversed gates from their solved sources where possible.
pub fn load_library(
    config: &RunConfig,
    program: &CircuitProgram,
    basis: &BlochBasis,
) -> Result<WaveformLibrary> {
    let mut library = WaveformLibrary::new();
    for segment in &program.segments {
        let Segment::Gate(spec) = segment else { continue };
        let name = spec.name();
        if library.get(&name).is_some() {
            continue;
        }
        let file = waveform_path(config, &name);
        if file.exists() {
            library.register(name, Waveform::read_file(&file)?);
            continue;
        }
        if let Provenance::TimeReversedFrom(source_name) = &spec.provenance {
            let source_file = waveform_path(config, source_name);
            if source_file.exists() {
                let source_spec = GateSpec::with_duration(
                    spec.kind.reversal_source().expect("derived gates have sources"),
                    spec.duration,
                )?;
                let source_wave = Waveform::read_file(&source_file)?;
                let derived = catalog::derive_inverse(
                    &basis.clone(),
                    &source_spec,
                    &source_wave,
                    config.penalty_weight,
                    config.cutoff,
                )?;
                library.register(name, derived.waveform);
                continue;
            }
        }
        return Err(Error::invalid(format!(
            "no waveform for {name} in {} (run `optimize {name}` first)",
            config.outdir.display()
        )));
    }
    Ok(library)
}

/// `compose <PROGRAM>`: concatenate a program, simulate it, export history
/// and readout; optionally sweep the PROPAGATE duration for a fringe.
pub fn cmd_compose(
    config: &RunConfig,
    program_file: &Path,
    sweep: Option<(f64, usize)>,
) -> Result<()> {
    let text = fs::read_to_string(program_file)?;
    let program = CircuitProgram::parse(&text, &program_file.display().to_string())?;
    let basis = config.model()?.bloch_basis()?;
    ensure_outdir(config)?;

    if program.segments.is_empty() {
        eprintln!("warning: empty program, nothing to compose");
        return Ok(());
    }

    let library = load_library(config, &program, &basis)?;
    let run = circuit::simulate_program(&basis, &program, &library)?;

    run.waveform.write_file(&out_path(config, "composed.waveform.tsv"))?;
    run.trajectory.write_bloch_history(
        &basis,
        config.nu_show,
        std::io::BufWriter::new(fs::File::create(out_path(config, "composed.history.tsv"))?),
    )?;
    let mut w = std::io::BufWriter::new(fs::File::create(out_path(config, "composed.momentum.tsv"))?);
    writeln!(w, "# n\tpopulation")?;
    for (i, p) in run.momentum_populations.iter().enumerate() {
        writeln!(w, "{}\t{:.17e}", basis.model().momentum_of_index(i), p)?;
    }
    drop(w);
    println!(
        "composed {} segments, duration {:.4} wr^-1, {} samples",
        program.segments.len(),
        run.waveform.duration(),
        run.waveform.phases().len()
    );

    if let Some((tau_max, points)) = sweep {
        let durations: Vec<f64> =
            (0..points).map(|k| tau_max * (k + 1) as f64 / points as f64).collect();
        let fringe = circuit::sweep_propagate(&basis, &program, &library, &durations, 0)?;
        let mut w = std::io::BufWriter::new(fs::File::create(out_path(config, "fringe.tsv"))?);
        writeln!(w, "# tau\tp0")?;
        for (tau, p0) in &fringe {
            writeln!(w, "{tau:.17e}\t{p0:.17e}")?;
        }
        drop(w);
        println!("swept PROPAGATE over {points} points up to {tau_max} wr^-1 -> fringe.tsv");
    }
    Ok(())
}

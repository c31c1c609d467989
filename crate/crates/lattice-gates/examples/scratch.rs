use lattice_gates::catalog::GateSpec;
use lattice_gates::lattice::LatticeModel;
use lattice_gates::solver::{solve_with_waveform, SolverOptions};
use std::time::Instant;

fn main() {
    let gate = std::env::args().nth(1).unwrap_or_else(|| "SPLIT3".to_string());
    let restarts: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let target: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let m = LatticeModel::at_rest(10.0, 10).unwrap();
    let basis = m.bloch_basis().unwrap();
    let spec = GateSpec::parse(&gate).unwrap();
    let problem = spec.build_problem(&basis, 100.0, 70.0).unwrap();
    let options = SolverOptions { restarts, infidelity_target: target, verbose: true, ..Default::default() };
    let t0 = Instant::now();
    let (report, w) = solve_with_waveform(&problem, &options).unwrap();
    println!(
        "{gate}: feasible={} converged={} infid={:.3e} viol={:.3e} restarts_used={} wall={:.1?}",
        report.feasible, report.converged, report.infidelity, report.max_violation,
        report.restarts.len(), t0.elapsed()
    );
    println!("refine drift {:.3e}, edge pop {:.3e}, paths {:?}", report.refine_drift, report.edge_population, report.path_populations);
    for r in &report.restarts {
        println!("  seed {}: outer {} inner {} loss {:.3e} viol {:.3e} infid {:.3e} [{} ms]",
            r.seed, r.outer_iterations, r.inner_iterations, r.final_loss, r.final_violation, r.infidelity, r.wall_ms);
    }
    let max_phi = w.phases().iter().fold(0.0f64, |a, &p| a.max(p.abs()));
    println!("max |phi| = {max_phi:.3}");
}

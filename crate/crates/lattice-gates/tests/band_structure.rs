//! Band-structure checks against an independent eigenvalue oracle.

mod common;

use lattice_gates::lattice::LatticeModel;

/// E_0..E_6 at V0 = 10 ω_r, computed once with the cyclic-Jacobi oracle on an
/// N_max = 32 basis and frozen here.
const ORACLE_ENERGIES_V10: [f64; 7] = [
    -2.153078342041736e0,
    3.492474366738962e0,
    5.613041084867167e0,
    1.619483734691597e1,
    1.622731618736074e1,
    3.608943687970967e1,
    3.608946965587397e1,
];

#[test]
fn default_basis_matches_frozen_oracle_values() {
    let basis = LatticeModel::at_rest(10.0, 10).unwrap().bloch_basis().unwrap();
    for (nu, &expect) in ORACLE_ENERGIES_V10.iter().enumerate() {
        let rel = (basis.energy(nu) - expect).abs() / expect.abs();
        assert!(rel < 1e-8, "E_{nu}: got {}, oracle {expect}, rel {rel:e}", basis.energy(nu));
    }
}

#[test]
fn live_oracle_agrees_at_wide_truncation() {
    let wide = LatticeModel::at_rest(10.0, 32).unwrap();
    let oracle = common::jacobi_eigenvalues(&wide.build_hamiltonian(0.0));
    let basis = LatticeModel::at_rest(10.0, 10).unwrap().bloch_basis().unwrap();
    for nu in 0..=8 {
        let rel = (basis.energy(nu) - oracle[nu]).abs() / oracle[nu].abs();
        assert!(rel < 1e-8, "E_{nu} rel {rel:e}");
    }
}

#[test]
fn oracle_handles_complex_phases_too() {
    // cross-check the oracle itself on a genuinely complex Hermitian matrix:
    // the spectrum of H(φ) is φ-independent (H(φ) = e^{iφn̂} H(0) e^{-iφn̂})
    let m = LatticeModel::at_rest(10.0, 6).unwrap();
    let at_zero = common::jacobi_eigenvalues(&m.build_hamiltonian(0.0));
    let at_phi = common::jacobi_eigenvalues(&m.build_hamiltonian(1.1));
    for (a, b) in at_zero.iter().zip(&at_phi) {
        assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
    }
}

#[test]
fn doubling_truncation_leaves_low_bands_unchanged() {
    let narrow = LatticeModel::at_rest(10.0, 10).unwrap().bloch_basis().unwrap();
    let wide = LatticeModel::at_rest(10.0, 20).unwrap().bloch_basis().unwrap();
    for nu in 0..=8 {
        let rel = (narrow.energy(nu) - wide.energy(nu)).abs() / wide.energy(nu).abs();
        assert!(rel < 1e-10, "band {nu} truncation drift {rel:e}");
    }
}

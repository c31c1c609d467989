//! Momentum-space model of the shaken optical lattice and its Bloch
//! eigenstructure.
//!
//! The basis is the truncated ladder of discrete momentum states `|2n·k_L⟩`
//! with `n ∈ {-N_max, …, +N_max}` (dimension `D = 2·N_max + 1`). In recoil
//! units the Hamiltonian at lattice phase φ is
//!
//! ```text
//! H(φ)/ω_r = 4(n̂ + q̃/2)² - (V0/4)·(e^{iφ} b₋ + e^{-iφ} b₊)
//! ```
//!
//! where `b±` shift `n → n ± 1` (amplitudes pushed past ±N_max are dropped,
//! which keeps the truncated matrix exactly Hermitian).

use crate::linalg::{self, HermitianEigen};
use crate::{C64, CMat, CVec, Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Parity of a Bloch state under `n → -n` (defined only at q̃ = 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
    Undefined,
}

impl std::fmt::Display for Parity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Parity::Even => write!(f, "even"),
            Parity::Odd => write!(f, "odd"),
            Parity::Undefined => write!(f, "undefined"),
        }
    }
}

/// Static parameters of the lattice: depth, basis truncation, quasimomentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeModel {
    depth: f64,
    n_max: usize,
    quasimomentum: f64,
}

impl LatticeModel {
    /// `depth` is V0 in recoil units, `n_max` the basis truncation and
    /// `quasimomentum` the dimensionless q/k_L in [-1, 1].
    pub fn new(depth: f64, n_max: usize, quasimomentum: f64) -> Result<Self> {
        if !depth.is_finite() || depth < 0.0 {
            return Err(Error::invalid(format!("lattice depth must be >= 0, got {depth}")));
        }
        if !(-1.0..=1.0).contains(&quasimomentum) {
            return Err(Error::invalid(format!(
                "quasimomentum must lie in [-1, 1], got {quasimomentum}"
            )));
        }
        Ok(Self { depth, n_max, quasimomentum })
    }

    /// Depth V0 at q̃ = 0, the configuration used for all gate design.
    pub fn at_rest(depth: f64, n_max: usize) -> Result<Self> {
        Self::new(depth, n_max, 0.0)
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn quasimomentum(&self) -> f64 {
        self.quasimomentum
    }

    /// Basis dimension D = 2·N_max + 1 (always odd).
    pub fn dim(&self) -> usize {
        2 * self.n_max + 1
    }

    /// Momentum quantum number of basis index `i`.
    pub fn momentum_of_index(&self, i: usize) -> i64 {
        i as i64 - self.n_max as i64
    }

    /// Basis index of momentum quantum number `n`, if inside the truncation.
    pub fn index_of_momentum(&self, n: i64) -> Option<usize> {
        let shifted = n + self.n_max as i64;
        (0..self.dim() as i64).contains(&shifted).then_some(shifted as usize)
    }

    /// Kinetic (drift) part: diag 4(n + q̃/2)².
    pub fn drift(&self) -> CMat {
        let dim = self.dim();
        let mut h = CMat::zeros(dim, dim);
        for i in 0..dim {
            let n = self.momentum_of_index(i) as f64;
            let k = n + 0.5 * self.quasimomentum;
            h[(i, i)] = C64::new(4.0 * k * k, 0.0);
        }
        h
    }

    /// Drive coupling to the cosine quadrature: -(V0/4)(b₋ + b₊).
    pub fn drive_cos(&self) -> CMat {
        let dim = self.dim();
        let mut h = CMat::zeros(dim, dim);
        let amp = C64::new(-self.depth / 4.0, 0.0);
        for i in 0..dim.saturating_sub(1) {
            h[(i + 1, i)] = amp;
            h[(i, i + 1)] = amp;
        }
        h
    }

    /// Drive coupling to the sine quadrature: -(V0/4)·i(b₋ - b₊).
    pub fn drive_sin(&self) -> CMat {
        let dim = self.dim();
        let mut h = CMat::zeros(dim, dim);
        let amp = C64::new(0.0, self.depth / 4.0);
        for i in 0..dim.saturating_sub(1) {
            h[(i + 1, i)] = amp;
            h[(i, i + 1)] = -amp;
        }
        h
    }

    /// Hamiltonian for explicit quadrature controls (I, Q). Hermitian for any
    /// real pair, on or off the unit circle.
    pub fn hamiltonian_quadrature(&self, i_ctrl: f64, q_ctrl: f64) -> CMat {
        let dim = self.dim();
        let mut h = self.drift();
        let lower = C64::new(-self.depth / 4.0 * i_ctrl, self.depth / 4.0 * q_ctrl);
        for i in 0..dim.saturating_sub(1) {
            h[(i + 1, i)] = lower;
            h[(i, i + 1)] = lower.conj();
        }
        h
    }

    /// Hamiltonian at lattice phase φ: off-diagonal entries -(V0/4)e^{∓iφ}.
    pub fn build_hamiltonian(&self, phase: f64) -> CMat {
        self.hamiltonian_quadrature(phase.cos(), phase.sin())
    }

    /// Bloch eigenbasis of the static (φ = 0) lattice.
    pub fn bloch_basis(&self) -> Result<BlochBasis> {
        if self.quasimomentum == 0.0 {
            self.bloch_basis_parity_sectors()
        } else {
            self.bloch_basis_dense()
        }
    }

    /// At q̃ = 0 the static Hamiltonian commutes with n → -n exactly, so the
    /// eigenproblem splits into even and odd sectors. Solving the two real
    /// tridiagonal blocks separately yields exact parity labels and keeps
    /// near-degenerate conduction pairs from mixing numerically.
    fn bloch_basis_parity_sectors(&self) -> Result<BlochBasis> {
        let n_max = self.n_max;
        let dim = self.dim();
        let v = self.depth / 4.0;

        // Even sector basis: |0⟩, (|k⟩+|-k⟩)/√2 for k = 1..N_max.
        let mut even = DMatrix::<f64>::zeros(n_max + 1, n_max + 1);
        for k in 0..=n_max {
            even[(k, k)] = 4.0 * (k * k) as f64;
        }
        if n_max >= 1 {
            even[(1, 0)] = -v * std::f64::consts::SQRT_2;
            even[(0, 1)] = even[(1, 0)];
        }
        for k in 1..n_max {
            even[(k + 1, k)] = -v;
            even[(k, k + 1)] = -v;
        }

        // Odd sector basis: (|k⟩-|-k⟩)/√2 for k = 1..N_max.
        let mut odd = DMatrix::<f64>::zeros(n_max, n_max);
        for k in 1..=n_max {
            odd[(k - 1, k - 1)] = 4.0 * (k * k) as f64;
        }
        for k in 1..n_max {
            odd[(k, k - 1)] = -v;
            odd[(k - 1, k)] = -v;
        }

        let even_eig = even
            .try_symmetric_eigen(f64::EPSILON, 10_000)
            .ok_or_else(|| Error::numerical("even-sector eigensolver did not converge"))?;
        let odd_eig = odd
            .try_symmetric_eigen(f64::EPSILON, 10_000)
            .ok_or_else(|| Error::numerical("odd-sector eigensolver did not converge"))?;

        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let mut even_states: Vec<(f64, CVec)> = (0..=n_max)
            .map(|col| {
                let mut full = CVec::zeros(dim);
                for k in 0..=n_max {
                    let amp = even_eig.eigenvectors[(k, col)];
                    if k == 0 {
                        full[n_max] = C64::new(amp, 0.0);
                    } else {
                        full[n_max + k] = C64::new(amp * inv_sqrt2, 0.0);
                        full[n_max - k] = C64::new(amp * inv_sqrt2, 0.0);
                    }
                }
                (even_eig.eigenvalues[col], full)
            })
            .collect();
        let mut odd_states: Vec<(f64, CVec)> = (0..n_max)
            .map(|col| {
                let mut full = CVec::zeros(dim);
                for k in 1..=n_max {
                    let amp = odd_eig.eigenvectors[(k - 1, col)];
                    full[n_max + k] = C64::new(amp * inv_sqrt2, 0.0);
                    full[n_max - k] = C64::new(-amp * inv_sqrt2, 0.0);
                }
                (odd_eig.eigenvalues[col], full)
            })
            .collect();
        even_states.sort_by(|a, b| a.0.total_cmp(&b.0));
        odd_states.sort_by(|a, b| a.0.total_cmp(&b.0));

        // The exact q̃ = 0 spectrum interleaves the sectors as
        // even, (odd, even), (odd, even), ... (oscillation theorem for the
        // periodic Sturm-Liouville problem). Interleaving by construction
        // keeps alternation intact even where a conduction-pair splitting
        // underflows f64 and an energy sort would order the pair arbitrarily.
        let mut states: Vec<(f64, Parity, CVec)> = Vec::with_capacity(dim);
        let mut even_iter = even_states.into_iter();
        let (e0, v0) = even_iter.next().expect("even sector is never empty");
        states.push((e0, Parity::Even, v0));
        for (o, e) in odd_states.into_iter().zip(even_iter) {
            states.push((o.0, Parity::Odd, o.1));
            states.push((e.0, Parity::Even, e.1));
        }

        let energies = DVector::from_iterator(dim, states.iter().map(|s| s.0));
        let parities: Vec<Parity> = states.iter().map(|s| s.1).collect();
        let mut coefficients = CMat::zeros(dim, dim);
        for (col, (_, _, vec)) in states.iter().enumerate() {
            coefficients.set_column(col, vec);
        }
        fix_phases(&mut coefficients);
        Ok(BlochBasis { model: *self, energies, coefficients, parities })
    }

    fn bloch_basis_dense(&self) -> Result<BlochBasis> {
        let h = self.build_hamiltonian(0.0);
        let HermitianEigen { values, mut vectors } = linalg::hermitian_eigen(&h)?;
        fix_phases(&mut vectors);
        let parities = vec![Parity::Undefined; self.dim()];
        Ok(BlochBasis { model: *self, energies: values, coefficients: vectors, parities })
    }
}

/// Rotate each column so its largest-magnitude coefficient is real positive.
/// Ties in magnitude are resolved toward the largest momentum index, which
/// orients odd-parity states so that (|ν⟩_B + |ν-1⟩_B)/√2 leans on +n.
fn fix_phases(coefficients: &mut CMat) {
    let (rows, cols) = coefficients.shape();
    for col in 0..cols {
        let mut best_row = rows - 1;
        let mut best_mag = 0.0f64;
        for row in (0..rows).rev() {
            let mag = coefficients[(row, col)].norm();
            if mag > best_mag {
                best_mag = mag;
                best_row = row;
            }
        }
        if best_mag == 0.0 {
            continue;
        }
        let pivot = coefficients[(best_row, col)];
        let rotation = (pivot / C64::new(pivot.norm(), 0.0)).conj();
        for row in 0..rows {
            coefficients[(row, col)] *= rotation;
        }
        // pin the pivot exactly real
        coefficients[(best_row, col)] = C64::new(coefficients[(best_row, col)].re, 0.0);
    }
}

/// Bloch eigenbasis of the static lattice: energies (ascending), momentum
/// space coefficients (one column per band) and parity labels.
#[derive(Debug, Clone)]
pub struct BlochBasis {
    model: LatticeModel,
    energies: DVector<f64>,
    coefficients: CMat,
    parities: Vec<Parity>,
}

/// Splitting diagnostics for one nearly degenerate conduction pair.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PairSplitting {
    /// Odd-parity (lower) member index ν-1.
    pub lower: usize,
    /// Even-parity (upper) member index ν.
    pub upper: usize,
    /// E_ν - E_{ν-1}.
    pub splitting: f64,
    /// Gap E_{ν-1} - E_{ν-2} to the band below the pair.
    pub gap_below: f64,
}

impl BlochBasis {
    pub fn model(&self) -> &LatticeModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    pub fn energy(&self, band: usize) -> f64 {
        self.energies[band]
    }

    pub fn coefficients(&self) -> &CMat {
        &self.coefficients
    }

    pub fn parities(&self) -> &[Parity] {
        &self.parities
    }

    pub fn parity(&self, band: usize) -> Parity {
        self.parities[band]
    }

    /// Momentum-space coefficients of Bloch state |ν⟩_B.
    pub fn state(&self, band: usize) -> CVec {
        CVec::from(self.coefficients.column(band))
    }

    /// Two-band qubit subspace spanned by (|ν⟩_B, |ν-1⟩_B). The isometry
    /// sends the even-parity member to logical |0⟩ and the odd-parity member
    /// to logical |1⟩; for ν = 1 this reduces to |0⟩_B → |0⟩, |1⟩_B → |1⟩.
    pub fn qubit_subspace(&self, band: usize) -> Result<QubitSubspace> {
        if band < 1 || band >= self.dim() {
            return Err(Error::invalid(format!(
                "qubit subspace index must satisfy 1 <= nu <= {}, got {band}",
                self.dim() - 1
            )));
        }
        let (pa, pb) = (self.parity(band), self.parity(band - 1));
        let (even_band, odd_band) = match (pa, pb) {
            (Parity::Even, Parity::Odd) => (band, band - 1),
            (Parity::Odd, Parity::Even) => (band - 1, band),
            _ => {
                return Err(Error::invalid(format!(
                    "bands {} and {} do not form an opposite-parity pair ({pa}/{pb})",
                    band - 1,
                    band
                )))
            }
        };
        let even = self.state(even_band);
        let odd = self.state(odd_band);
        let projector = &even * even.adjoint() + &odd * odd.adjoint();
        let mut isometry = CMat::zeros(2, self.dim());
        isometry.row_mut(0).copy_from(&even.adjoint());
        isometry.row_mut(1).copy_from(&odd.adjoint());
        Ok(QubitSubspace { index: band, projector, isometry })
    }

    /// Sum/difference combinations (|ν⟩_B ± |ν-1⟩_B)/√2 of a conduction pair,
    /// which approximate the momentum eigenstates |±ν·k_L⟩.
    pub fn momentum_pair_states(&self, band: usize) -> Result<(CVec, CVec)> {
        if band % 2 != 0 || band < 4 || band >= self.dim() {
            return Err(Error::invalid(format!(
                "momentum pair states need an even band index >= 4 inside the basis, got {band}"
            )));
        }
        let upper = self.state(band);
        let lower = self.state(band - 1);
        let plus = linalg::normalize(&(&upper + &lower));
        let minus = linalg::normalize(&(&upper - &lower));
        Ok((plus, minus))
    }

    /// Position-space wavefunction ψ_ν(x) = Σ_n c_{ν,n} e^{i2nx} on a grid of
    /// positions in units 1/k_L (q̃ = 0 form; used for band-diagram output).
    pub fn bloch_wavefunction(&self, band: usize, x_grid: &[f64]) -> Result<Vec<C64>> {
        if band >= self.dim() {
            return Err(Error::invalid(format!("band {band} outside basis of {}", self.dim())));
        }
        Ok(self.wavefunction_of(&self.state(band), x_grid))
    }

    /// Position-space wavefunction of an arbitrary momentum-coefficient
    /// vector on this basis' truncation.
    pub fn wavefunction_of(&self, coefficients: &CVec, x_grid: &[f64]) -> Vec<C64> {
        x_grid
            .iter()
            .map(|&x| {
                coefficients
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let n = self.model.momentum_of_index(i) as f64;
                        c * C64::from_polar(1.0, 2.0 * n * x)
                    })
                    .sum()
            })
            .collect()
    }

    /// Splittings of the nearly degenerate conduction pairs (even ν >= 4),
    /// exposed as a diagnostic rather than a thresholded judgement.
    pub fn pair_splittings(&self) -> Vec<PairSplitting> {
        let mut out = Vec::new();
        let mut band = 4;
        while band < self.dim() {
            out.push(PairSplitting {
                lower: band - 1,
                upper: band,
                splitting: self.energy(band) - self.energy(band - 1),
                gap_below: self.energy(band - 1) - self.energy(band - 2),
            });
            band += 2;
        }
        out
    }

    /// Band export: one row per band with `ν  E_ν  parity` followed by the D
    /// momentum-space coefficients as interleaved real/imaginary columns.
    pub fn write_bands<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# nu\tenergy_wr\tparity\tcoefficients (re, im) for n = -{}..{}",
            self.model.n_max(), self.model.n_max())?;
        for band in 0..self.dim() {
            write!(w, "{}\t{:.17e}\t{}", band, self.energy(band), self.parity(band))?;
            for i in 0..self.dim() {
                let c = self.coefficients[(i, band)];
                write!(w, "\t{:.17e}\t{:.17e}", c.re, c.im)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Projector Π_ν onto a two-band subspace plus the logical isometry P_ν.
#[derive(Debug, Clone)]
pub struct QubitSubspace {
    index: usize,
    projector: CMat,
    isometry: CMat,
}

impl QubitSubspace {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn projector(&self) -> &CMat {
        &self.projector
    }

    /// 2×D isometry: row 0 = ⟨logical 0|, row 1 = ⟨logical 1|.
    pub fn isometry(&self) -> &CMat {
        &self.isometry
    }

    /// Physical D-vector of logical basis state `k` (0 or 1).
    pub fn logical_state(&self, k: usize) -> CVec {
        CVec::from(self.isometry.row(k).adjoint())
    }

    /// Project a D×D operator onto the logical 2×2 block: P X P†.
    pub fn logical_block(&self, operator: &CMat) -> CMat {
        &self.isometry * operator * self.isometry.adjoint()
    }

    /// Population of a state inside the subspace, ⟨ψ|Π|ψ⟩.
    pub fn population(&self, state: &CVec) -> f64 {
        (state.adjoint() * &self.projector * state)[(0, 0)].re
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(v0: f64, n_max: usize) -> LatticeModel {
        LatticeModel::at_rest(v0, n_max).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(LatticeModel::new(-1.0, 5, 0.0).is_err());
        assert!(LatticeModel::new(10.0, 5, 1.5).is_err());
        assert!(LatticeModel::new(f64::NAN, 5, 0.0).is_err());
    }

    #[test]
    fn free_particle_hamiltonian_is_kinetic_diagonal() {
        let h = model(0.0, 2).build_hamiltonian(0.0);
        let expect = [16.0, 4.0, 0.0, 4.0, 16.0];
        for (i, &e) in expect.iter().enumerate() {
            assert_eq!(h[(i, i)], C64::new(e, 0.0));
            for j in 0..5 {
                if i != j {
                    assert_eq!(h[(i, j)], C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn coupling_strength_is_quarter_depth() {
        let h = model(10.0, 4).build_hamiltonian(0.0);
        for i in 0..8 {
            assert_eq!(h[(i + 1, i)], C64::new(-2.5, 0.0));
            assert_eq!(h[(i, i + 1)], C64::new(-2.5, 0.0));
        }
    }

    #[test]
    fn quarter_turn_phase_gives_imaginary_couplings() {
        let h = model(10.0, 3).build_hamiltonian(std::f64::consts::FRAC_PI_2);
        for i in 0..6 {
            // sub-diagonal -(V0/4)e^{-iπ/2} = +2.5i, super-diagonal -2.5i
            assert!((h[(i + 1, i)] - C64::new(0.0, 2.5)).norm() < 1e-15);
            assert!((h[(i, i + 1)] - C64::new(0.0, -2.5)).norm() < 1e-15);
        }
    }

    #[test]
    fn hamiltonian_is_exactly_hermitian() {
        let m = model(10.0, 6);
        for phase in [0.0, 0.3, -2.9, std::f64::consts::PI] {
            let h = m.build_hamiltonian(phase);
            let defect = (&h - h.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert_eq!(defect, 0.0);
        }
    }

    #[test]
    fn quadrature_form_matches_phase_form() {
        let m = model(10.0, 5);
        let phase = 1.234;
        let a = m.build_hamiltonian(phase);
        let b = m.hamiltonian_quadrature(phase.cos(), phase.sin());
        assert_eq!(a, b);
    }

    #[test]
    fn quasimomentum_shifts_the_diagonal() {
        let m = LatticeModel::new(10.0, 2, 0.5).unwrap();
        let h = m.build_hamiltonian(0.0);
        // n = 0 entry: 4(0 + 0.25)² = 0.25
        assert!((h[(2, 2)].re - 0.25).abs() < 1e-15);
    }

    #[test]
    fn free_particle_energies_are_doublets() {
        let basis = model(0.0, 4).bloch_basis().unwrap();
        let expect = [0.0, 4.0, 4.0, 16.0, 16.0, 36.0, 36.0, 64.0, 64.0];
        for (i, &e) in expect.iter().enumerate() {
            assert!((basis.energy(i) - e).abs() < 1e-12, "band {i}");
        }
    }

    #[test]
    fn parity_alternates_at_rest() {
        let basis = model(10.0, 10).bloch_basis().unwrap();
        // highest bands are truncation artifacts and exempt
        for band in 0..(2 * 10 - 2) {
            let expect = if band % 2 == 0 { Parity::Even } else { Parity::Odd };
            assert_eq!(basis.parity(band), expect, "band {band}");
        }
    }

    #[test]
    fn columns_are_orthonormal() {
        let basis = model(10.0, 10).bloch_basis().unwrap();
        let gram = basis.coefficients().adjoint() * basis.coefficients();
        let dim = basis.dim();
        for i in 0..dim {
            for j in 0..dim {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - C64::new(target, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn coefficients_obey_parity_sign_relation() {
        let m = model(10.0, 8);
        let basis = m.bloch_basis().unwrap();
        for band in 0..basis.dim() {
            let c = basis.state(band);
            let sign = match basis.parity(band) {
                Parity::Even => 1.0,
                Parity::Odd => -1.0,
                Parity::Undefined => panic!("parity defined at rest"),
            };
            for i in 0..basis.dim() {
                let mirrored = 2 * m.n_max() - i;
                assert!((c[i] - c[mirrored] * C64::new(sign, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn conduction_pairs_are_nearly_degenerate_at_v0_10() {
        let basis = model(10.0, 10).bloch_basis().unwrap();
        let gap = basis.energy(3) - basis.energy(2);
        assert!(basis.energy(4) - basis.energy(3) < 0.1 * gap);
        assert!(basis.energy(6) - basis.energy(5) < 0.1 * gap);
        let splits = basis.pair_splittings();
        assert_eq!(splits[0].lower, 3);
        assert_eq!(splits[0].upper, 4);
        assert!(splits[0].splitting > 0.0);
    }

    #[test]
    fn nonzero_quasimomentum_leaves_parity_undefined() {
        let basis = LatticeModel::new(10.0, 4, 0.3).unwrap().bloch_basis().unwrap();
        assert!(basis.parities().iter().all(|&p| p == Parity::Undefined));
        assert!(basis.qubit_subspace(4).is_err());
    }

    #[test]
    fn qubit_subspace_projector_properties() {
        let basis = model(10.0, 10).bloch_basis().unwrap();
        let sub = basis.qubit_subspace(4).unwrap();
        let p = sub.projector();
        let idem = (p * p - p).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(idem < 1e-12);
        let herm = (p - &p.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(herm < 1e-12);
        let trace: C64 = p.diagonal().iter().sum();
        assert!((trace - C64::new(2.0, 0.0)).norm() < 1e-12);
        // P Π P† = identity on the logical space
        let reduced = sub.isometry() * p * sub.isometry().adjoint();
        assert!((reduced - CMat::identity(2, 2)).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-12);
    }

    #[test]
    fn ground_pair_uses_band_zero_as_logical_zero() {
        let basis = model(10.0, 10).bloch_basis().unwrap();
        let sub = basis.qubit_subspace(1).unwrap();
        let mapped = sub.isometry() * basis.state(0);
        assert!((mapped[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(mapped[1].norm() < 1e-12);
    }

    #[test]
    fn even_member_is_logical_zero_for_conduction_pairs() {
        let basis = model(10.0, 10).bloch_basis().unwrap();
        let sub = basis.qubit_subspace(4).unwrap();
        // |4⟩_B is the even member of (|4⟩_B, |3⟩_B)
        let mapped = sub.isometry() * basis.state(4);
        assert!((mapped[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
        let mapped = sub.isometry() * basis.state(3);
        assert!((mapped[1] - C64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn pair_states_are_unit_norm_and_lean_on_positive_momentum() {
        let m = model(10.0, 10);
        let basis = m.bloch_basis().unwrap();
        let (plus, minus) = basis.momentum_pair_states(4).unwrap();
        assert!((plus.norm() - 1.0).abs() < 1e-12);
        assert!((minus.norm() - 1.0).abs() < 1e-12);
        // dominant coefficient of the sum state sits at n = +2
        let dominant = plus
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .map(|(i, _)| m.momentum_of_index(i))
            .unwrap();
        assert_eq!(dominant, 2);
    }

    #[test]
    fn pair_states_reject_bad_indices() {
        let basis = model(10.0, 10).bloch_basis().unwrap();
        assert!(basis.momentum_pair_states(3).is_err());
        assert!(basis.momentum_pair_states(2).is_err());
        assert!(basis.momentum_pair_states(44).is_err());
    }

    #[test]
    fn high_pair_overlaps_single_momentum_states() {
        let m = model(10.0, 10);
        let basis = m.bloch_basis().unwrap();
        let (plus, minus) = basis.momentum_pair_states(6).unwrap();
        let i_plus = m.index_of_momentum(3).unwrap();
        let i_minus = m.index_of_momentum(-3).unwrap();
        assert!(plus[i_plus].norm_sqr() >= 0.95, "got {}", plus[i_plus].norm_sqr());
        assert!(minus[i_minus].norm_sqr() >= 0.95, "got {}", minus[i_minus].norm_sqr());
    }

    #[test]
    fn ground_wavefunction_localizes_at_lattice_minima() {
        let basis = model(10.0, 10).bloch_basis().unwrap();
        let grid: Vec<f64> = (0..629).map(|i| -std::f64::consts::PI + i as f64 * 0.01).collect();
        let psi = basis.bloch_wavefunction(0, &grid).unwrap();
        let peak = grid[psi
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap()
            .0];
        // V(x) = -(V0/2)cos(2x) has minima at x = 0 mod π
        let folded = (peak / std::f64::consts::PI).round() * std::f64::consts::PI;
        assert!((peak - folded).abs() < 0.02, "peak at {peak}");
        // and the density is π-periodic
        let psi_shift = basis
            .bloch_wavefunction(0, &grid.iter().map(|x| x + std::f64::consts::PI).collect::<Vec<_>>())
            .unwrap();
        for (a, b) in psi.iter().zip(&psi_shift) {
            assert!((a.norm() - b.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn odd_wavefunction_vanishes_at_origin() {
        let basis = model(10.0, 10).bloch_basis().unwrap();
        let psi = basis.bloch_wavefunction(1, &[0.0]).unwrap();
        assert!(psi[0].norm() < 1e-12);
    }

    #[test]
    fn momentum_pair_wavefunction_is_nearly_plane_wave() {
        // The single Bloch state |4⟩_B is a standing wave (its modulus dips
        // close to zero at the cos(4x) nodes); the flat, plane-wave-like
        // object is the pair combination (|4⟩_B + |3⟩_B)/√2 ≈ |+4k_L⟩.
        let basis = model(10.0, 10).bloch_basis().unwrap();
        let grid: Vec<f64> = (0..315).map(|i| i as f64 * 0.01).collect();
        let (plus, _) = basis.momentum_pair_states(4).unwrap();
        let psi = basis.wavefunction_of(&plus, &grid);
        let mods: Vec<f64> = psi.iter().map(|z| z.norm()).collect();
        let max = mods.iter().fold(0.0f64, |a, &b| a.max(b));
        let min = mods.iter().fold(f64::MAX, |a, &b| a.min(b));
        assert!(max / min < 2.0, "modulus ratio {}", max / min);
    }

    #[test]
    fn band_export_has_one_row_per_band() {
        let basis = model(10.0, 3).bloch_basis().unwrap();
        let mut buf = Vec::new();
        basis.write_bands(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 7);
        let first: Vec<&str> = rows[0].split('\t').collect();
        assert_eq!(first.len(), 3 + 2 * 7);
        assert_eq!(first[2], "even");
    }
}

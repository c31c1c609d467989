//! Scalar loss terms: the three infidelity functionals and the band-limiting
//! penalty on the phase waveform.
//!
//! Gradients are returned in "packed complex" form: a complex matrix `G`
//! whose entry `(i, j)` carries `∂f/∂Re x_{ij}` in its real part and
//! `∂f/∂Im x_{ij}` in its imaginary part. That convention composes directly
//! with the real-vectorized variable layout of the collocation problem.

use crate::lattice::QubitSubspace;
use crate::linalg;
use crate::propagator::Waveform;
use crate::{C64, CMat, CVec, Error, Result};
use nalgebra::DMatrix;
use std::io::Write;

/// Default weight of the band-limit penalty in the composite loss.
pub const DEFAULT_PENALTY_WEIGHT: f64 = 100.0;

/// Default angular frequency cutoff for the penalty kernel (in ω_r).
pub const DEFAULT_CUTOFF: f64 = 70.0;

/// Which fidelity functional a problem optimizes.
#[derive(Debug, Clone)]
pub enum FidelityTerm {
    /// 1 - |⟨goal|ψ(T)⟩|².
    StateTransfer { goal: CVec },
    /// 1 - |Tr(W† P U(T) P†)|²/4 on a two-band logical subspace.
    Unitary { gate: CMat, subspace: QubitSubspace },
    /// 1 - ½ Σ_k ⟨ψ_k(T)|Π'|ψ_k(T)⟩ for the pair of source-band states.
    SubspaceTransfer { source: QubitSubspace, target: QubitSubspace },
}

impl FidelityTerm {
    /// Number of columns the trajectory frames carry for this term. Unitary
    /// targets propagate the two logical columns U·P† rather than the full
    /// unitary: Eq.-(9)-style losses and the midpoint constraints only ever
    /// read those columns, and the spectator columns are inert ballast that
    /// multiplies the NLP size by D/2.
    pub fn frame_columns(&self, _dim: usize) -> usize {
        match self {
            FidelityTerm::StateTransfer { .. } => 1,
            FidelityTerm::Unitary { .. } => 2,
            FidelityTerm::SubspaceTransfer { .. } => 2,
        }
    }

    /// Initial frame the trajectory starts from.
    pub fn initial_frame(&self, dim: usize) -> CMat {
        match self {
            FidelityTerm::StateTransfer { .. } => {
                // the caller supplies the start state; see CollocationProblem
                CMat::zeros(dim, 1)
            }
            FidelityTerm::Unitary { subspace, .. } => {
                // identity restricted to the logical columns: P†
                CMat::from_columns(&[subspace.logical_state(0), subspace.logical_state(1)])
            }
            FidelityTerm::SubspaceTransfer { source, .. } => {
                let mut frame = CMat::zeros(dim, 2);
                frame.set_column(0, &source.logical_state(0));
                frame.set_column(1, &source.logical_state(1));
                frame
            }
        }
    }

    /// Loss value on a final frame of the matching column count.
    pub fn evaluate(&self, frame: &CMat) -> f64 {
        match self {
            FidelityTerm::StateTransfer { goal } => {
                state_infidelity(&CVec::from(frame.column(0)), goal)
            }
            FidelityTerm::Unitary { gate, subspace } => {
                // frame = U·P†, so P·frame is the logical block of U
                let block = subspace.isometry() * frame;
                let trace: C64 = (gate.adjoint() * block).diagonal().iter().sum();
                1.0 - trace.norm_sqr() / 4.0
            }
            FidelityTerm::SubspaceTransfer { target, .. } => {
                let finals = [CVec::from(frame.column(0)), CVec::from(frame.column(1))];
                subspace_infidelity(&finals, target)
            }
        }
    }

    /// Loss value plus packed-complex gradient with respect to the frame.
    pub fn evaluate_grad(&self, frame: &CMat) -> (f64, CMat) {
        match self {
            FidelityTerm::StateTransfer { goal } => {
                let final_state = CVec::from(frame.column(0));
                let overlap = (goal.adjoint() * &final_state)[(0, 0)];
                let value = 1.0 - overlap.norm_sqr();
                // ∂|z|²/∂(Re,Im) f_i packs to 2·z·g_i
                let grad = CMat::from_fn(frame.nrows(), 1, |i, _| -2.0 * overlap * goal[i]);
                (value, grad)
            }
            FidelityTerm::Unitary { gate, subspace } => {
                let block = subspace.isometry() * frame;
                let trace = (gate.adjoint() * block).diagonal().iter().sum::<C64>();
                let value = 1.0 - trace.norm_sqr() / 4.0;
                // z = Tr(W†·P·X): ∂z/∂X = conj(P†W), so G = -(z/2)·P†W
                let coefficient = subspace.isometry().adjoint() * gate;
                let grad = coefficient.map(|e| -0.5 * trace * e);
                (value, grad)
            }
            FidelityTerm::SubspaceTransfer { target, .. } => {
                let mut value = 1.0;
                let mut grad = CMat::zeros(frame.nrows(), 2);
                for k in 0..2 {
                    let col = CVec::from(frame.column(k));
                    let projected = target.projector() * &col;
                    value -= 0.5 * (col.adjoint() * &projected)[(0, 0)].re;
                    grad.set_column(k, &projected.map(|z| -z));
                }
                (value, grad)
            }
        }
    }
}

/// Full loss specification: fidelity term plus weighted band-limit penalty.
#[derive(Debug, Clone)]
pub struct LossSpec {
    pub term: FidelityTerm,
    pub penalty_weight: f64,
    pub cutoff: f64,
}

impl LossSpec {
    pub fn new(term: FidelityTerm) -> Result<Self> {
        Self::with_penalty(term, DEFAULT_PENALTY_WEIGHT, DEFAULT_CUTOFF)
    }

    pub fn with_penalty(term: FidelityTerm, penalty_weight: f64, cutoff: f64) -> Result<Self> {
        if !(penalty_weight.is_finite() && penalty_weight >= 0.0) {
            return Err(Error::invalid(format!(
                "penalty weight must be nonnegative, got {penalty_weight}"
            )));
        }
        if !(cutoff.is_finite() && cutoff > 0.0) {
            return Err(Error::invalid(format!("cutoff must be positive, got {cutoff}")));
        }
        match &term {
            FidelityTerm::StateTransfer { goal } => {
                if (goal.norm() - 1.0).abs() > 1e-10 {
                    return Err(Error::invalid("state-transfer goal must be unit norm"));
                }
            }
            FidelityTerm::Unitary { gate, .. } => {
                if gate.nrows() != 2 || gate.ncols() != 2 {
                    return Err(Error::invalid("logical gate must be 2x2"));
                }
                if linalg::unitarity_defect(gate) > 1e-12 {
                    return Err(Error::invalid("logical gate must be unitary to 1e-12"));
                }
            }
            FidelityTerm::SubspaceTransfer { .. } => {}
        }
        Ok(Self { term, penalty_weight, cutoff })
    }
}

/// State-transfer infidelity 1 - |⟨goal|final⟩|² (global-phase invariant).
pub fn state_infidelity(final_state: &CVec, goal: &CVec) -> f64 {
    1.0 - (goal.adjoint() * final_state)[(0, 0)].norm_sqr()
}

/// Hilbert-Schmidt unitary infidelity evaluated on a logical subspace:
/// 1 - |Tr(gate† · P U P†)|²/4. Leakage out of the subspace strictly
/// increases the value.
pub fn unitary_infidelity(final_u: &CMat, gate: &CMat, subspace: &QubitSubspace) -> f64 {
    let block = subspace.logical_block(final_u);
    let trace: C64 = (gate.adjoint() * block).diagonal().iter().sum();
    1.0 - trace.norm_sqr() / 4.0
}

/// Population not transferred into the target subspace, averaged over the
/// two propagated source-basis states.
pub fn subspace_infidelity(finals: &[CVec; 2], target: &QubitSubspace) -> f64 {
    1.0 - 0.5 * finals.iter().map(|psi| target.population(psi)).sum::<f64>()
}

/// Precomputed discrete band-limit penalty operator for a fixed grid.
///
/// The penalty is `L_ω = Δt Σ_{l=1..N_t} |φ_l - Δt Σ_{m=1..N_t} K_{lm} φ_m|²`
/// with the sinc low-pass kernel `K(t) = (ω_c/π)·sinc(ω_c t)`; the double sum
/// runs over the interior window with no periodic wraparound, and sample 0 is
/// excluded. `B = I - Δt·K` is dense but small (N_t ≤ a few hundred).
#[derive(Debug, Clone)]
pub struct SincKernel {
    dt: f64,
    n_t: usize,
    filter: DMatrix<f64>,
}

impl SincKernel {
    pub fn new(n_t: usize, dt: f64, cutoff: f64) -> Result<Self> {
        if n_t == 0 || !(dt > 0.0) || !(cutoff > 0.0) {
            return Err(Error::invalid("sinc kernel needs n_t >= 1, dt > 0, cutoff > 0"));
        }
        let mut filter = DMatrix::<f64>::zeros(n_t, n_t);
        for l in 0..n_t {
            for m in 0..n_t {
                let t = (l as f64 - m as f64) * dt;
                let kernel = cutoff / std::f64::consts::PI * linalg::sinc(cutoff * t);
                filter[(l, m)] = -dt * kernel;
            }
            filter[(l, l)] += 1.0;
        }
        Ok(Self { dt, n_t, filter })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Penalty value for `N_t + 1` phase samples (sample 0 excluded).
    pub fn penalty(&self, phases: &[f64]) -> f64 {
        let residual = self.residual(phases);
        self.dt * residual.iter().map(|r| r * r).sum::<f64>()
    }

    /// Penalty and its gradient with respect to every phase sample; the
    /// gradient of sample 0 is identically zero.
    pub fn penalty_grad(&self, phases: &[f64]) -> (f64, Vec<f64>) {
        let residual = self.residual(phases);
        let value = self.dt * residual.iter().map(|r| r * r).sum::<f64>();
        // grad over samples 1..=N_t: 2·Δt·Bᵀ r, and B is symmetric
        let back = &self.filter * &residual;
        let mut grad = vec![0.0; phases.len()];
        for l in 0..self.n_t {
            grad[l + 1] = 2.0 * self.dt * back[l];
        }
        (value, grad)
    }

    fn residual(&self, phases: &[f64]) -> nalgebra::DVector<f64> {
        assert_eq!(
            phases.len(),
            self.n_t + 1,
            "kernel built for {} samples, got {}",
            self.n_t + 1,
            phases.len()
        );
        let windowed = nalgebra::DVector::from_iterator(self.n_t, phases[1..].iter().copied());
        &self.filter * windowed
    }
}

/// One-off penalty evaluation (builds the kernel internally).
pub fn frequency_penalty(waveform: &Waveform, cutoff: f64) -> Result<f64> {
    let kernel = SincKernel::new(waveform.steps(), waveform.dt(), cutoff)?;
    Ok(kernel.penalty(waveform.phases()))
}

/// Discrete Fourier magnitudes |φ(ω)| on ω_k = 2πk/T up to the Nyquist
/// frequency π/Δt. Reporting only; the optimizer never touches this.
pub fn fourier_spectrum(waveform: &Waveform) -> Vec<(f64, f64)> {
    let n = waveform.steps();
    let dt = waveform.dt();
    let duration = waveform.duration();
    let phases = waveform.phases();
    (0..=n / 2)
        .map(|k| {
            let omega = 2.0 * std::f64::consts::PI * k as f64 / duration;
            let mut acc = C64::new(0.0, 0.0);
            for (l, &phi) in phases.iter().take(n).enumerate() {
                acc += C64::from_polar(phi, -omega * (l as f64 * dt));
            }
            (omega, (acc * dt).norm())
        })
        .collect()
}

/// Spectrum export: rows of `ω |φ(ω)|`.
pub fn write_spectrum<W: Write>(spectrum: &[(f64, f64)], mut w: W) -> Result<()> {
    writeln!(w, "# omega_wr\tmagnitude")?;
    for (omega, mag) in spectrum {
        writeln!(w, "{omega:.17e}\t{mag:.17e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeModel;
    use crate::propagator::Waveform;

    fn basis() -> crate::lattice::BlochBasis {
        LatticeModel::at_rest(10.0, 10).unwrap().bloch_basis().unwrap()
    }

    fn pseudo_random_state(dim: usize, seed: u64) -> CVec {
        let mut state = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut next = move || {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        linalg::normalize(&CVec::from_fn(dim, |_, _| C64::new(next(), next())))
    }

    #[test]
    fn state_infidelity_basics() {
        let b = basis();
        let goal = b.state(3);
        assert!(state_infidelity(&goal, &goal).abs() < 1e-15);
        assert!((state_infidelity(&b.state(0), &goal) - 1.0).abs() < 1e-15);
        let half = linalg::normalize(&(b.state(3) + b.state(0)));
        assert!((state_infidelity(&half, &goal) - 0.5).abs() < 1e-12);
        // global phase invariance
        let rotated = goal.clone() * C64::from_polar(1.0, 1.234);
        assert!(state_infidelity(&rotated, &goal).abs() < 1e-14);
    }

    #[test]
    fn unitary_infidelity_basics() {
        let b = basis();
        let sub = b.qubit_subspace(4).unwrap();
        let z_gate = CMat::from_row_slice(2, 2, &[
            C64::new(1.0, 0.0), C64::new(0.0, 0.0),
            C64::new(0.0, 0.0), C64::new(-1.0, 0.0),
        ]);
        // embed Z on the subspace, arbitrary action elsewhere (identity)
        let p = sub.isometry();
        let embedded = CMat::identity(21, 21)
            - p.adjoint() * p
            + p.adjoint() * &z_gate * p;
        assert!(unitary_infidelity(&embedded, &z_gate, &sub) < 1e-12);
        // global phase invariance
        let rotated = embedded.map(|z| z * C64::from_polar(1.0, -0.77));
        assert!(unitary_infidelity(&rotated, &z_gate, &sub) < 1e-12);
        // identity vs Z is maximally wrong (Tr Z = 0)
        assert!((unitary_infidelity(&CMat::identity(21, 21), &z_gate, &sub) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn leakage_increases_unitary_infidelity() {
        let b = basis();
        let sub = b.qubit_subspace(4).unwrap();
        let ident = CMat::from_row_slice(2, 2, &[
            C64::new(1.0, 0.0), C64::new(0.0, 0.0),
            C64::new(0.0, 0.0), C64::new(1.0, 0.0),
        ]);
        // a unitary that rotates |4⟩_B partly out of the subspace
        let inside = b.state(4);
        let outside = b.state(0);
        let theta: f64 = 0.3;
        let u = CMat::identity(21, 21)
            + (&inside * inside.adjoint()) * C64::new(theta.cos() - 1.0, 0.0)
            + (&outside * outside.adjoint()) * C64::new(theta.cos() - 1.0, 0.0)
            + (&outside * inside.adjoint()) * C64::new(theta.sin(), 0.0)
            - (&inside * outside.adjoint()) * C64::new(theta.sin(), 0.0);
        assert!(linalg::unitarity_defect(&u) < 1e-12);
        let infid = unitary_infidelity(&u, &ident, &sub);
        assert!(infid > 1e-3, "leaky map must lose fidelity, got {infid}");
    }

    #[test]
    fn subspace_infidelity_basics() {
        let b = basis();
        let target = b.qubit_subspace(4).unwrap();
        let inside = [b.state(4), b.state(3)];
        assert!(subspace_infidelity(&inside, &target) < 1e-12);
        let outside = [b.state(0), b.state(1)];
        assert!((subspace_infidelity(&outside, &target) - 1.0).abs() < 1e-12);
        let half = [
            linalg::normalize(&(b.state(4) + b.state(0))),
            linalg::normalize(&(b.state(3) + b.state(1))),
        ];
        assert!((subspace_infidelity(&half, &target) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infidelities_stay_in_unit_interval() {
        let b = basis();
        let sub = b.qubit_subspace(4).unwrap();
        for seed in 0..20 {
            let psi = pseudo_random_state(21, seed);
            let goal = pseudo_random_state(21, seed + 100);
            let v = state_infidelity(&psi, &goal);
            assert!((-1e-12..=1.0 + 1e-12).contains(&v));
            let finals = [pseudo_random_state(21, seed + 200), pseudo_random_state(21, seed + 300)];
            let v = subspace_infidelity(&finals, &sub);
            assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn zero_waveform_has_zero_penalty() {
        let w = Waveform::zero(2.0, 0.02).unwrap();
        assert_eq!(frequency_penalty(&w, DEFAULT_CUTOFF).unwrap(), 0.0);
    }

    #[test]
    fn in_band_tone_is_barely_penalized() {
        // ω = 10 ω_r ≪ ω_c = 70: only window-edge leakage survives
        let duration = 4.0;
        let n_t = 200;
        let dt = duration / n_t as f64;
        let phases: Vec<f64> = (0..=n_t).map(|l| (10.0 * l as f64 * dt).sin()).collect();
        let w = Waveform::new(dt, phases).unwrap();
        let penalty = frequency_penalty(&w, DEFAULT_CUTOFF).unwrap();
        let raw: f64 = dt * w.phases()[1..].iter().map(|p| p * p).sum::<f64>();
        assert!(penalty < 0.05 * raw, "penalty {penalty:e} vs signal norm {raw:e}");
    }

    #[test]
    fn out_of_band_tone_is_fully_penalized() {
        // ω = 140 ω_r = 2ω_c: the filter passes nothing
        let duration = 4.0;
        let n_t = 800;
        let dt = duration / n_t as f64;
        let phases: Vec<f64> = (0..=n_t).map(|l| (140.0 * l as f64 * dt).sin()).collect();
        let w = Waveform::new(dt, phases).unwrap();
        let penalty = frequency_penalty(&w, DEFAULT_CUTOFF).unwrap();
        let raw: f64 = dt * w.phases()[1..].iter().map(|p| p * p).sum::<f64>();
        assert!(
            (penalty - raw).abs() < 0.1 * raw,
            "penalty {penalty:e} vs signal norm {raw:e}"
        );
    }

    #[test]
    fn penalty_is_quadratic_and_sign_invariant() {
        let n_t = 120;
        let dt = 0.02;
        let phases: Vec<f64> = (0..=n_t).map(|l| 0.4 * (0.9 * l as f64).sin()).collect();
        let kernel = SincKernel::new(n_t, dt, DEFAULT_CUTOFF).unwrap();
        let base = kernel.penalty(&phases);
        let negated: Vec<f64> = phases.iter().map(|p| -p).collect();
        assert!((kernel.penalty(&negated) - base).abs() <= 1e-12 * base);
        let scaled: Vec<f64> = phases.iter().map(|p| 0.5 * p).collect();
        assert!((kernel.penalty(&scaled) - 0.25 * base).abs() <= 1e-12 * base);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let n_t = 60;
        let dt = 0.025;
        let mut phases: Vec<f64> = (0..=n_t).map(|l| 0.3 * (1.1 * l as f64).sin()).collect();
        phases[0] = 0.0;
        let kernel = SincKernel::new(n_t, dt, DEFAULT_CUTOFF).unwrap();
        let (_, grad) = kernel.penalty_grad(&phases);
        assert_eq!(grad[0], 0.0);
        let h = 1e-6;
        for l in (1..=n_t).step_by(7) {
            let mut plus = phases.clone();
            plus[l] += h;
            let mut minus = phases.clone();
            minus[l] -= h;
            let fd = (kernel.penalty(&plus) - kernel.penalty(&minus)) / (2.0 * h);
            let rel = (grad[l] - fd).abs() / fd.abs().max(1e-3);
            assert!(rel < 1e-6, "sample {l}: analytic {} vs fd {fd}", grad[l]);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let b = basis();
        let dim = 21;
        let h = 1e-6;

        let check = |term: FidelityTerm, frame: CMat| {
            let (_, grad) = term.evaluate_grad(&frame);
            for &(i, j) in &[(0usize, 0usize), (3, 0), (10, 0), (dim - 1, 0)] {
                let j = j.min(frame.ncols() - 1);
                for re_part in [true, false] {
                    let delta = if re_part { C64::new(h, 0.0) } else { C64::new(0.0, h) };
                    let mut plus = frame.clone();
                    plus[(i, j)] += delta;
                    let mut minus = frame.clone();
                    minus[(i, j)] -= delta;
                    let fd = (term.evaluate(&plus) - term.evaluate(&minus)) / (2.0 * h);
                    let analytic = if re_part { grad[(i, j)].re } else { grad[(i, j)].im };
                    let rel = (analytic - fd).abs() / fd.abs().max(1e-3);
                    assert!(rel < 1e-6, "entry ({i},{j}) re={re_part}: {analytic} vs {fd}");
                }
            }
        };

        check(
            FidelityTerm::StateTransfer { goal: b.state(3) },
            CMat::from_columns(&[pseudo_random_state(dim, 5)]),
        );

        let sub = b.qubit_subspace(4).unwrap();
        let gate = CMat::from_row_slice(2, 2, &[
            C64::new(0.0, 0.0), C64::new(1.0, 0.0),
            C64::new(1.0, 0.0), C64::new(0.0, 0.0),
        ]);
        // unitary targets act on the two propagated logical columns
        let cols: Vec<CVec> = (0..2).map(|k| pseudo_random_state(dim, 40 + k)).collect();
        check(FidelityTerm::Unitary { gate, subspace: sub.clone() }, CMat::from_columns(&cols));

        let source = b.qubit_subspace(4).unwrap();
        let target = b.qubit_subspace(6).unwrap();
        check(
            FidelityTerm::SubspaceTransfer { source, target },
            CMat::from_columns(&[pseudo_random_state(dim, 77), pseudo_random_state(dim, 78)]),
        );
    }

    #[test]
    fn spectrum_of_zero_is_zero_and_tone_peaks_at_tone() {
        let zero = Waveform::zero(1.0, 0.02).unwrap();
        assert!(fourier_spectrum(&zero).iter().all(|(_, m)| *m == 0.0));

        let duration = 4.0;
        let n_t = 400;
        let dt = duration / n_t as f64;
        let tone = 2.0 * std::f64::consts::PI * 5.0 / duration; // exactly bin 5
        let phases: Vec<f64> = (0..=n_t).map(|l| 0.3 * (tone * l as f64 * dt).sin()).collect();
        let w = Waveform::new(dt, phases).unwrap();
        let spectrum = fourier_spectrum(&w);
        let peak = spectrum
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .unwrap();
        assert_eq!(peak.0, 5);
    }

    #[test]
    fn loss_spec_validation() {
        let b = basis();
        assert!(LossSpec::new(FidelityTerm::StateTransfer { goal: b.state(3) }).is_ok());
        let unnormalized = b.state(3) * C64::new(0.7, 0.0);
        assert!(LossSpec::new(FidelityTerm::StateTransfer { goal: unnormalized }).is_err());
        let sub = b.qubit_subspace(4).unwrap();
        let not_unitary = CMat::from_row_slice(2, 2, &[
            C64::new(1.0, 0.0), C64::new(0.0, 0.0),
            C64::new(0.0, 0.0), C64::new(0.5, 0.0),
        ]);
        assert!(LossSpec::new(FidelityTerm::Unitary { gate: not_unitary, subspace: sub }).is_err());
    }
}

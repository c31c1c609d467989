//! Time evolution of states and unitaries under a sampled phase waveform.
//!
//! Each collocation interval is advanced with the exact unitary
//! `exp(-i·H(φ_l)·Δt)` built from a Hermitian eigendecomposition, so the only
//! discretization error is the piecewise-constant control assumption itself.
//! This module doubles as the independent verification oracle for every
//! optimized waveform: reported infidelities are always measured here, never
//! read off a solver's internal objective.

use crate::lattice::LatticeModel;
use crate::linalg;
use crate::{C64, CMat, CVec, Error, Result};
use std::io::Write;
use std::path::Path;

/// Ceiling on the collocation time step (in 1/ω_r) used by default problem
/// builders: `N_t = ceil(T / DT_CEILING)`.
pub const DT_CEILING: f64 = 0.02;

/// Uniformly sampled lattice-phase control: `N_t + 1` samples `φ_0..φ_{N_t}`
/// spaced `dt` apart. Sample `l` drives the step `l → l+1`; the final sample
/// only pins the endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    dt: f64,
    phases: Vec<f64>,
}

impl Waveform {
    pub fn new(dt: f64, phases: Vec<f64>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("waveform dt must be positive, got {dt}")));
        }
        if phases.len() < 2 {
            return Err(Error::invalid("waveform needs at least two samples"));
        }
        const BOUND: f64 = std::f64::consts::PI * (1.0 + 1e-12);
        for (l, &p) in phases.iter().enumerate() {
            if !p.is_finite() || p.abs() > BOUND {
                return Err(Error::invalid(format!(
                    "phase sample {l} = {p} outside [-pi, pi]"
                )));
            }
        }
        Ok(Self { dt, phases })
    }

    /// Zero waveform of the requested duration, sampled so that
    /// `dt <= dt_ceiling`.
    pub fn zero(duration: f64, dt_ceiling: f64) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::invalid(format!("duration must be positive, got {duration}")));
        }
        let steps = (duration / dt_ceiling).ceil().max(1.0) as usize;
        Self::new(duration / steps as f64, vec![0.0; steps + 1])
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Number of propagation steps N_t (one less than the sample count).
    pub fn steps(&self) -> usize {
        self.phases.len() - 1
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    /// Cosine quadrature I_l = cos φ_l.
    pub fn quadrature_cos(&self) -> Vec<f64> {
        self.phases.iter().map(|p| p.cos()).collect()
    }

    /// Sine quadrature Q_l = sin φ_l.
    pub fn quadrature_sin(&self) -> Vec<f64> {
        self.phases.iter().map(|p| p.sin()).collect()
    }

    /// Reversed-and-negated control `φ'_l = -φ_{N_t - l}`, the time-reversal
    /// candidate. `negate: false` gives the plain reversal used as a fallback
    /// when validating the sign convention.
    pub fn time_reverse(&self, negate: bool) -> Self {
        let sign = if negate { -1.0 } else { 1.0 };
        let phases = self.phases.iter().rev().map(|p| sign * p).collect();
        Self { dt: self.dt, phases }
    }

    /// Concatenate with another waveform sharing the same dt. The junction
    /// sample is taken from `other` (gate waveforms start and end at φ = 0,
    /// so junctions stay continuous).
    pub fn concatenate(&self, other: &Waveform) -> Result<Self> {
        if (self.dt - other.dt).abs() > 1e-15 * self.dt.max(other.dt) {
            return Err(Error::invalid(format!(
                "cannot concatenate waveforms with different dt ({} vs {})",
                self.dt, other.dt
            )));
        }
        let mut phases = self.phases[..self.phases.len() - 1].to_vec();
        phases.extend_from_slice(&other.phases);
        Ok(Self { dt: self.dt, phases })
    }

    /// Delimited-text export: header comments, then rows `l t φ I Q`.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# lattice phase waveform")?;
        writeln!(w, "# dt = {:.17e}", self.dt)?;
        writeln!(w, "# samples = {}", self.phases.len())?;
        writeln!(w, "# l\tt\tphi\tI\tQ")?;
        for (l, &phi) in self.phases.iter().enumerate() {
            let t = l as f64 * self.dt;
            writeln!(
                w,
                "{l}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}",
                t,
                phi,
                phi.cos(),
                phi.sin()
            )?;
        }
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))
    }

    /// Parse the text format produced by [`Waveform::write`].
    pub fn read(text: &str, origin: &str) -> Result<Self> {
        let mut dt_header: Option<f64> = None;
        let mut rows: Vec<(f64, f64)> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(value) = rest.trim().strip_prefix("dt =") {
                    dt_header = value.trim().parse::<f64>().ok();
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 3 {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: idx + 1,
                    msg: format!("expected at least 3 columns, got {}", fields.len()),
                });
            }
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    path: origin.to_string(),
                    line: idx + 1,
                    msg: format!("bad {what} value: {s}"),
                })
            };
            rows.push((parse(fields[1], "time")?, parse(fields[2], "phase")?));
        }
        if rows.len() < 2 {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: 0,
                msg: "waveform file holds fewer than two samples".into(),
            });
        }
        let dt = dt_header.unwrap_or(rows[1].0 - rows[0].0);
        Waveform::new(dt, rows.into_iter().map(|(_, phi)| phi).collect())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::read(&text, &path.display().to_string())
    }
}

/// Initial condition for a propagation run.
#[derive(Debug, Clone)]
pub enum Initial {
    State(CVec),
    Unitary(CMat),
}

/// Frames of a propagation run, one per waveform sample.
#[derive(Debug, Clone)]
pub enum Frames {
    State(Vec<CVec>),
    Unitary(Vec<CMat>),
}

/// Time-ordered history of a propagation run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub frames: Frames,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        match &self.frames {
            Frames::State(f) => f.len(),
            Frames::Unitary(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn final_state(&self) -> Option<&CVec> {
        match &self.frames {
            Frames::State(f) => f.last(),
            Frames::Unitary(_) => None,
        }
    }

    pub fn final_unitary(&self) -> Option<&CMat> {
        match &self.frames {
            Frames::Unitary(f) => f.last(),
            Frames::State(_) => None,
        }
    }

    /// Bloch-band populations |⟨ν|ψ_l⟩|² for ν = 0..=nu_show at every frame
    /// (states only).
    pub fn bloch_populations(
        &self,
        basis: &crate::lattice::BlochBasis,
        nu_show: usize,
    ) -> Option<Vec<Vec<f64>>> {
        let Frames::State(frames) = &self.frames else {
            return None;
        };
        let bands = nu_show.min(basis.dim() - 1);
        Some(
            frames
                .iter()
                .map(|psi| {
                    (0..=bands)
                        .map(|nu| {
                            (basis.coefficients().column(nu).adjoint() * psi)[(0, 0)].norm_sqr()
                        })
                        .collect()
                })
                .collect(),
        )
    }

    /// Trajectory export: one row per frame, `t` then Bloch populations for
    /// ν = 0..=nu_show.
    pub fn write_bloch_history<W: Write>(
        &self,
        basis: &crate::lattice::BlochBasis,
        nu_show: usize,
        mut w: W,
    ) -> Result<()> {
        let pops = self
            .bloch_populations(basis, nu_show)
            .ok_or_else(|| Error::invalid("bloch history export needs a state trajectory"))?;
        write!(w, "# t")?;
        for nu in 0..pops[0].len() {
            write!(w, "\tp{nu}")?;
        }
        writeln!(w)?;
        for (l, row) in pops.iter().enumerate() {
            write!(w, "{:.17e}", l as f64 * self.dt)?;
            for p in row {
                write!(w, "\t{:.17e}", p)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Exact one-step unitary `exp(-i·H(φ)·dt)`.
pub fn step_unitary(model: &LatticeModel, phase: f64, dt: f64) -> Result<CMat> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!("step dt must be positive, got {dt}")));
    }
    let eig = linalg::hermitian_eigen(&model.build_hamiltonian(phase))?;
    Ok(linalg::unitary_exp(&eig, dt))
}

/// Propagate an initial state or unitary through a waveform, holding the
/// control constant over each step. Frame 0 is the initial condition.
pub fn propagate(model: &LatticeModel, waveform: &Waveform, initial: Initial) -> Result<Trajectory> {
    let dim = model.dim();
    let steps = waveform.steps();
    // consecutive equal samples (free evolution) reuse the step unitary
    let mut cached: Option<(f64, CMat)> = None;
    let mut step = |phase: f64| -> Result<CMat> {
        if let Some((p, u)) = &cached {
            if *p == phase {
                return Ok(u.clone());
            }
        }
        let u = step_unitary(model, phase, waveform.dt())?;
        cached = Some((phase, u.clone()));
        Ok(u)
    };

    match initial {
        Initial::State(psi0) => {
            if psi0.len() != dim {
                return Err(Error::invalid(format!(
                    "initial state has dimension {}, model needs {dim}",
                    psi0.len()
                )));
            }
            let mut frames = Vec::with_capacity(steps + 1);
            frames.push(psi0);
            for l in 0..steps {
                let u = step(waveform.phases()[l])?;
                let next = &u * frames.last().unwrap();
                frames.push(next);
            }
            Ok(Trajectory { dt: waveform.dt(), frames: Frames::State(frames) })
        }
        Initial::Unitary(u0) => {
            if u0.nrows() != dim || u0.ncols() != dim {
                return Err(Error::invalid(format!(
                    "initial unitary is {}x{}, model needs {dim}x{dim}",
                    u0.nrows(),
                    u0.ncols()
                )));
            }
            let mut frames = Vec::with_capacity(steps + 1);
            frames.push(u0);
            for l in 0..steps {
                let u = step(waveform.phases()[l])?;
                let next = &u * frames.last().unwrap();
                frames.push(next);
            }
            Ok(Trajectory { dt: waveform.dt(), frames: Frames::Unitary(frames) })
        }
    }
}

/// Full evolution operator of a waveform (identity propagated to T).
pub fn waveform_unitary(model: &LatticeModel, waveform: &Waveform) -> Result<CMat> {
    let traj = propagate(
        model,
        waveform,
        Initial::Unitary(CMat::identity(model.dim(), model.dim())),
    )?;
    Ok(traj.final_unitary().unwrap().clone())
}

/// Result of re-propagating a waveform on a refined time grid.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DiscretizationReport {
    pub refinement: usize,
    /// 1 - |Tr(U_coarse† U_fine)|²/D², the Hilbert-Schmidt disagreement
    /// between the nominal evolution and the refined one.
    pub fidelity_change: f64,
    pub flagged: bool,
}

/// Threshold above which [`refine_check`] flags a waveform as
/// discretization-sensitive.
pub const REFINE_FLAG_THRESHOLD: f64 = 1e-3;

/// Re-propagate with `dt/refinement` (φ linearly interpolated between the
/// original samples, sampled at sub-step midpoints) and report how much the
/// total evolution operator moves. Waveforms whose quality depends on the
/// coarse grid get flagged.
pub fn refine_check(
    model: &LatticeModel,
    waveform: &Waveform,
    refinement: usize,
) -> Result<DiscretizationReport> {
    if !(2..=8).contains(&refinement) {
        return Err(Error::invalid(format!(
            "refinement must lie in 2..=8, got {refinement}"
        )));
    }
    let coarse = waveform_unitary(model, waveform)?;

    let dim = model.dim();
    let sub_dt = waveform.dt() / refinement as f64;
    let mut fine = CMat::identity(dim, dim);
    let phases = waveform.phases();
    let mut cached: Option<(f64, CMat)> = None;
    for l in 0..waveform.steps() {
        let slope = phases[l + 1] - phases[l];
        for k in 0..refinement {
            let frac = (k as f64 + 0.5) / refinement as f64;
            let phi = phases[l] + slope * frac;
            let u = match &cached {
                Some((p, u)) if *p == phi => u.clone(),
                _ => {
                    let u = step_unitary(model, phi, sub_dt)?;
                    cached = Some((phi, u.clone()));
                    u
                }
            };
            fine = u * fine;
        }
    }

    let trace: C64 = (coarse.adjoint() * fine).diagonal().iter().sum();
    let d = dim as f64;
    let fidelity_change = (1.0 - trace.norm_sqr() / (d * d)).max(0.0);
    Ok(DiscretizationReport {
        refinement,
        fidelity_change,
        flagged: fidelity_change > REFINE_FLAG_THRESHOLD,
    })
}

/// Time-of-flight readout model: populations of the discrete momentum states,
/// `p_n = |⟨2n·k_L|ψ⟩|²`. Fails on states that lost normalization.
pub fn momentum_populations(state: &CVec) -> Result<Vec<f64>> {
    let norm_sqr: f64 = state.iter().map(|z| z.norm_sqr()).sum();
    if (norm_sqr - 1.0).abs() > 1e-6 {
        return Err(Error::numerical(format!(
            "momentum_populations expects a unit-norm state, |psi|^2 = {norm_sqr}"
        )));
    }
    Ok(state.iter().map(|z| z.norm_sqr()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeModel;

    fn model() -> LatticeModel {
        LatticeModel::at_rest(10.0, 10).unwrap()
    }

    fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn waveform_validation() {
        assert!(Waveform::new(0.0, vec![0.0, 0.0]).is_err());
        assert!(Waveform::new(0.01, vec![0.0]).is_err());
        assert!(Waveform::new(0.01, vec![0.0, 4.0]).is_err());
        let w = Waveform::new(0.01, vec![0.0, 0.1, 0.0]).unwrap();
        assert_eq!(w.steps(), 2);
        assert!((w.duration() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn quadratures_stay_on_unit_circle() {
        let w = Waveform::new(0.01, vec![0.0, 0.5, -1.2, 3.0, 0.0]).unwrap();
        for (i, q) in w.quadrature_cos().iter().zip(w.quadrature_sin()) {
            assert!((i * i + q * q - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn step_approaches_identity_for_small_dt() {
        let m = model();
        let dt = 1e-6;
        let u = step_unitary(&m, 0.4, dt).unwrap();
        let defect = max_abs_diff(&u, &CMat::identity(21, 21));
        // ||exp(-iH dt) - 1|| = O(||H|| dt), ||H|| ~ 4 N_max² = 400
        assert!(defect < 500.0 * dt, "defect {defect}");
        assert!(defect > 1e-8);
    }

    #[test]
    fn free_particle_step_is_diagonal_kinetic_phase() {
        let m = LatticeModel::at_rest(0.0, 3).unwrap();
        let dt = 0.37;
        let u = step_unitary(&m, 0.0, dt).unwrap();
        for i in 0..7 {
            let n = m.momentum_of_index(i) as f64;
            let expect = C64::from_polar(1.0, -4.0 * n * n * dt);
            assert!((u[(i, i)] - expect).norm() < 1e-12);
            for j in 0..7 {
                if i != j {
                    assert!(u[(i, j)].norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn steps_compose_exactly() {
        let m = model();
        let dt = 0.017;
        let u1 = step_unitary(&m, -0.8, dt).unwrap();
        let u2 = step_unitary(&m, -0.8, 2.0 * dt).unwrap();
        assert!(max_abs_diff(&(&u1 * &u1), &u2) < 1e-12);
    }

    #[test]
    fn step_is_unitary() {
        let u = step_unitary(&model(), 1.3, 0.02).unwrap();
        assert!(crate::linalg::unitarity_defect(&u) < 1e-12);
    }

    #[test]
    fn eigenstate_acquires_only_a_phase_under_static_lattice() {
        let m = model();
        let basis = m.bloch_basis().unwrap();
        let w = Waveform::zero(1.5, DT_CEILING).unwrap();
        let traj = propagate(&m, &w, Initial::State(basis.state(0))).unwrap();
        let final_state = traj.final_state().unwrap();
        let expected = basis.state(0) * C64::from_polar(1.0, -basis.energy(0) * w.duration());
        let err = (final_state - expected).norm();
        assert!(err < 1e-10, "phase evolution error {err:e}");
        let overlap = (basis.state(0).adjoint() * final_state)[(0, 0)].norm_sqr();
        assert!((overlap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn norm_is_conserved_along_the_trajectory() {
        let m = model();
        let phases: Vec<f64> = (0..200).map(|l| 0.8 * (0.21 * l as f64).sin()).collect();
        let w = Waveform::new(0.015, phases).unwrap();
        let basis = m.bloch_basis().unwrap();
        let traj = propagate(&m, &w, Initial::State(basis.state(0))).unwrap();
        let Frames::State(frames) = &traj.frames else { unreachable!() };
        for f in frames {
            assert!((f.norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn unitary_propagation_matches_state_propagation() {
        let m = model();
        let phases: Vec<f64> = (0..60).map(|l| 0.5 * (0.4 * l as f64).sin()).collect();
        let w = Waveform::new(0.02, phases).unwrap();
        let basis = m.bloch_basis().unwrap();
        let psi0 = basis.state(2);
        let state_traj = propagate(&m, &w, Initial::State(psi0.clone())).unwrap();
        let unit_traj = propagate(&m, &w, Initial::Unitary(CMat::identity(21, 21))).unwrap();
        let from_unitary = unit_traj.final_unitary().unwrap() * psi0;
        let err = (state_traj.final_state().unwrap() - from_unitary).norm();
        assert!(err < 1e-12, "oracle equivalence violated: {err:e}");
    }

    #[test]
    fn determinant_modulus_stays_one() {
        let m = model();
        let phases: Vec<f64> = (0..80).map(|l| (0.3 * l as f64).cos() * 0.7).collect();
        let w = Waveform::new(0.02, phases).unwrap();
        let u = waveform_unitary(&m, &w).unwrap();
        assert!((u.determinant().norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn energy_is_conserved_under_constant_phase() {
        let m = model();
        let w = Waveform::new(0.02, vec![0.4; 101]).unwrap();
        let h = m.build_hamiltonian(0.4);
        let psi0 = crate::linalg::normalize(&CVec::from_fn(21, |i, _| {
            C64::new(1.0 / (1.0 + i as f64), 0.2 * (i as f64 * 0.77).sin())
        }));
        let traj = propagate(&m, &w, Initial::State(psi0)).unwrap();
        let Frames::State(frames) = &traj.frames else { unreachable!() };
        let energy = |psi: &CVec| (psi.adjoint() * &h * psi)[(0, 0)].re;
        let e0 = energy(&frames[0]);
        for f in frames {
            assert!((energy(f) - e0).abs() < 1e-10);
        }
    }

    #[test]
    fn refine_check_is_exact_for_constant_control() {
        let m = model();
        let w = Waveform::zero(2.0, DT_CEILING).unwrap();
        let report = refine_check(&m, &w, 4).unwrap();
        assert!(report.fidelity_change < 1e-12);
        assert!(!report.flagged);
    }

    #[test]
    fn refine_check_flags_noise_waveforms() {
        let m = model();
        // alternating ±1.5 rad at the sample rate: nothing but unresolved
        // high-frequency content
        let phases: Vec<f64> = (0..101).map(|l| if l % 2 == 0 { 1.5 } else { -1.5 }).collect();
        let w = Waveform::new(0.02, phases).unwrap();
        let report = refine_check(&m, &w, 4).unwrap();
        assert!(report.flagged, "noise drift = {}", report.fidelity_change);
    }

    #[test]
    fn refine_check_rejects_silly_refinements() {
        let m = model();
        let w = Waveform::zero(1.0, DT_CEILING).unwrap();
        assert!(refine_check(&m, &w, 1).is_err());
        assert!(refine_check(&m, &w, 9).is_err());
    }

    #[test]
    fn momentum_population_examples() {
        let m = model();
        let basis = m.bloch_basis().unwrap();
        // even state: p_n symmetric
        let pops = momentum_populations(&basis.state(0)).unwrap();
        for n in 0..=m.n_max() as i64 {
            let plus = pops[m.index_of_momentum(n).unwrap()];
            let minus = pops[m.index_of_momentum(-n).unwrap()];
            assert!((plus - minus).abs() < 1e-12);
        }
        let total: f64 = pops.iter().sum();
        assert!((total - 1.0).abs() < 1e-10);

        // single momentum state |2k_L⟩
        let mut psi = CVec::zeros(21);
        psi[m.index_of_momentum(1).unwrap()] = C64::new(1.0, 0.0);
        let pops = momentum_populations(&psi).unwrap();
        assert_eq!(pops[m.index_of_momentum(1).unwrap()], 1.0);
        assert_eq!(pops.iter().filter(|&&p| p != 0.0).count(), 1);

        // pair state leans on n = +2
        let (plus, _) = basis.momentum_pair_states(4).unwrap();
        let pops = momentum_populations(&plus).unwrap();
        let peak = pops.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(m.momentum_of_index(peak), 2);

        // non-normalized input is a diagnostic failure
        let bad = CVec::from_element(21, C64::new(0.5, 0.0));
        assert!(momentum_populations(&bad).is_err());
    }

    #[test]
    fn time_reverse_is_an_involution() {
        let phases: Vec<f64> = (0..40).map(|l| (0.2 * l as f64).sin()).collect();
        let w = Waveform::new(0.02, phases).unwrap();
        let back = w.time_reverse(true).time_reverse(true);
        assert_eq!(w, back);
        let zero = Waveform::zero(1.0, DT_CEILING).unwrap();
        assert_eq!(zero, zero.time_reverse(true));
    }

    #[test]
    fn waveform_text_round_trip_is_exact() {
        let phases: Vec<f64> = (0..37).map(|l| 0.9 * (0.13 * l as f64).sin()).collect();
        let w = Waveform::new(0.0173, phases).unwrap();
        let mut buf = Vec::new();
        w.write(&mut buf).unwrap();
        let back = Waveform::read(&String::from_utf8(buf).unwrap(), "mem").unwrap();
        assert_eq!(w.dt(), back.dt());
        assert_eq!(w.phases(), back.phases());
    }

    #[test]
    fn waveform_parse_rejects_garbage() {
        assert!(Waveform::read("0\t0.0\tnot_a_number\n", "mem").is_err());
        assert!(Waveform::read("", "mem").is_err());
    }

    #[test]
    fn bloch_history_export_shape() {
        let m = model();
        let basis = m.bloch_basis().unwrap();
        let w = Waveform::zero(0.2, DT_CEILING).unwrap();
        let traj = propagate(&m, &w, Initial::State(basis.state(0))).unwrap();
        let mut buf = Vec::new();
        traj.write_bloch_history(&basis, 8, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), w.steps() + 1);
        assert_eq!(rows[0].split('\t').count(), 10);
    }
}

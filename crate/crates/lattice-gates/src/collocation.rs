//! Direct-collocation nonlinear program for waveform synthesis.
//!
//! Decision variables are the trajectory frames `x_0..x_{N_t}` (states,
//! source-state pairs, or full unitaries, real-vectorized) together with the
//! controls `(φ_l, I_l, Q_l)` at every sample. The dynamics enter as equality
//! constraints `x_{l+1} = exp(-i·H(I_l, Q_l)·Δt)·x_l`, the quadratures are
//! linked to the phase by `I = cos φ`, `Q = sin φ`, the phase is boxed to
//! `[-π, π]` with pinned zero endpoints, and optional minimum-population
//! path constraints act at interior samples. All first derivatives are
//! exact; the transition-map derivative uses the eigendecomposition-based
//! divided-difference formula.

use crate::lattice::{BlochBasis, LatticeModel};
use crate::linalg;
use crate::objectives::{FidelityTerm, LossSpec, SincKernel};
use crate::propagator::Waveform;
use crate::{C64, CMat, CVec, Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;

/// Minimum-population inequality at one interior sample: the population of
/// Bloch band `band`, reached from `source_band`, must be at least
/// `threshold` at sample `sample`.
#[derive(Debug, Clone)]
pub struct PathConstraint {
    pub sample: usize,
    pub band: usize,
    /// Bloch band whose propagated image is monitored. `None` selects the
    /// first trajectory column (the only choice for state-transfer problems).
    pub source_band: Option<usize>,
    pub threshold: f64,
}

/// Path constraint resolved onto the variable layout: the monitored quantity
/// is `|m† · x_{l'} · s|²` with `m` a D-vector and `s` a column-combination
/// vector.
#[derive(Debug, Clone)]
struct ResolvedPath {
    sample: usize,
    monitor: CVec,
    source: CVec,
    threshold: f64,
    label: String,
}

/// Factored one-step transition map.
///
/// `H(I, Q)` is complex-Hermitian tridiagonal with a constant off-diagonal
/// phase, so `H = S·T·S†` for the diagonal phase matrix `S = diag(e^{ikθ})`
/// and a real symmetric tridiagonal `T`. Everything per step reduces to one
/// real tridiagonal eigensolve plus real matrix products, which is several
/// times cheaper than the dense complex route (the propagator module keeps
/// the dense route and serves as the independent cross-check).
#[derive(Debug, Clone)]
pub struct StepFactor {
    /// S diagonal: e^{ikθ} with θ the off-diagonal phase.
    phases: Vec<C64>,
    /// Eigenvectors of the real tridiagonal T, columns ascending.
    vectors: nalgebra::DMatrix<f64>,
    /// Eigenvalues of T (= eigenvalues of H).
    values: nalgebra::DVector<f64>,
    /// e^{-iλ_k·dt}.
    exp_neg: Vec<C64>,
    /// e^{-iθ}: folds the drive couplings into the rotated frame.
    phase_unit: C64,
    dt: f64,
}

impl StepFactor {
    fn build(drift: &[f64], depth: f64, i_ctrl: f64, q_ctrl: f64, dt: f64) -> Result<Self> {
        let dim = drift.len();
        let sub = C64::new(-depth / 4.0 * i_ctrl, depth / 4.0 * q_ctrl);
        let radius = sub.norm();
        let theta = if radius > 0.0 { sub.arg() } else { 0.0 };
        let off = vec![radius; dim.saturating_sub(1)];
        let eig = linalg::symmetric_tridiagonal_eigen(drift, &off)?;
        let phases = (0..dim).map(|k| C64::from_polar(1.0, k as f64 * theta)).collect();
        let exp_neg = eig.values.iter().map(|&v| C64::from_polar(1.0, -v * dt)).collect();
        Ok(Self {
            phases,
            vectors: eig.vectors,
            values: eig.values,
            exp_neg,
            phase_unit: C64::from_polar(1.0, -theta),
            dt,
        })
    }

    fn scale_rows(m: &mut CMat, factors: &[f64], complex: &[C64]) {
        debug_assert!(factors.is_empty() || complex.is_empty());
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if factors.is_empty() {
                    m[(i, j)] *= complex[i];
                } else {
                    m[(i, j)] *= factors[i];
                }
            }
        }
    }

    /// W = V_Tᵀ·(S†·x).
    fn rotate_in(&self, x: &CMat) -> CMat {
        let mut rotated = x.clone();
        let conj: Vec<C64> = self.phases.iter().map(|p| p.conj()).collect();
        Self::scale_rows(&mut rotated, &[], &conj);
        linalg::real_tr_complex_mul(&self.vectors, &rotated)
    }

    /// S·(V_T·w).
    fn rotate_out(&self, w: &CMat) -> CMat {
        let mut out = linalg::real_complex_mul(&self.vectors, w);
        Self::scale_rows(&mut out, &[], &self.phases);
        out
    }

    /// U·x from a precomputed W = rotate_in(x).
    fn apply_from_rotated(&self, w: &CMat) -> CMat {
        let mut scaled = w.clone();
        Self::scale_rows(&mut scaled, &[], &self.exp_neg);
        self.rotate_out(&scaled)
    }

    /// U·x.
    pub fn apply(&self, x: &CMat) -> CMat {
        self.apply_from_rotated(&self.rotate_in(x))
    }

    /// U†·y.
    pub fn apply_adjoint(&self, y: &CMat) -> CMat {
        let mut w = self.rotate_in(y);
        let conj: Vec<C64> = self.exp_neg.iter().map(|p| p.conj()).collect();
        Self::scale_rows(&mut w, &[], &conj);
        self.rotate_out(&w)
    }

    /// Dense U, for diagnostics and cross-checks.
    pub fn dense(&self) -> CMat {
        let dim = self.values.len();
        self.apply(&CMat::identity(dim, dim))
    }
}

/// Exact linearization of one dynamics step, the banded Jacobian block data.
#[derive(Debug, Clone)]
pub struct StepLinearization {
    /// Factored transition map U_l; the residual block depends on frames as
    /// `R_l = x_{l+1} - U_l x_l`.
    pub factor: StepFactor,
    /// (∂U/∂I_l)·x_l.
    pub d_cos: CMat,
    /// (∂U/∂Q_l)·x_l.
    pub d_sin: CMat,
}

/// Gradient of one path constraint with respect to its frame.
#[derive(Debug, Clone)]
pub struct PathLinearization {
    pub sample: usize,
    pub grad_frame: CMat,
}

/// Everything `evaluate` produces: loss, loss gradient, equality residuals,
/// banded Jacobian blocks, and inequality values/gradients.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub fidelity_loss: f64,
    pub penalty: f64,
    pub grad: Vec<f64>,
    pub residuals: Vec<f64>,
    pub steps: Vec<StepLinearization>,
    /// sin φ_l and cos φ_l at the evaluation point (Jacobian entries of the
    /// quadrature-link rows with respect to φ_l).
    pub quad_sin: Vec<f64>,
    pub quad_cos: Vec<f64>,
    /// Inequality values g_j (feasible when g_j >= 0).
    pub path_values: Vec<f64>,
    pub path_grads: Vec<PathLinearization>,
}

/// Loss, equality residuals and inequality values without any derivatives;
/// the cheap path for line searches.
#[derive(Debug, Clone)]
pub struct ValueOnly {
    pub loss: f64,
    pub fidelity_loss: f64,
    pub penalty: f64,
    pub residuals: Vec<f64>,
    pub path_values: Vec<f64>,
}

/// The assembled NLP. Immutable after construction; `evaluate` is reentrant.
#[derive(Debug, Clone)]
pub struct CollocationProblem {
    model: LatticeModel,
    basis: BlochBasis,
    loss: LossSpec,
    kernel: SincKernel,
    initial_frame: CMat,
    duration: f64,
    n_t: usize,
    dt: f64,
    dim: usize,
    cols: usize,
    drive_cos: CMat,
    drive_sin: CMat,
    drift: CMat,
    drift_diag: Vec<f64>,
    paths: Vec<ResolvedPath>,
    name: String,
}

impl CollocationProblem {
    /// Assemble the problem. `initial_state` is required for state-transfer
    /// losses and must be absent otherwise (unitary problems start from the
    /// identity, subspace transfers from the source pair).
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        model: LatticeModel,
        loss: LossSpec,
        initial_state: Option<CVec>,
        duration: f64,
        n_t: usize,
        paths: &[PathConstraint],
        name: impl Into<String>,
    ) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::invalid(format!("duration must be positive, got {duration}")));
        }
        if n_t < 8 {
            return Err(Error::invalid(format!("n_t must be at least 8, got {n_t}")));
        }
        let dim = model.dim();
        let cols = loss.term.frame_columns(dim);
        let basis = model.bloch_basis()?;

        let initial_frame = match (&loss.term, initial_state) {
            (FidelityTerm::StateTransfer { goal }, Some(psi0)) => {
                if psi0.len() != dim {
                    return Err(Error::invalid("initial state dimension mismatch"));
                }
                if (psi0.norm() - 1.0).abs() > 1e-10 {
                    return Err(Error::invalid("initial state must be unit norm"));
                }
                if goal.len() != dim {
                    return Err(Error::invalid("goal state dimension mismatch"));
                }
                CMat::from_columns(&[psi0])
            }
            (FidelityTerm::StateTransfer { .. }, None) => {
                return Err(Error::invalid("state-transfer problems need an initial state"))
            }
            (term, None) => term.initial_frame(dim),
            (_, Some(_)) => {
                return Err(Error::invalid(
                    "initial state is only accepted for state-transfer problems",
                ))
            }
        };

        let dt = duration / n_t as f64;
        let kernel = SincKernel::new(n_t, dt, loss.cutoff)?;

        let resolved = paths
            .iter()
            .map(|p| resolve_path(p, &basis, &loss.term, cols, n_t))
            .collect::<Result<Vec<_>>>()?;

        let drift = model.drift();
        let drift_diag: Vec<f64> = drift.diagonal().iter().map(|z| z.re).collect();
        Ok(Self {
            drive_cos: model.drive_cos(),
            drive_sin: model.drive_sin(),
            drift,
            drift_diag,
            model,
            basis,
            loss,
            kernel,
            initial_frame,
            duration,
            n_t,
            dt,
            dim,
            cols,
            paths: resolved,
            name: name.into(),
        })
    }

    pub fn model(&self) -> &LatticeModel {
        &self.model
    }

    pub fn basis(&self) -> &BlochBasis {
        &self.basis
    }

    pub fn loss_spec(&self) -> &LossSpec {
        &self.loss
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn steps(&self) -> usize {
        self.n_t
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn frame_columns(&self) -> usize {
        self.cols
    }

    pub fn initial_frame(&self) -> &CMat {
        &self.initial_frame
    }

    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    /// Reals per frame: 2·D·cols.
    pub fn frame_len(&self) -> usize {
        2 * self.dim * self.cols
    }

    pub fn num_variables(&self) -> usize {
        (self.n_t + 1) * (self.frame_len() + 3)
    }

    pub fn num_equalities(&self) -> usize {
        // dynamics + initial condition + quadrature links + phase endpoints
        self.n_t * self.frame_len() + self.frame_len() + 2 * (self.n_t + 1) + 2
    }

    fn frame_range(&self, l: usize) -> std::ops::Range<usize> {
        l * self.frame_len()..(l + 1) * self.frame_len()
    }

    /// Offset of φ_l in the variable vector.
    pub fn phase_index(&self, l: usize) -> usize {
        (self.n_t + 1) * self.frame_len() + l
    }

    /// Offset of I_l in the variable vector.
    pub fn cos_index(&self, l: usize) -> usize {
        (self.n_t + 1) * self.frame_len() + (self.n_t + 1) + l
    }

    /// Offset of Q_l in the variable vector.
    pub fn sin_index(&self, l: usize) -> usize {
        (self.n_t + 1) * self.frame_len() + 2 * (self.n_t + 1) + l
    }

    /// Box bounds over the variable vector: φ ∈ [-π, π], everything else free.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.num_variables();
        let mut lower = vec![f64::NEG_INFINITY; n];
        let mut upper = vec![f64::INFINITY; n];
        for l in 0..=self.n_t {
            lower[self.phase_index(l)] = -std::f64::consts::PI;
            upper[self.phase_index(l)] = std::f64::consts::PI;
        }
        (lower, upper)
    }

    fn seeded_phases(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<f64> = (0..5).map(|_| rng.random_range(-0.2..0.2)).collect();
        let mut phases: Vec<f64> = (0..=self.n_t)
            .map(|l| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, a)| {
                        a * (std::f64::consts::PI * (k + 1) as f64 * l as f64 / self.n_t as f64)
                            .sin()
                    })
                    .sum()
            })
            .collect();
        // sin(πk) carries ~1e-16 of roundoff; the endpoints are meant to be
        // exactly pinned
        phases[0] = 0.0;
        phases[self.n_t] = 0.0;
        phases
    }

    /// Band-limited random start: `φ_l = Σ_{k=1..5} a_k sin(πkl/N_t)` with
    /// `a_k ~ U[-0.2, 0.2]` from the seed, rolled out to a dynamics-feasible
    /// variable assignment.
    pub fn initial_guess(&self, seed: u64) -> Vec<f64> {
        self.rollout(&self.seeded_phases(seed))
    }

    /// Target-interpolated start: the same seeded band-limited phases, but
    /// trajectory frames laid along a geodesic from the initial frame to a
    /// target completion instead of a rollout. Deliberately infeasible: the
    /// outer loop then negotiates controls and trajectory toward each other,
    /// which lands in far better basins than rolling forward blind. The
    /// seeded global phase selects among winding classes of the turn path,
    /// adding basin diversity for unitary targets.
    pub fn initial_guess_interpolated(&self, seed: u64) -> Vec<f64> {
        let phases = self.seeded_phases(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x74f6_a2c9);
        let gauge: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let mut vars = vec![0.0; self.num_variables()];
        for (l, &phi) in phases.iter().enumerate() {
            vars[self.phase_index(l)] = phi;
            vars[self.cos_index(l)] = phi.cos();
            vars[self.sin_index(l)] = phi.sin();
        }
        for l in 0..=self.n_t {
            let frame = self.interpolated_frame(l as f64 / self.n_t as f64, gauge);
            linalg::pack_complex(&frame, &mut vars[self.frame_range(l)]);
        }
        vars
    }

    /// Frame at fraction `t` of the interpolated path. The path rides the
    /// free evolution — every Bloch component carries its e^{-iE_ν·t} phase —
    /// with a slow turn from the initial configuration toward a unitary
    /// completion of the target on top. Riding the free dynamics keeps the
    /// initial dynamics residuals small for every frame kind; a bare
    /// straight-line interpolation leaves O(1) residuals on all the
    /// spectator components and the penalty snaps it back to a do-nothing
    /// trajectory before the loss can act.
    fn interpolated_frame(&self, t: f64, gauge: f64) -> CMat {
        let bloch = self.basis.coefficients();
        let time = t * self.duration;
        let free_phase =
            |nu: usize| C64::from_polar(1.0, -self.basis.energy(nu) * time);
        let final_phase =
            |nu: usize| C64::from_polar(1.0, self.basis.energy(nu) * self.duration);

        match &self.loss.term {
            FidelityTerm::StateTransfer { goal } => {
                // slerp in Bloch coordinates, endpoint pre-rotated so the
                // accumulated free phases land exactly on the goal at t = 1
                let start = bloch.adjoint() * &self.initial_frame.column(0);
                let mut end = bloch.adjoint() * goal;
                for nu in 0..self.dim {
                    end[nu] *= final_phase(nu);
                }
                let mut path = slerp(&CVec::from_column_slice(start.as_slice()), &end, t);
                for nu in 0..self.dim {
                    path[nu] *= free_phase(nu);
                }
                CMat::from_columns(&[bloch * path])
            }
            FidelityTerm::Unitary { gate, subspace } => {
                // P† -> U·P† in the Bloch frame: the logical 2x2 block turns,
                // both bands keep their free phases
                let nu = subspace.index();
                let (even_band, odd_band) =
                    if nu % 2 == 0 { (nu, nu - 1) } else { (nu - 1, nu) };
                // the loss is global-phase invariant, so the turn target is
                // only defined up to e^{iγ}; different γ give different
                // winding classes of the interpolation path
                let twist = C64::from_polar(1.0, gauge);
                let effective = CMat::from_row_slice(2, 2, &[
                    twist * final_phase(even_band) * gate[(0, 0)],
                    twist * final_phase(even_band) * gate[(0, 1)],
                    twist * final_phase(odd_band) * gate[(1, 0)],
                    twist * final_phase(odd_band) * gate[(1, 1)],
                ]);
                let turn = logical_fraction(&effective, t);
                let mut in_bloch = CMat::zeros(self.dim, 2);
                in_bloch[(even_band, 0)] = free_phase(even_band) * turn[(0, 0)];
                in_bloch[(even_band, 1)] = free_phase(even_band) * turn[(0, 1)];
                in_bloch[(odd_band, 0)] = free_phase(odd_band) * turn[(1, 0)];
                in_bloch[(odd_band, 1)] = free_phase(odd_band) * turn[(1, 1)];
                bloch * in_bloch
            }
            FidelityTerm::SubspaceTransfer { source, target } => {
                let cols: Vec<CVec> = (0..2)
                    .map(|k| {
                        let start = bloch.adjoint() * source.logical_state(k);
                        let mut end = bloch.adjoint() * target.logical_state(k);
                        for nu in 0..self.dim {
                            end[nu] *= final_phase(nu);
                        }
                        let mut path =
                            slerp(&CVec::from_column_slice(start.as_slice()), &end, t);
                        for nu in 0..self.dim {
                            path[nu] *= free_phase(nu);
                        }
                        bloch * path
                    })
                    .collect();
                CMat::from_columns(&cols)
            }
        }
    }

    /// Dynamics-feasible variable assignment from a phase schedule: the
    /// quadratures are set to (cos φ, sin φ) and the frames to the exact
    /// forward rollout under those quadratures.
    pub fn rollout(&self, phases: &[f64]) -> Vec<f64> {
        assert_eq!(phases.len(), self.n_t + 1, "rollout needs N_t + 1 phase samples");
        let mut vars = vec![0.0; self.num_variables()];
        for (l, &phi) in phases.iter().enumerate() {
            vars[self.phase_index(l)] = phi;
            vars[self.cos_index(l)] = phi.cos();
            vars[self.sin_index(l)] = phi.sin();
        }
        let mut frame = self.initial_frame.clone();
        linalg::pack_complex(&frame, &mut vars[self.frame_range(0)]);
        for l in 0..self.n_t {
            let factor = self.step_factor(vars[self.cos_index(l)], vars[self.sin_index(l)]);
            frame = factor.apply(&frame);
            linalg::pack_complex(&frame, &mut vars[self.frame_range(l + 1)]);
        }
        vars
    }

    /// Dense H(I, Q); reference path for tests and diagnostics.
    pub fn hamiltonian(&self, i_ctrl: f64, q_ctrl: f64) -> CMat {
        &self.drift
            + self.drive_cos.map(|z| z * C64::new(i_ctrl, 0.0))
            + self.drive_sin.map(|z| z * C64::new(q_ctrl, 0.0))
    }

    /// Factored exp(-i·H(I, Q)·Δt) for one step.
    pub fn step_factor(&self, i_ctrl: f64, q_ctrl: f64) -> StepFactor {
        StepFactor::build(&self.drift_diag, self.model.depth(), i_ctrl, q_ctrl, self.dt)
            .expect("tridiagonal eigensolver failed on a drive Hamiltonian")
    }

    /// (∂U/∂I)·x and (∂U/∂Q)·x for a factored step, given the rotated frame
    /// `w = rotate_in(x)`.
    fn control_derivatives(&self, factor: &StepFactor, w: &CMat) -> (CMat, CMat) {
        let dim = self.dim;
        let dt = self.dt;

        // divided-difference data: u_k = λ_k·dt/2, p_k = e^{-iu_k}
        let half: Vec<f64> = factor.values.iter().map(|&v| v * dt / 2.0).collect();
        let sin_h: Vec<f64> = half.iter().map(|u| u.sin()).collect();
        let cos_h: Vec<f64> = half.iter().map(|u| u.cos()).collect();
        let p: Vec<C64> = half.iter().map(|&u| C64::from_polar(1.0, -u)).collect();

        // G = V_Tᵀ·L·V_T with L the down-shift, then the sinc-weighted G̃
        let mut shifted = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        for i in 1..dim {
            for j in 0..dim {
                shifted[(i, j)] = factor.vectors[(i - 1, j)];
            }
        }
        let g = factor.vectors.transpose() * shifted;
        let weighted = nalgebra::DMatrix::<f64>::from_fn(dim, dim, |a, b| {
            let delta = half[a] - half[b];
            let sinc = if delta.abs() < 1e-6 {
                1.0 - delta * delta / 6.0
            } else {
                (sin_h[a] * cos_h[b] - cos_h[a] * sin_h[b]) / delta
            };
            sinc * g[(a, b)]
        });

        let mut pw = w.clone();
        StepFactor::scale_rows(&mut pw, &[], &p);
        let y1 = linalg::real_complex_mul(&weighted, &pw);
        let y2 = linalg::real_tr_complex_mul(&weighted, &pw);

        // drive couplings in the rotated frame: A = a·L + ā·Lᵀ with
        // a_cos = -V0/4, a_sin = +i·V0/4, both twisted by e^{-iθ}
        let depth = self.model.depth();
        let c_cos = C64::new(-depth / 4.0, 0.0) * factor.phase_unit;
        let c_sin = C64::new(0.0, depth / 4.0) * factor.phase_unit;
        let minus_i_dt = C64::new(0.0, -dt);

        let mut derivative = |c: C64| -> CMat {
            let mut combo = CMat::from_fn(y1.nrows(), y1.ncols(), |i, j| {
                minus_i_dt * (c * y1[(i, j)] + c.conj() * y2[(i, j)])
            });
            StepFactor::scale_rows(&mut combo, &[], &p);
            factor.rotate_out(&combo)
        };
        (derivative(c_cos), derivative(c_sin))
    }

    /// Transition map, derivative products and residual for one step.
    fn step_gradient_data(
        &self,
        i_ctrl: f64,
        q_ctrl: f64,
        frame: &CMat,
        next: &CMat,
    ) -> (CMat, StepLinearization) {
        let factor = self.step_factor(i_ctrl, q_ctrl);
        let w = factor.rotate_in(frame);
        let residual = next - factor.apply_from_rotated(&w);
        let (d_cos, d_sin) = self.control_derivatives(&factor, &w);
        (residual, StepLinearization { factor, d_cos, d_sin })
    }

    fn unpack_frame(&self, vars: &[f64], l: usize) -> CMat {
        linalg::unpack_complex(&vars[self.frame_range(l)], self.dim, self.cols)
    }

    /// Trajectory frame `l` of a variable assignment.
    pub fn frame_at(&self, vars: &[f64], l: usize) -> CMat {
        assert!(l <= self.n_t);
        self.unpack_frame(vars, l)
    }

    /// The monitored quantity of each path constraint as
    /// `(sample, monitor, source)` triples, for independent re-measurement.
    pub fn path_targets(&self) -> Vec<(usize, CVec, CVec)> {
        self.paths
            .iter()
            .map(|p| (p.sample, p.monitor.clone(), p.source.clone()))
            .collect()
    }

    fn check_finite(&self, vars: &[f64]) -> Result<()> {
        if vars.len() != self.num_variables() {
            return Err(Error::invalid(format!(
                "variable vector has length {}, layout needs {}",
                vars.len(),
                self.num_variables()
            )));
        }
        if vars.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite value in variable vector"));
        }
        Ok(())
    }

    /// Loss, residuals and path values without derivatives.
    pub fn evaluate_value(&self, vars: &[f64]) -> Result<ValueOnly> {
        self.check_finite(vars)?;
        let frames: Vec<CMat> = (0..=self.n_t).map(|l| self.unpack_frame(vars, l)).collect();

        let step_data: Vec<(usize, CMat)> = (0..self.n_t)
            .into_par_iter()
            .map(|l| {
                let factor = self.step_factor(vars[self.cos_index(l)], vars[self.sin_index(l)]);
                (l, &frames[l + 1] - factor.apply(&frames[l]))
            })
            .collect();

        let mut residuals = vec![0.0; self.num_equalities()];
        for (l, r) in &step_data {
            linalg::pack_complex(r, &mut residuals[self.frame_range(*l)]);
        }
        self.fill_static_residuals(vars, &frames, &mut residuals);

        let fidelity = self.loss.term.evaluate(&frames[self.n_t]);
        let phases: Vec<f64> = (0..=self.n_t).map(|l| vars[self.phase_index(l)]).collect();
        let penalty = self.kernel.penalty(&phases);
        let path_values = self.paths.iter().map(|p| self.path_value(&frames, p)).collect();

        Ok(ValueOnly {
            loss: fidelity + self.loss.penalty_weight * penalty,
            fidelity_loss: fidelity,
            penalty,
            residuals,
            path_values,
        })
    }

    /// Full evaluation: loss, exact gradient, residuals, banded Jacobian
    /// blocks, and path constraint values/gradients.
    pub fn evaluate(&self, vars: &[f64]) -> Result<Evaluation> {
        self.check_finite(vars)?;
        let frames: Vec<CMat> = (0..=self.n_t).map(|l| self.unpack_frame(vars, l)).collect();

        let per_step: Vec<(CMat, StepLinearization)> = (0..self.n_t)
            .into_par_iter()
            .map(|l| {
                self.step_gradient_data(
                    vars[self.cos_index(l)],
                    vars[self.sin_index(l)],
                    &frames[l],
                    &frames[l + 1],
                )
            })
            .collect();

        let mut residuals = vec![0.0; self.num_equalities()];
        let mut steps = Vec::with_capacity(self.n_t);
        for (l, (r, lin)) in per_step.into_iter().enumerate() {
            linalg::pack_complex(&r, &mut residuals[self.frame_range(l)]);
            steps.push(lin);
        }
        self.fill_static_residuals(vars, &frames, &mut residuals);

        let quad_sin: Vec<f64> = (0..=self.n_t).map(|l| vars[self.phase_index(l)].sin()).collect();
        let quad_cos: Vec<f64> = (0..=self.n_t).map(|l| vars[self.phase_index(l)].cos()).collect();

        // loss and its gradient
        let (fidelity, frame_grad) = self.loss.term.evaluate_grad(&frames[self.n_t]);
        let phases: Vec<f64> = (0..=self.n_t).map(|l| vars[self.phase_index(l)]).collect();
        let (penalty, penalty_grad) = self.kernel.penalty_grad(&phases);
        let mut grad = vec![0.0; self.num_variables()];
        linalg::pack_complex(&frame_grad, &mut grad[self.frame_range(self.n_t)]);
        for l in 0..=self.n_t {
            grad[self.phase_index(l)] += self.loss.penalty_weight * penalty_grad[l];
        }

        let mut path_values = Vec::with_capacity(self.paths.len());
        let mut path_grads = Vec::with_capacity(self.paths.len());
        for p in &self.paths {
            let amplitude = self.path_amplitude(&frames, p);
            path_values.push(amplitude.norm_sqr() - p.threshold);
            let outer = &p.monitor * p.source.adjoint();
            path_grads.push(PathLinearization {
                sample: p.sample,
                grad_frame: outer.map(|o| 2.0 * amplitude * o),
            });
        }

        Ok(Evaluation {
            loss: fidelity + self.loss.penalty_weight * penalty,
            fidelity_loss: fidelity,
            penalty,
            grad,
            residuals,
            steps,
            quad_sin,
            quad_cos,
            path_values,
            path_grads,
        })
    }

    fn fill_static_residuals(&self, vars: &[f64], frames: &[CMat], residuals: &mut [f64]) {
        let flen = self.frame_len();
        let init = &frames[0] - &self.initial_frame;
        linalg::pack_complex(&init, &mut residuals[self.n_t * flen..(self.n_t + 1) * flen]);
        let quad_base = (self.n_t + 1) * flen;
        for l in 0..=self.n_t {
            let phi = vars[self.phase_index(l)];
            residuals[quad_base + 2 * l] = vars[self.cos_index(l)] - phi.cos();
            residuals[quad_base + 2 * l + 1] = vars[self.sin_index(l)] - phi.sin();
        }
        let end_base = quad_base + 2 * (self.n_t + 1);
        residuals[end_base] = vars[self.phase_index(0)];
        residuals[end_base + 1] = vars[self.phase_index(self.n_t)];
    }

    fn path_amplitude(&self, frames: &[CMat], p: &ResolvedPath) -> C64 {
        (p.monitor.adjoint() * &frames[p.sample] * &p.source)[(0, 0)]
    }

    fn path_value(&self, frames: &[CMat], p: &ResolvedPath) -> f64 {
        self.path_amplitude(frames, p).norm_sqr() - p.threshold
    }

    /// Accumulate `Jᵀ·y` for the equality constraints into `out`.
    pub fn add_jacobian_transpose(&self, eval: &Evaluation, y: &[f64], out: &mut [f64]) {
        assert_eq!(y.len(), self.num_equalities());
        assert_eq!(out.len(), self.num_variables());
        let flen = self.frame_len();

        // dynamics blocks
        for (l, lin) in eval.steps.iter().enumerate() {
            let y_block = linalg::unpack_complex(&y[l * flen..(l + 1) * flen], self.dim, self.cols);
            // ∂R_l/∂x_{l+1} = Id
            {
                let dest = &mut out[self.frame_range(l + 1)];
                for (k, z) in y_block.iter().enumerate() {
                    dest[2 * k] += z.re;
                    dest[2 * k + 1] += z.im;
                }
            }
            // ∂R_l/∂x_l = -U_l (columnwise): transpose action is -U_l†
            {
                let pulled = lin.factor.apply_adjoint(&y_block);
                let dest = &mut out[self.frame_range(l)];
                for (k, z) in pulled.iter().enumerate() {
                    dest[2 * k] -= z.re;
                    dest[2 * k + 1] -= z.im;
                }
            }
            // ∂R_l/∂I_l = -d_cos, ∂R_l/∂Q_l = -d_sin
            out[self.cos_index(l)] -= linalg::packed_dot(&lin.d_cos, &y_block);
            out[self.sin_index(l)] -= linalg::packed_dot(&lin.d_sin, &y_block);
        }

        // initial condition block: identity on frame 0
        {
            let y_init = &y[self.n_t * flen..(self.n_t + 1) * flen];
            let dest = &mut out[self.frame_range(0)];
            for (k, v) in y_init.iter().enumerate() {
                dest[k] += v;
            }
        }

        // quadrature links
        let quad_base = (self.n_t + 1) * flen;
        for l in 0..=self.n_t {
            let y_i = y[quad_base + 2 * l];
            let y_q = y[quad_base + 2 * l + 1];
            out[self.cos_index(l)] += y_i;
            out[self.sin_index(l)] += y_q;
            out[self.phase_index(l)] += y_i * eval.quad_sin[l] - y_q * eval.quad_cos[l];
        }

        // phase endpoints
        let end_base = quad_base + 2 * (self.n_t + 1);
        out[self.phase_index(0)] += y[end_base];
        out[self.phase_index(self.n_t)] += y[end_base + 1];
    }

    /// Accumulate `weight · ∇g_j` for path constraint `j` into `out`.
    pub fn add_path_gradient(&self, eval: &Evaluation, j: usize, weight: f64, out: &mut [f64]) {
        let lin = &eval.path_grads[j];
        let dest = &mut out[self.frame_range(lin.sample)];
        for (k, z) in lin.grad_frame.iter().enumerate() {
            dest[2 * k] += weight * z.re;
            dest[2 * k + 1] += weight * z.im;
        }
    }

    /// First-order (costate) estimate of the equality multipliers at a
    /// variable assignment: the dynamics-block multipliers are set to the
    /// adjoint states of the loss, `λ_{N-1} = -∂L/∂x_N`,
    /// `λ_{l-1} = U_l†·λ_l`, which makes the augmented Lagrangian stationary
    /// in the trajectory frames. Quadrature and endpoint blocks start at
    /// zero. Used to warm-start target-interpolated restarts so the penalty
    /// does not simply collapse the interpolation.
    pub fn costate_multipliers(&self, vars: &[f64]) -> Vec<f64> {
        let mut lambda = vec![0.0; self.num_equalities()];
        let frames_last = self.unpack_frame(vars, self.n_t);
        let (_, frame_grad) = self.loss.term.evaluate_grad(&frames_last);
        let mut adjoint = frame_grad.map(|z| -z);
        let flen = self.frame_len();
        for l in (0..self.n_t).rev() {
            linalg::pack_complex(&adjoint, &mut lambda[l * flen..(l + 1) * flen]);
            let factor = self.step_factor(vars[self.cos_index(l)], vars[self.sin_index(l)]);
            adjoint = factor.apply_adjoint(&adjoint);
        }
        // initial-condition block: the pull-back through step 0
        linalg::pack_complex(&adjoint, &mut lambda[self.n_t * flen..(self.n_t + 1) * flen]);
        lambda
    }

    /// Reduced (feasible-manifold) objective and its exact gradient with
    /// respect to the phase samples alone: frames are the rollout of φ,
    /// quadratures sit on the circle, and the trajectory sensitivity is
    /// accumulated by one adjoint sweep. Inequality path constraints enter
    /// through the caller-supplied augmented-Lagrangian weights
    /// `(μ_j, ρ)`; pass an empty slice to get the bare objective.
    ///
    /// Endpoint samples are pinned: their gradient entries are zeroed.
    pub fn reduced_objective_grad(
        &self,
        phases: &[f64],
        path_multipliers: &[f64],
        path_penalty: f64,
    ) -> (f64, Vec<f64>, Vec<f64>) {
        assert_eq!(phases.len(), self.n_t + 1);
        assert_eq!(path_multipliers.len(), self.paths.len());

        // forward rollout, keeping every frame and step factor
        let mut frames: Vec<CMat> = Vec::with_capacity(self.n_t + 1);
        frames.push(self.initial_frame.clone());
        let factors: Vec<StepFactor> = (0..self.n_t)
            .map(|l| {
                let factor = self.step_factor(phases[l].cos(), phases[l].sin());
                let next = factor.apply(frames.last().unwrap());
                frames.push(next);
                factor
            })
            .collect();

        let (fidelity, frame_grad) = self.loss.term.evaluate_grad(&frames[self.n_t]);
        let (penalty, penalty_grad) = self.kernel.penalty_grad(phases);
        let mut objective = fidelity + self.loss.penalty_weight * penalty;
        let mut grad: Vec<f64> = penalty_grad
            .iter()
            .map(|g| self.loss.penalty_weight * g)
            .collect();

        // adjoint seed: dL/dx at the final frame, plus path terms injected
        // at their samples during the backward sweep
        let mut path_values = Vec::with_capacity(self.paths.len());
        let mut path_injections: Vec<(usize, CMat)> = Vec::new();
        for (p, &mu) in self.paths.iter().zip(path_multipliers) {
            let amplitude = self.path_amplitude(&frames, p);
            let g_val = amplitude.norm_sqr() - p.threshold;
            path_values.push(g_val);
            if path_penalty > 0.0 {
                let shifted = (mu - path_penalty * g_val).max(0.0);
                objective += (shifted * shifted - mu * mu) / (2.0 * path_penalty);
                if shifted > 0.0 {
                    let outer = &p.monitor * p.source.adjoint();
                    path_injections
                        .push((p.sample, outer.map(|o| -shifted * 2.0 * amplitude * o)));
                }
            }
        }

        // backward sweep: the adjoint carries dObjective/d(frame_{l+1})
        let mut adjoint = frame_grad;
        for l in (0..self.n_t).rev() {
            for (sample, injection) in &path_injections {
                if *sample == l + 1 {
                    adjoint += injection;
                }
            }
            let w = factors[l].rotate_in(&frames[l]);
            let (d_cos, d_sin) = self.control_derivatives(&factors[l], &w);
            // ∂U/∂φ = -sin(φ)·∂U/∂I + cos(φ)·∂U/∂Q
            let du_dphi = d_cos.map(|z| z * C64::new(-phases[l].sin(), 0.0))
                + d_sin.map(|z| z * C64::new(phases[l].cos(), 0.0));
            grad[l] += linalg::packed_dot(&du_dphi, &adjoint);
            adjoint = factors[l].apply_adjoint(&adjoint);
        }

        grad[0] = 0.0;
        grad[self.n_t] = 0.0;
        (objective, grad, path_values)
    }

    /// Phase samples of a variable assignment as a waveform. Values are
    /// clamped to the box and the endpoints snapped to exactly zero (the
    /// solve drives them below the constraint tolerance anyway).
    pub fn extract_waveform(&self, vars: &[f64]) -> Result<Waveform> {
        let mut phases: Vec<f64> = (0..=self.n_t)
            .map(|l| vars[self.phase_index(l)].clamp(-std::f64::consts::PI, std::f64::consts::PI))
            .collect();
        phases[0] = 0.0;
        phases[self.n_t] = 0.0;
        Waveform::new(self.dt, phases)
    }

    /// Structured text dump of the problem layout for debugging.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "collocation problem: {}", self.name);
        let _ = writeln!(
            s,
            "  model: V0 = {} wr, N_max = {}, q~ = {}",
            self.model.depth(),
            self.model.n_max(),
            self.model.quasimomentum()
        );
        let _ = writeln!(s, "  duration: {} wr^-1, N_t = {}, dt = {:.6}", self.duration, self.n_t, self.dt);
        let kind = match self.loss.term {
            FidelityTerm::StateTransfer { .. } => "state transfer",
            FidelityTerm::Unitary { .. } => "logical unitary",
            FidelityTerm::SubspaceTransfer { .. } => "subspace transfer",
        };
        let _ = writeln!(s, "  loss: {kind} + {} * band-limit penalty (cutoff {} wr)",
            self.loss.penalty_weight, self.loss.cutoff);
        let _ = writeln!(s, "  frames: {} x {} complex, {} per frame", self.dim, self.cols, self.frame_len());
        let _ = writeln!(s, "  variables: {}", self.num_variables());
        let _ = writeln!(
            s,
            "  equalities: {} (dynamics {}, initial {}, quadrature {}, endpoints 2)",
            self.num_equalities(),
            self.n_t * self.frame_len(),
            self.frame_len(),
            2 * (self.n_t + 1)
        );
        let _ = writeln!(s, "  inequalities: {}", self.paths.len());
        for p in &self.paths {
            let _ = writeln!(s, "    {}", p.label);
        }
        s
    }
}

fn resolve_path(
    p: &PathConstraint,
    basis: &BlochBasis,
    term: &FidelityTerm,
    cols: usize,
    n_t: usize,
) -> Result<ResolvedPath> {
    if !(0.0..1.0).contains(&p.threshold) || p.threshold <= 0.0 {
        return Err(Error::invalid(format!(
            "path threshold must lie in (0, 1), got {}",
            p.threshold
        )));
    }
    if p.sample < 1 || p.sample > n_t - 1 {
        return Err(Error::invalid(format!(
            "path sample {} outside interior 1..{}",
            p.sample,
            n_t - 1
        )));
    }
    if p.band >= basis.dim() {
        return Err(Error::invalid(format!("monitored band {} outside basis", p.band)));
    }
    let monitor = basis.state(p.band);
    let dim = basis.dim();

    // frames carry one column per propagated source state; pick the column
    // matching the requested source band
    let column_pick = |subspace: &crate::lattice::QubitSubspace| -> Result<(CVec, String)> {
        let nu = subspace.index();
        let even_band = if nu % 2 == 0 { nu } else { nu - 1 };
        let odd_band = if nu % 2 == 0 { nu - 1 } else { nu };
        let src_band = p.source_band.unwrap_or(even_band);
        let col = if src_band == even_band {
            0
        } else if src_band == odd_band {
            1
        } else {
            return Err(Error::invalid(format!(
                "source band {src_band} is not a member of the source pair ({odd_band}, {even_band})"
            )));
        };
        let mut s = CVec::zeros(cols);
        s[col] = C64::new(1.0, 0.0);
        Ok((s, format!("|{src_band}>_B")))
    };

    let (source, label_src) = match term {
        FidelityTerm::Unitary { subspace, .. } => column_pick(subspace)?,
        FidelityTerm::SubspaceTransfer { source, .. } => column_pick(source)?,
        FidelityTerm::StateTransfer { .. } => {
            if p.source_band.is_some() {
                return Err(Error::invalid(
                    "state-transfer path constraints monitor the single trajectory; omit source_band",
                ));
            }
            let mut s = CVec::zeros(cols);
            s[0] = C64::new(1.0, 0.0);
            (s, "trajectory".to_string())
        }
    };
    let _ = dim;

    Ok(ResolvedPath {
        sample: p.sample,
        monitor,
        source,
        threshold: p.threshold,
        label: format!(
            "population of |{}>_B from {} at sample {} >= {}",
            p.band, label_src, p.sample, p.threshold
        ),
    })
}

/// Reversed-and-negated waveform `φ'_l = -φ_{N_t-l}`, the time-reversal map
/// validated (and possibly flipped) by the gate catalog's inverse derivation.
pub fn time_reverse(waveform: &Waveform) -> Waveform {
    waveform.time_reverse(true)
}

/// Great-circle interpolation between two unit vectors.
fn slerp(from: &CVec, to: &CVec, t: f64) -> CVec {
    let overlap = (from.adjoint() * to)[(0, 0)];
    // rotate the target so the pair is in phase, then walk the real angle
    let aligned = if overlap.norm() > 1e-12 {
        to * (overlap / C64::new(overlap.norm(), 0.0)).conj()
    } else {
        to.clone()
    };
    let cos_angle = overlap.norm().clamp(-1.0, 1.0);
    let angle = cos_angle.acos();
    if angle < 1e-9 {
        return linalg::normalize(&(from * C64::new(1.0 - t, 0.0) + aligned * C64::new(t, 0.0)));
    }
    let a = ((1.0 - t) * angle).sin() / angle.sin();
    let b = (t * angle).sin() / angle.sin();
    linalg::normalize(&(from * C64::new(a, 0.0) + aligned * C64::new(b, 0.0)))
}

/// Fractional power of a 2x2 unitary along its geodesic from the identity:
/// `W^t` via the eigendecomposition of the Hermitian generator.
fn logical_fraction(gate: &CMat, t: f64) -> CMat {
    // W = V diag(e^{iθ_k}) V† with Hermitian W'... use the generator
    // H = -i log W obtained from the unitary eigenproblem of the 2x2 block
    let a = gate[(0, 0)];
    let b = gate[(0, 1)];
    let c = gate[(1, 0)];
    let d = gate[(1, 1)];
    // eigenvalues of a 2x2 matrix
    let tr = a + d;
    let det = a * d - b * c;
    let disc = (tr * tr - det * C64::new(4.0, 0.0)).sqrt();
    let l1 = (tr + disc) * C64::new(0.5, 0.0);
    let l2 = (tr - disc) * C64::new(0.5, 0.0);
    let frac = |l: C64| C64::from_polar(1.0, t * l.arg());
    if (l1 - l2).norm() < 1e-12 {
        return CMat::from_row_slice(2, 2, &[frac(l1), C64::new(0.0, 0.0), C64::new(0.0, 0.0), frac(l1)]);
    }
    // spectral projectors: P1 = (W - l2)/(l1 - l2), P2 = 1 - P1
    let ident = CMat::identity(2, 2);
    let p1 = (gate - &ident * l2) / (l1 - l2);
    let p2 = &ident - &p1;
    p1 * frac(l1) + p2 * frac(l2)
}

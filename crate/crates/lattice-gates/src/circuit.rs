//! Composition of catalog waveforms and free-evolution segments into full
//! interferometer sequences, plus their simulation.
//!
//! Program files are line-oriented: one segment per line (`SPLIT 3`,
//! `PROPAGATE 2.0`, `HOLD`, `RECOMBINE 3`), `#` comments allowed. Junctions
//! are continuous because every gate waveform starts and ends at φ = 0, and
//! free evolution is simulated in the static lattice (the atoms stay
//! confined throughout).

use crate::catalog::{GateKind, GateSpec};
use crate::lattice::BlochBasis;
use crate::propagator::{self, Initial, Trajectory, Waveform};
use crate::{CVec, Error, Result};
use std::collections::HashMap;

/// One entry of a circuit program.
#[derive(Debug, Clone)]
pub enum Segment {
    Gate(GateSpec),
    Propagate(f64),
}

impl Segment {
    pub fn name(&self) -> String {
        match self {
            Segment::Gate(spec) => spec.name(),
            Segment::Propagate(t) => format!("PROPAGATE@{t}"),
        }
    }
}

/// An ordered gate sequence with its initial state (default: the ground
/// Bloch state).
#[derive(Debug, Clone)]
pub struct CircuitProgram {
    pub segments: Vec<Segment>,
    pub initial_band: usize,
}

impl CircuitProgram {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments, initial_band: 0 }
    }

    /// Parse the line-oriented program format.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut segments = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let kind = GateKind::parse(line).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
            let segment = match kind {
                GateKind::Propagate(t) => Segment::Propagate(t),
                other => Segment::Gate(GateSpec::from_kind(other).map_err(|e| Error::Parse {
                    path: origin.to_string(),
                    line: idx + 1,
                    msg: e.to_string(),
                })?),
            };
            segments.push(segment);
        }
        Ok(Self::new(segments))
    }

    pub fn total_duration(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Gate(g) => g.duration,
                Segment::Propagate(t) => *t,
            })
            .sum()
    }
}

/// Registered gate waveforms, keyed by canonical gate name.
#[derive(Debug, Clone, Default)]
pub struct WaveformLibrary {
    map: HashMap<String, Waveform>,
}

impl WaveformLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, waveform: Waveform) {
        self.map.insert(name.into(), waveform);
    }

    pub fn get(&self, name: &str) -> Option<&Waveform> {
        self.map.get(name)
    }

    pub fn names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.map.keys().map(|s| s.as_str()).collect();
        names.sort_unstable();
        names
    }
}

/// Concatenate a program into a single waveform. PROPAGATE segments
/// contribute zero phase on the shared sample grid (their duration rounds to
/// the nearest whole number of samples). Returns None for an empty program.
pub fn compose(program: &CircuitProgram, library: &WaveformLibrary) -> Result<Option<Waveform>> {
    // the grid step comes from the first gate segment; a pure-propagate
    // program falls back to the default ceiling
    let dt = program
        .segments
        .iter()
        .find_map(|s| match s {
            Segment::Gate(g) => library.get(&g.name()).map(|w| w.dt()),
            Segment::Propagate(_) => None,
        })
        .unwrap_or(propagator::DT_CEILING);

    let mut combined: Option<Waveform> = None;
    for segment in &program.segments {
        let next = match segment {
            Segment::Gate(spec) => library
                .get(&spec.name())
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "gate {} has no registered waveform (known: {})",
                        spec.name(),
                        library.names().join(", ")
                    ))
                })?
                .clone(),
            Segment::Propagate(duration) => {
                let steps = (duration / dt).round().max(1.0) as usize;
                Waveform::new(dt, vec![0.0; steps + 1])?
            }
        };
        combined = Some(match combined {
            None => next,
            Some(w) => w.concatenate(&next)?,
        });
    }
    Ok(combined)
}

/// A composed and simulated program.
#[derive(Debug)]
pub struct ProgramRun {
    pub waveform: Waveform,
    pub trajectory: Trajectory,
    /// Time-of-flight readout of the final state.
    pub momentum_populations: Vec<f64>,
}

/// Compose and propagate a program from its initial Bloch state, recording
/// the Bloch-population history and the final momentum populations.
pub fn simulate_program(
    basis: &BlochBasis,
    program: &CircuitProgram,
    library: &WaveformLibrary,
) -> Result<ProgramRun> {
    let waveform = compose(program, library)?
        .ok_or_else(|| Error::invalid("cannot simulate an empty program"))?;
    if program.initial_band >= basis.dim() {
        return Err(Error::invalid(format!(
            "initial band {} outside basis",
            program.initial_band
        )));
    }
    let initial: CVec = basis.state(program.initial_band);
    let trajectory = propagator::propagate(basis.model(), &waveform, Initial::State(initial))?;
    let momentum_populations = propagator::momentum_populations(
        trajectory.final_state().expect("state propagation yields states"),
    )?;
    Ok(ProgramRun { waveform, trajectory, momentum_populations })
}

/// Sweep the duration of the single PROPAGATE segment of a program and
/// record the final population of the monitor band (default |0⟩_B) at each
/// setting — the interference fringe of a split/recombine pair.
pub fn sweep_propagate(
    basis: &BlochBasis,
    program: &CircuitProgram,
    library: &WaveformLibrary,
    durations: &[f64],
    monitor_band: usize,
) -> Result<Vec<(f64, f64)>> {
    let slot = program
        .segments
        .iter()
        .position(|s| matches!(s, Segment::Propagate(_)))
        .ok_or_else(|| Error::invalid("sweep needs a PROPAGATE segment"))?;
    if program
        .segments
        .iter()
        .filter(|s| matches!(s, Segment::Propagate(_)))
        .count()
        > 1
    {
        return Err(Error::invalid("sweep needs exactly one PROPAGATE segment"));
    }

    let monitor = basis.state(monitor_band);
    durations
        .iter()
        .map(|&tau| {
            let mut swept = program.clone();
            swept.segments[slot] = Segment::Propagate(tau);
            let run = simulate_program(basis, &swept, library)?;
            // realized duration after grid rounding
            let realized: f64 = run.waveform.duration()
                - program
                    .segments
                    .iter()
                    .filter_map(|s| match s {
                        Segment::Gate(g) => library.get(&g.name()).map(|w| w.duration()),
                        Segment::Propagate(_) => None,
                    })
                    .sum::<f64>();
            let overlap = (monitor.adjoint() * run.trajectory.final_state().unwrap())[(0, 0)];
            Ok((realized, overlap.norm_sqr()))
        })
        .collect()
}

/// Least-squares fit of `p(τ) = a + b·cos(ωτ) + c·sin(ωτ)` over a frequency
/// scan with parabolic refinement; returns the best ω and the fringe
/// amplitude `hypot(b, c)`.
pub fn fit_fringe_frequency(samples: &[(f64, f64)], omega_lo: f64, omega_hi: f64) -> (f64, f64) {
    assert!(samples.len() >= 8, "fringe fit needs a few periods of data");
    let sse = |omega: f64| -> (f64, f64) {
        // normal equations for the 3-parameter linear model at fixed ω
        let mut ata = [[0.0f64; 3]; 3];
        let mut atb = [0.0f64; 3];
        for &(t, p) in samples {
            let row = [1.0, (omega * t).cos(), (omega * t).sin()];
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += row[i] * row[j];
                }
                atb[i] += row[i] * p;
            }
        }
        // 3x3 Gaussian elimination
        let mut a = ata;
        let mut b = atb;
        for col in 0..3 {
            let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, pivot);
            b.swap(col, pivot);
            for row in col + 1..3 {
                let f = a[row][col] / a[col][col];
                for k in col..3 {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = [0.0f64; 3];
        for row in (0..3).rev() {
            let mut acc = b[row];
            for k in row + 1..3 {
                acc -= a[row][k] * x[k];
            }
            x[row] = acc / a[row][row];
        }
        let mut err = 0.0;
        for &(t, p) in samples {
            let model = x[0] + x[1] * (omega * t).cos() + x[2] * (omega * t).sin();
            err += (p - model) * (p - model);
        }
        (err, x[1].hypot(x[2]))
    };

    let grid = 600;
    let mut best = (f64::INFINITY, omega_lo, 0.0);
    for k in 0..=grid {
        let omega = omega_lo + (omega_hi - omega_lo) * k as f64 / grid as f64;
        let (err, amp) = sse(omega);
        if err < best.0 {
            best = (err, omega, amp);
        }
    }
    // parabolic refinement around the best grid point
    let step = (omega_hi - omega_lo) / grid as f64;
    let (e0, om, _) = best;
    let (em, _) = sse(om - step);
    let (ep, _) = sse(om + step);
    let denom = em - 2.0 * e0 + ep;
    let refined = if denom > 0.0 { om + 0.5 * step * (em - ep) / denom } else { om };
    let (_, amp) = sse(refined);
    (refined, amp)
}

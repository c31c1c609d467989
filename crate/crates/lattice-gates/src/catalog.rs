//! Named gate problems: the operation set of the interferometer with its
//! durations, targets, and extra constraints, plus time-reversal derivation
//! of the inverse operations.

use crate::collocation::{self, CollocationProblem, PathConstraint};
use crate::lattice::BlochBasis;
use crate::objectives::{FidelityTerm, LossSpec};
use crate::propagator::{Waveform, DT_CEILING};
use crate::solver::assess_waveform;
use crate::{C64, CMat, CVec, Error, Result};
use serde::Serialize;

/// The gate families of the catalog.
#[derive(Debug, Clone, PartialEq)]
pub enum GateKind {
    /// |0⟩_B → |ν⟩_B beam splitter.
    Split(usize),
    /// |ν⟩_B → |0⟩_B, time reversal of Split.
    Recombine(usize),
    /// Pauli X on the Π_ν qubit.
    PauliX(usize),
    /// Pauli Z on the Π_ν qubit (the mirror operation).
    PauliZ(usize),
    /// Hadamard on the Π_ν qubit.
    Hadamard(usize),
    /// T = Z^(1/4) on the Π_ν qubit.
    TGate(usize),
    /// x-axis rotation by an angle in (-2π, 2π].
    RotX(usize, f64),
    /// z-axis rotation (partial mirror) by an angle in (-2π, 2π].
    RotZ(usize, f64),
    /// Subspace transfer Π_ν → Π_{ν+2} (acceleration).
    Boost(usize),
    /// Subspace transfer Π_ν → Π_{ν-2}, time reversal of Boost.
    Slow(usize),
    /// Π_4 → Π_1: bring the atoms to rest in the valence band.
    Hold,
    /// Π_1 → Π_4, time reversal of Hold.
    Release,
    /// Free evolution in the static lattice for the given duration.
    Propagate(f64),
}

/// How a gate's waveform comes to exist.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Provenance {
    Optimized,
    TimeReversedFrom(String),
    Analytic,
}

/// A fully specified gate problem: target, duration, grid, constraints.
#[derive(Debug, Clone)]
pub struct GateSpec {
    pub kind: GateKind,
    pub duration: f64,
    pub n_t: usize,
    pub paths: Vec<PathConstraint>,
    pub provenance: Provenance,
}

/// `ceil(T / dt_ceiling)` with protection against float-ratio epsilon
/// (1.88/0.02 must give 94, not 95).
pub fn steps_for_duration(duration: f64, dt_ceiling: f64) -> usize {
    ((duration / dt_ceiling) - 1e-9).ceil().max(1.0) as usize
}

impl GateKind {
    /// Canonical catalog name, e.g. `SPLIT3`, `RZ4@1.570796`, `HOLD`.
    pub fn name(&self) -> String {
        match self {
            GateKind::Split(nu) => format!("SPLIT{nu}"),
            GateKind::Recombine(nu) => format!("RECOMBINE{nu}"),
            GateKind::PauliX(nu) => format!("X{nu}"),
            GateKind::PauliZ(nu) => format!("Z{nu}"),
            GateKind::Hadamard(nu) => format!("H{nu}"),
            GateKind::TGate(nu) => format!("T{nu}"),
            GateKind::RotX(nu, angle) => format!("RX{nu}@{angle:.6}"),
            GateKind::RotZ(nu, angle) => format!("RZ{nu}@{angle:.6}"),
            GateKind::Boost(nu) => format!("BOOST{nu}"),
            GateKind::Slow(nu) => format!("SLOW{nu}"),
            GateKind::Hold => "HOLD".to_string(),
            GateKind::Release => "RELEASE".to_string(),
            GateKind::Propagate(t) => format!("PROPAGATE@{t}"),
        }
    }

    /// Parse `NAME`, `NAMEν`, `NAMEν@angle` or the space-separated program
    /// form (`SPLIT 3`, `RZ 4 0.785`, `PROPAGATE 2.0`).
    pub fn parse(text: &str) -> Result<GateKind> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(Error::invalid("empty gate name"));
        }
        let compact = if tokens.len() == 1 {
            tokens[0].to_string()
        } else {
            // program form: an integer argument is a band-index suffix
            // (`SPLIT 3` -> SPLIT3), anything else an @-argument
            // (`RZ 4 0.785` -> RZ4@0.785); PROPAGATE always takes a duration
            if tokens.len() > 3 {
                return Err(Error::invalid(format!("too many tokens in gate name: {text}")));
            }
            let mut s = tokens[0].to_string();
            let duration_arg = tokens[0].eq_ignore_ascii_case("PROPAGATE");
            if !duration_arg && tokens[1].parse::<usize>().is_ok() {
                s.push_str(tokens[1]);
                if let Some(extra) = tokens.get(2) {
                    s.push('@');
                    s.push_str(extra);
                }
            } else {
                if tokens.len() > 2 {
                    return Err(Error::invalid(format!("too many tokens in gate name: {text}")));
                }
                s.push('@');
                s.push_str(tokens[1]);
            }
            s
        };
        let compact = compact.to_uppercase();

        let (head, angle) = match compact.split_once('@') {
            Some((h, a)) => {
                let angle: f64 = a.parse().map_err(|_| {
                    Error::invalid(format!("bad angle or duration in gate name: {text}"))
                })?;
                (h.to_string(), Some(angle))
            }
            None => (compact.clone(), None),
        };

        let split_suffix = |prefix: &str, head: &str| -> Option<usize> {
            head.strip_prefix(prefix).and_then(|rest| rest.parse().ok())
        };

        if head == "PROPAGATE" {
            let t = angle.ok_or_else(|| Error::invalid("PROPAGATE needs a duration"))?;
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::invalid(format!("PROPAGATE duration must be positive: {t}")));
            }
            return Ok(GateKind::Propagate(t));
        }
        if head == "HOLD" {
            return Ok(GateKind::Hold);
        }
        if head == "RELEASE" {
            return Ok(GateKind::Release);
        }

        let check_angle = |angle: Option<f64>| -> Result<f64> {
            let a = angle.ok_or_else(|| Error::invalid("rotation gate needs an angle"))?;
            if !(a.is_finite() && a > -2.0 * std::f64::consts::PI - 1e-12
                && a <= 2.0 * std::f64::consts::PI + 1e-12)
            {
                return Err(Error::invalid(format!("rotation angle {a} outside (-2pi, 2pi]")));
            }
            Ok(a)
        };

        if let Some(nu) = split_suffix("SPLIT", &head) {
            return Ok(GateKind::Split(nu));
        }
        if let Some(nu) = split_suffix("RECOMBINE", &head) {
            return Ok(GateKind::Recombine(nu));
        }
        if let Some(nu) = split_suffix("BOOST", &head) {
            return Ok(GateKind::Boost(nu));
        }
        if let Some(nu) = split_suffix("SLOW", &head) {
            return Ok(GateKind::Slow(nu));
        }
        if let Some(nu) = split_suffix("RX", &head) {
            return Ok(GateKind::RotX(nu, check_angle(angle)?));
        }
        if let Some(nu) = split_suffix("RZ", &head) {
            return Ok(GateKind::RotZ(nu, check_angle(angle)?));
        }
        if let Some(nu) = split_suffix("X", &head) {
            return Ok(GateKind::PauliX(nu));
        }
        if let Some(nu) = split_suffix("Z", &head) {
            return Ok(GateKind::PauliZ(nu));
        }
        if let Some(nu) = split_suffix("H", &head) {
            return Ok(GateKind::Hadamard(nu));
        }
        if let Some(nu) = split_suffix("T", &head) {
            return Ok(GateKind::TGate(nu));
        }
        Err(Error::invalid(format!("unknown gate: {text}")))
    }

    /// Paper durations for the catalog gates; None when the family has no
    /// tabulated duration at this index.
    pub fn default_duration(&self) -> Option<f64> {
        match self {
            GateKind::Split(3) | GateKind::Recombine(3) => Some(1.88),
            GateKind::PauliX(4) | GateKind::RotX(4, _) => Some(1.50),
            GateKind::PauliZ(4) | GateKind::RotZ(4, _) => Some(3.00),
            GateKind::Hadamard(4) => Some(3.50),
            GateKind::TGate(4) => Some(2.50),
            GateKind::PauliZ(6) | GateKind::RotZ(6, _) => Some(4.50),
            GateKind::Boost(4) | GateKind::Slow(6) => Some(1.75),
            GateKind::Hold | GateKind::Release => Some(1.75),
            GateKind::Propagate(t) => Some(*t),
            _ => None,
        }
    }

    /// The optimized gate this one is the time reversal of, if any.
    pub fn reversal_source(&self) -> Option<GateKind> {
        match self {
            GateKind::Recombine(nu) => Some(GateKind::Split(*nu)),
            GateKind::Slow(nu) => Some(GateKind::Boost(nu - 2)),
            GateKind::Release => Some(GateKind::Hold),
            _ => None,
        }
    }

    /// The derived gate produced by time-reversing this one, if any.
    pub fn reversal_target(&self) -> Option<GateKind> {
        match self {
            GateKind::Split(nu) => Some(GateKind::Recombine(*nu)),
            GateKind::Boost(nu) => Some(GateKind::Slow(nu + 2)),
            GateKind::Hold => Some(GateKind::Release),
            _ => None,
        }
    }
}

impl GateSpec {
    /// Gate spec with the paper's default duration.
    pub fn from_kind(kind: GateKind) -> Result<Self> {
        let duration = kind.default_duration().ok_or_else(|| {
            Error::invalid(format!(
                "gate {} has no tabulated duration; supply one explicitly",
                kind.name()
            ))
        })?;
        Self::with_duration(kind, duration)
    }

    /// Gate spec at an explicit duration; `N_t = ceil(T/0.02)`.
    pub fn with_duration(kind: GateKind, duration: f64) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::invalid(format!("gate duration must be positive, got {duration}")));
        }
        let n_t = steps_for_duration(duration, DT_CEILING);
        let provenance = match kind.reversal_source() {
            Some(source) => Provenance::TimeReversedFrom(source.name()),
            None => match kind {
                GateKind::Propagate(_) => Provenance::Analytic,
                _ => Provenance::Optimized,
            },
        };
        // the mirror at |±6k_L⟩ (and any higher Z) gets the two midpoint
        // minimum-population constraints on |2⟩_B
        let paths = match kind {
            GateKind::PauliZ(nu) | GateKind::RotZ(nu, _) if nu >= 6 => vec![
                PathConstraint {
                    sample: n_t / 2,
                    band: 2,
                    source_band: Some(nu),
                    threshold: 0.1,
                },
                PathConstraint {
                    sample: n_t / 2,
                    band: 2,
                    source_band: Some(nu - 1),
                    threshold: 0.1,
                },
            ],
            _ => Vec::new(),
        };
        Ok(Self { kind, duration, n_t, paths, provenance })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kind(GateKind::parse(text)?)
    }

    pub fn name(&self) -> String {
        self.kind.name()
    }

    /// Fidelity target and initial state for this gate on a basis.
    pub fn target(&self, basis: &BlochBasis) -> Result<GateTarget> {
        let dim = basis.dim();
        let check_band = |nu: usize, what: &str| -> Result<()> {
            if nu == 0 || nu >= dim {
                return Err(Error::invalid(format!(
                    "{what} index {nu} incompatible with basis of dimension {dim}"
                )));
            }
            Ok(())
        };
        let qubit_band = |nu: usize| -> Result<usize> {
            check_band(nu, "qubit subspace")?;
            if nu < 3 {
                return Err(Error::invalid(format!(
                    "conduction-band qubit gates need nu >= 3, got {nu}"
                )));
            }
            Ok(nu)
        };

        let target = match &self.kind {
            GateKind::Split(nu) => {
                check_band(*nu, "split target band")?;
                GateTarget {
                    term: FidelityTerm::StateTransfer { goal: basis.state(*nu) },
                    initial_state: Some(basis.state(0)),
                }
            }
            GateKind::Recombine(nu) => {
                check_band(*nu, "recombine source band")?;
                GateTarget {
                    term: FidelityTerm::StateTransfer { goal: basis.state(0) },
                    initial_state: Some(basis.state(*nu)),
                }
            }
            GateKind::PauliX(nu) => GateTarget::unitary(basis, qubit_band(*nu)?, pauli_x())?,
            GateKind::PauliZ(nu) => GateTarget::unitary(basis, qubit_band(*nu)?, pauli_z())?,
            GateKind::Hadamard(nu) => GateTarget::unitary(basis, qubit_band(*nu)?, hadamard())?,
            GateKind::TGate(nu) => GateTarget::unitary(basis, qubit_band(*nu)?, t_gate())?,
            GateKind::RotX(nu, angle) => {
                GateTarget::unitary(basis, qubit_band(*nu)?, rotation_x(*angle))?
            }
            GateKind::RotZ(nu, angle) => {
                GateTarget::unitary(basis, qubit_band(*nu)?, rotation_z(*angle))?
            }
            GateKind::Boost(nu) => {
                qubit_band(*nu)?;
                if nu + 2 >= dim {
                    return Err(Error::invalid(format!(
                        "boost target subspace {} beyond truncation", nu + 2
                    )));
                }
                GateTarget {
                    term: FidelityTerm::SubspaceTransfer {
                        source: basis.qubit_subspace(*nu)?,
                        target: basis.qubit_subspace(nu + 2)?,
                    },
                    initial_state: None,
                }
            }
            GateKind::Slow(nu) => {
                qubit_band(*nu)?;
                if *nu < 5 {
                    return Err(Error::invalid(format!("slow needs nu >= 5, got {nu}")));
                }
                GateTarget {
                    term: FidelityTerm::SubspaceTransfer {
                        source: basis.qubit_subspace(*nu)?,
                        target: basis.qubit_subspace(nu - 2)?,
                    },
                    initial_state: None,
                }
            }
            GateKind::Hold => GateTarget {
                term: FidelityTerm::SubspaceTransfer {
                    source: basis.qubit_subspace(4)?,
                    target: basis.qubit_subspace(1)?,
                },
                initial_state: None,
            },
            GateKind::Release => GateTarget {
                term: FidelityTerm::SubspaceTransfer {
                    source: basis.qubit_subspace(1)?,
                    target: basis.qubit_subspace(4)?,
                },
                initial_state: None,
            },
            GateKind::Propagate(_) => {
                return Err(Error::invalid(
                    "PROPAGATE is analytic (zero waveform); it has no optimization target",
                ))
            }
        };
        Ok(target)
    }

    /// Assemble the collocation problem for this gate.
    pub fn build_problem(
        &self,
        basis: &BlochBasis,
        penalty_weight: f64,
        cutoff: f64,
    ) -> Result<CollocationProblem> {
        let target = self.target(basis)?;
        let loss = LossSpec::with_penalty(target.term, penalty_weight, cutoff)?;
        CollocationProblem::build(
            *basis.model(),
            loss,
            target.initial_state,
            self.duration,
            self.n_t,
            &self.paths,
            self.name(),
        )
    }

    /// The analytic zero waveform (PROPAGATE only).
    pub fn analytic_waveform(&self) -> Result<Waveform> {
        match self.kind {
            GateKind::Propagate(t) => Waveform::zero(t, DT_CEILING),
            _ => Err(Error::invalid(format!("gate {} is not analytic", self.name()))),
        }
    }
}

/// Target of a gate problem: the loss term plus the fixed initial state when
/// the term alone does not determine it.
#[derive(Debug, Clone)]
pub struct GateTarget {
    pub term: FidelityTerm,
    pub initial_state: Option<CVec>,
}

impl GateTarget {
    fn unitary(basis: &BlochBasis, nu: usize, gate: CMat) -> Result<Self> {
        Ok(GateTarget {
            term: FidelityTerm::Unitary { gate, subspace: basis.qubit_subspace(nu)? },
            initial_state: None,
        })
    }
}

pub fn pauli_x() -> CMat {
    CMat::from_row_slice(2, 2, &[
        C64::new(0.0, 0.0), C64::new(1.0, 0.0),
        C64::new(1.0, 0.0), C64::new(0.0, 0.0),
    ])
}

pub fn pauli_z() -> CMat {
    CMat::from_row_slice(2, 2, &[
        C64::new(1.0, 0.0), C64::new(0.0, 0.0),
        C64::new(0.0, 0.0), C64::new(-1.0, 0.0),
    ])
}

pub fn hadamard() -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_row_slice(2, 2, &[
        C64::new(s, 0.0), C64::new(s, 0.0),
        C64::new(s, 0.0), C64::new(-s, 0.0),
    ])
}

pub fn t_gate() -> CMat {
    CMat::from_row_slice(2, 2, &[
        C64::new(1.0, 0.0), C64::new(0.0, 0.0),
        C64::new(0.0, 0.0), C64::from_polar(1.0, std::f64::consts::FRAC_PI_4),
    ])
}

pub fn rotation_x(angle: f64) -> CMat {
    let (c, s) = ((angle / 2.0).cos(), (angle / 2.0).sin());
    CMat::from_row_slice(2, 2, &[
        C64::new(c, 0.0), C64::new(0.0, -s),
        C64::new(0.0, -s), C64::new(c, 0.0),
    ])
}

pub fn rotation_z(angle: f64) -> CMat {
    CMat::from_row_slice(2, 2, &[
        C64::from_polar(1.0, -angle / 2.0), C64::new(0.0, 0.0),
        C64::new(0.0, 0.0), C64::from_polar(1.0, angle / 2.0),
    ])
}

/// The paper's duration table for the named catalog gates.
pub fn default_durations() -> Vec<(String, f64)> {
    [
        ("SPLIT3", 1.88),
        ("X4", 1.50),
        ("Z4", 3.00),
        ("H4", 3.50),
        ("T4", 2.50),
        ("Z6", 4.50),
        ("BOOST4", 1.75),
        ("HOLD", 1.75),
    ]
    .iter()
    .map(|(n, t)| (n.to_string(), *t))
    .collect()
}

/// One row of the `catalog` command output.
#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub name: String,
    pub duration: f64,
    pub n_t: usize,
    pub target: String,
    pub constraints: usize,
    pub provenance: String,
}

/// The standard catalog listing: every gate with a tabulated duration plus
/// the time-reversed derivatives.
pub fn catalog_entries() -> Vec<CatalogEntry> {
    let names = [
        "SPLIT3", "RECOMBINE3", "X4", "Z4", "H4", "T4", "Z6", "BOOST4", "SLOW6", "HOLD", "RELEASE",
    ];
    names
        .iter()
        .map(|name| {
            let spec = GateSpec::parse(name).expect("catalog names parse");
            let target = match &spec.kind {
                GateKind::Split(nu) => format!("state |0>_B -> |{nu}>_B"),
                GateKind::Recombine(nu) => format!("state |{nu}>_B -> |0>_B"),
                GateKind::PauliX(nu) => format!("unitary X on Pi_{nu}"),
                GateKind::PauliZ(nu) => format!("unitary Z on Pi_{nu}"),
                GateKind::Hadamard(nu) => format!("unitary H on Pi_{nu}"),
                GateKind::TGate(nu) => format!("unitary T on Pi_{nu}"),
                GateKind::RotX(nu, a) => format!("unitary Rx({a:.4}) on Pi_{nu}"),
                GateKind::RotZ(nu, a) => format!("unitary Rz({a:.4}) on Pi_{nu}"),
                GateKind::Boost(nu) => format!("subspace Pi_{nu} -> Pi_{}", nu + 2),
                GateKind::Slow(nu) => format!("subspace Pi_{nu} -> Pi_{}", nu - 2),
                GateKind::Hold => "subspace Pi_4 -> Pi_1".to_string(),
                GateKind::Release => "subspace Pi_1 -> Pi_4".to_string(),
                GateKind::Propagate(_) => "free evolution".to_string(),
            };
            let provenance = match &spec.provenance {
                Provenance::Optimized => "optimized".to_string(),
                Provenance::TimeReversedFrom(src) => format!("time-reversed from {src}"),
                Provenance::Analytic => "analytic".to_string(),
            };
            CatalogEntry {
                name: spec.name(),
                duration: spec.duration,
                n_t: spec.n_t,
                target,
                constraints: spec.paths.len(),
                provenance,
            }
        })
        .collect()
}

/// Outcome of deriving an inverse gate by time reversal.
#[derive(Debug, Clone)]
pub struct DerivedInverse {
    pub spec: GateSpec,
    pub waveform: Waveform,
    /// "negated" for φ'_l = -φ_{N_t-l}, "plain" for the unnegated fallback.
    pub convention: String,
    pub forward_infidelity: f64,
    pub inverse_infidelity: f64,
}

/// Produce the inverse gate's waveform by time reversal and validate it by
/// propagation: the reversed waveform must implement the inverse target
/// within 10x the forward infidelity. If the negated convention fails and
/// the plain reversal passes, the plain one is registered and flagged.
pub fn derive_inverse(
    basis: &BlochBasis,
    forward: &GateSpec,
    forward_waveform: &Waveform,
    penalty_weight: f64,
    cutoff: f64,
) -> Result<DerivedInverse> {
    if forward.provenance != Provenance::Optimized {
        return Err(Error::invalid(format!(
            "derive_inverse needs an optimized gate, {} is {:?}",
            forward.name(),
            forward.provenance
        )));
    }
    let inverse_kind = forward.kind.reversal_target().ok_or_else(|| {
        Error::invalid(format!("gate {} has no time-reversed inverse", forward.name()))
    })?;
    let inverse_spec = GateSpec::with_duration(inverse_kind, forward.duration)?;

    let forward_problem = forward.build_problem(basis, penalty_weight, cutoff)?;
    let forward_quality = assess_waveform(&forward_problem, forward_waveform)?;
    if forward_quality.infidelity > 0.1 {
        return Err(Error::invalid(format!(
            "waveform does not implement {} (infidelity {:.3e}); refusing to derive {}",
            forward.name(),
            forward_quality.infidelity,
            inverse_spec.name()
        )));
    }
    let inverse_problem = inverse_spec.build_problem(basis, penalty_weight, cutoff)?;

    let budget = (10.0 * forward_quality.infidelity).max(1e-9);
    for (candidate, convention) in [
        (collocation::time_reverse(forward_waveform), "negated"),
        (forward_waveform.time_reverse(false), "plain"),
    ] {
        let quality = assess_waveform(&inverse_problem, &candidate)?;
        if quality.infidelity <= budget {
            return Ok(DerivedInverse {
                spec: inverse_spec,
                waveform: candidate,
                convention: convention.to_string(),
                forward_infidelity: forward_quality.infidelity,
                inverse_infidelity: quality.infidelity,
            });
        }
    }
    Err(Error::numerical(format!(
        "time-reversed {} does not implement {} within 10x the forward infidelity ({:.3e})",
        forward.name(),
        inverse_spec.name(),
        forward_quality.infidelity
    )))
}

//! Run configuration: lattice, discretization, penalty, and solver settings
//! with file/flag layering.
//!
//! The config file is plain `key = value` text with `#` comments. Every key
//! has a default, every value is validated, and unknown keys are rejected.

use crate::lattice::LatticeModel;
use crate::propagator::DT_CEILING;
use crate::solver::SolverOptions;
use crate::{Error, Result};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Lattice depth V0 in recoil units.
    pub depth: f64,
    /// Momentum-basis truncation N_max.
    pub n_max: usize,
    /// Quasimomentum q̃ (gates are designed at 0).
    pub quasimomentum: f64,
    /// Ceiling on the collocation time step.
    pub dt_max: f64,
    /// Band-limit penalty cutoff ω_c (recoil units).
    pub cutoff: f64,
    /// Band-limit penalty weight λ_ω.
    pub penalty_weight: f64,
    pub solver: SolverOptions,
    pub outdir: PathBuf,
    /// Highest Bloch band written to trajectory exports.
    pub nu_show: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            depth: 10.0,
            n_max: 10,
            quasimomentum: 0.0,
            dt_max: DT_CEILING,
            cutoff: 70.0,
            penalty_weight: 100.0,
            solver: SolverOptions::default(),
            outdir: PathBuf::from("out"),
            nu_show: 8,
        }
    }
}

impl RunConfig {
    /// Parse a `key = value` config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::default();
        config.apply_text(&text, &path.display().to_string())?;
        Ok(config)
    }

    /// Apply `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: idx + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        }
        self.validate()
    }

    /// Set one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::invalid(format!("bad value for {key}: `{value}`")))
        }
        match key {
            "v0" | "depth" => self.depth = num(key, value)?,
            "n_max" => self.n_max = num(key, value)?,
            "qtilde" | "quasimomentum" => self.quasimomentum = num(key, value)?,
            "dt_max" => self.dt_max = num(key, value)?,
            "omega_c" | "cutoff" => self.cutoff = num(key, value)?,
            "lambda_omega" | "penalty_weight" => self.penalty_weight = num(key, value)?,
            "restarts" => self.solver.restarts = num(key, value)?,
            "base_seed" | "seed" => self.solver.base_seed = num(key, value)?,
            "max_outer" => self.solver.max_outer = num(key, value)?,
            "max_inner" => self.solver.max_inner = num(key, value)?,
            "constraint_tol" => self.solver.constraint_tol = num(key, value)?,
            "loss_tol" => self.solver.loss_tol = num(key, value)?,
            "infidelity_target" | "target" => self.solver.infidelity_target = num(key, value)?,
            "memory" => self.solver.memory = num(key, value)?,
            "verbose" => self.solver.verbose = num(key, value)?,
            "outdir" => self.outdir = PathBuf::from(value),
            "nu_show" => self.nu_show = num(key, value)?,
            other => return Err(Error::invalid(format!("unknown config key: {other}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        // constructing the model validates depth/quasimomentum
        self.model()?;
        if !(self.dt_max.is_finite() && self.dt_max > 0.0) {
            return Err(Error::invalid(format!("dt_max must be positive, got {}", self.dt_max)));
        }
        if !(self.cutoff > 0.0) || !(self.penalty_weight >= 0.0) {
            return Err(Error::invalid("penalty settings must be positive"));
        }
        self.solver.validate()
    }

    pub fn model(&self) -> Result<LatticeModel> {
        LatticeModel::new(self.depth, self.n_max, self.quasimomentum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_paper_setup() {
        let c = RunConfig::default();
        assert_eq!(c.depth, 10.0);
        assert_eq!(c.n_max, 10);
        assert_eq!(c.cutoff, 70.0);
        assert_eq!(c.penalty_weight, 100.0);
        assert_eq!(c.solver.restarts, 10);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn parses_and_overrides() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# comment\nv0 = 8.5\nrestarts = 3\noutdir = results # trailing comment\n",
            "mem",
        )
        .unwrap();
        assert_eq!(c.depth, 8.5);
        assert_eq!(c.solver.restarts, 3);
        assert_eq!(c.outdir, PathBuf::from("results"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("frobnicate = 1\n", "mem").is_err());
        let mut c = RunConfig::default();
        assert!(c.apply_text("v0 = fast\n", "mem").is_err());
        let mut c = RunConfig::default();
        assert!(c.apply_text("v0 = -2\n", "mem").is_err());
        let mut c = RunConfig::default();
        assert!(c.apply_text("qtilde = 1.5\n", "mem").is_err());
    }
}

//! Control-waveform synthesis for a shaken optical-lattice interferometer.
//!
//! A cold atom in a one-dimensional optical lattice is driven by modulating
//! the lattice phase φ(t). This crate models the atom's momentum-space
//! dynamics in the Bloch eigenbasis of the static lattice, poses gate design
//! (beam splitters, mirrors, qubit rotations, inter-band transfers) as a
//! direct-collocation nonlinear program over the sampled phase waveform, and
//! solves it with an augmented-Lagrangian / L-BFGS optimizer. Every emitted
//! waveform is re-verified by an independent propagation pass.
//!
//! Units are the natural units of the lattice: energies and frequencies in
//! the photon recoil frequency `ω_r = k_L²/2m`, times in `ω_r⁻¹`, lengths in
//! `1/k_L`. Momentum states are `|2n·k_L⟩` for integer `n`.

pub mod catalog;
pub mod circuit;
pub mod cli;
pub mod collocation;
pub mod config;
mod error;
pub mod lattice;
pub mod linalg;
pub mod objectives;
pub mod propagator;
pub mod solver;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex<f64>;

/// Dense complex matrix (momentum-basis operators, trajectory frames).
pub type CMat = nalgebra::DMatrix<C64>;

/// Dense complex vector (momentum-basis states).
pub type CVec = nalgebra::DVector<C64>;

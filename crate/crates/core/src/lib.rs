//! Piecewise semi-analytical modelling of coupled oscillator arrays.
//!
//! The crate extracts linearized admittance models of each oscillator over a
//! tuning-voltage grid, solves the coupled first-harmonic equations for
//! constant phase-shift solutions (free-running or injection locked) and
//! classifies their stability from the eigenvalues of the perturbation matrix.
//!
//! Indices are 0-based throughout.

pub mod array;
pub mod coupling;
pub mod eigen;
pub mod error;
pub mod extraction;
pub mod newton;
pub mod oscillator;
pub mod report;
pub mod sample_table;
pub mod stability;
pub mod validation;

pub use error::{OscError, Result};

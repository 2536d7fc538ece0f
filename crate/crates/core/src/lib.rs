//! Solver for coupled object–instrument eigenproblems reduced to a
//! multi-branch secular equation.
//!
//! The pipeline eliminates the measured channels of a finite
//! [`MeasurementProblem`](model::MeasurementProblem), finds every root of
//! each reading's secular equation, groups the redundant roots into
//! realisations and derives their reduced states, probabilities and sampled
//! outcomes. The [`oracle`] module re-derives the same spectra by brute force.

pub mod config;
pub mod effective;
pub mod error;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod realisation;
pub mod report;
pub mod scenarios;
pub mod secular;

pub use config::Tolerances;
pub use effective::AuxMode;
pub use error::{Error, ErrorClass, Result};
pub use linalg::{CMatrix, CVector, C64};
pub use model::MeasurementProblem;
pub use pipeline::{solve, Solution, SolveOptions};

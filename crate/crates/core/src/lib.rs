//! Numerical solvers for a central-planner control problem in which
//! particles are both steered and removed: the finite-population hierarchy
//! of obstacle HJB equations, its mean-field limit computed through a
//! penalized regularization chain, and the metric, envelope, and
//! comparison-principle machinery needed to check the two against each
//! other.
//!
//! Everything lives on the unit torus in one dimension. The main entry
//! points are:
//!
//! - [`metrics`]: the bounded-Lipschitz dual norm, circular 1-Wasserstein
//!   distance, and the removal-aware distance used on empirical states;
//! - [`model`]: problem data (Hamiltonian, Lagrangian, stopping penalty,
//!   terminal cost) with assumption validators;
//! - [`envelopes`]: monotone envelopes of the terminal cost, discrete and
//!   continuous, plus the terminal-cost mollification;
//! - [`hierarchy`]: the backward finite-difference solver for the obstacle
//!   system with policy extraction;
//! - [`montecarlo`]: particle simulation of the controlled-and-stopped
//!   system, cross-validating the PDE values;
//! - [`meanfield`]: Fokker-Planck with killing, the penalized adjoint
//!   equation, the coupled solver, and the regularization ladder;
//! - [`phi`]: the nonpositive-cone penalization functional and its
//!   maximizer.

pub mod envelopes;
pub mod error;
pub mod grid;
pub mod hierarchy;
pub mod lp;
pub mod meanfield;
pub mod metrics;
pub mod model;
pub mod montecarlo;
pub mod phi;
pub mod tridiag;

pub use error::{Error, Result};
pub use grid::{circle_dist, wrap, EmpiricalState, GridFunction, GridMeasure, MeasureRef, TorusGrid};

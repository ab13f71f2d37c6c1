//! The mean-field problem: Fokker-Planck dynamics with killing, the
//! penalized adjoint equation with the time-mollified removal term, the
//! coupled solver, and the cost functionals with their regularization
//! ladder.
//!
//! The removal penalty is regularized in two layers: the penalty argument
//! is smoothed in time by a one-sided kernel supported on `[0, θ]`, and
//! removal happens at a bounded rate `β` whose quadratic cost `δ/2 ∫ β² dm`
//! vanishes as `δ -> 0`. The value of the regularized problem decreases to
//! the unregularized one along the ladder, which is how the limit value is
//! estimated.

mod fp;
mod functional;
mod hjb;
mod solver;

pub use fp::{solve_fp, FpSolution};
pub use functional::{
    evaluate_j, evaluate_j_theta, evaluate_j_theta_delta, j_theta_delta_gradient, JGradient,
};
pub use hjb::{solve_hjb_penalized, time_mollify};
pub use solver::{
    check_dpp, psi_monotonicity_check, regularization_ladder, solve_mfc, LadderCell,
    LadderReport, MfcParams, MFCSolution,
};

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{GridMeasure, TorusGrid};

/// A uniform time mesh `t0 = t_0 < ... < t_n = t1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub t0: f64,
    pub t1: f64,
    pub n_steps: usize,
}

impl Mesh {
    pub fn new(t0: f64, t1: f64, n_steps: usize) -> Result<Self> {
        if !(t1 > t0) || n_steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "bad mesh: [{t0}, {t1}] with {n_steps} steps"
            )));
        }
        Ok(Mesh { t0, t1, n_steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt()
    }
}

/// A time-indexed family of grid measures with an optional atomic jump
/// ledger: `measures[k]` is the post-jump slice at `t_k`, and an atom
/// `(k, j)` means the pre-jump slice was `measures[k] + j`.
#[derive(Debug, Clone)]
pub struct MeasurePath {
    pub mesh: Mesh,
    pub measures: Vec<GridMeasure>,
    pub jumps: Vec<(usize, GridMeasure)>,
}

impl MeasurePath {
    pub fn constant(mesh: Mesh, m: GridMeasure) -> Self {
        let measures = vec![m; mesh.n_steps + 1];
        MeasurePath {
            mesh,
            measures,
            jumps: Vec::new(),
        }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.measures[0].grid()
    }

    /// The pre-jump slice at index `k`.
    pub fn pre_jump(&self, k: usize) -> GridMeasure {
        let mut mass = self.measures[k].mass().to_vec();
        for (idx, removed) in &self.jumps {
            if *idx == k {
                for (a, b) in mass.iter_mut().zip(removed.mass()) {
                    *a += b;
                }
            }
        }
        GridMeasure::new(Arc::clone(self.measures[k].grid()), mass)
            .expect("pre-jump slice is a valid measure")
    }

    /// Total mass is non-increasing along the path (up to `tol`).
    pub fn mass_nonincreasing(&self, tol: f64) -> bool {
        self.measures
            .windows(2)
            .all(|w| w[1].total() <= w[0].total() + tol)
    }
}

/// Drift and killing-rate fields on the slices of a mesh (slice `k` covers
/// `[t_k, t_{k+1})`).
#[derive(Debug, Clone)]
pub struct ControlField {
    pub mesh: Mesh,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl ControlField {
    pub fn zero(mesh: Mesh, n_cells: usize) -> Self {
        let alpha = vec![vec![0.0; n_cells]; mesh.n_steps];
        let beta = vec![vec![0.0; n_cells]; mesh.n_steps];
        ControlField { mesh, alpha, beta }
    }

    pub fn validate(&self) -> Result<()> {
        for bs in &self.beta {
            if bs.iter().any(|&b| b < 0.0 || !b.is_finite()) {
                return Err(Error::InvalidParameter(
                    "killing rate must be nonnegative and finite".into(),
                ));
            }
        }
        for als in &self.alpha {
            if als.iter().any(|a| !a.is_finite()) {
                return Err(Error::InvalidParameter("drift must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn sup_distance(&self, other: &ControlField) -> f64 {
        let mut d: f64 = 0.0;
        for (a, b) in self.alpha.iter().zip(&other.alpha) {
            for (x, y) in a.iter().zip(b) {
                d = d.max((x - y).abs());
            }
        }
        for (a, b) in self.beta.iter().zip(&other.beta) {
            for (x, y) in a.iter().zip(b) {
                d = d.max((x - y).abs());
            }
        }
        d
    }
}

/// The removal measure `μ`: an absolutely-continuous mass-removal rate per
/// slice and cell, plus atoms.
#[derive(Debug, Clone)]
pub struct JumpMeasure {
    /// `rates[k][j]`: mass removed per unit time on slice `k` in cell `j`.
    pub rates: Vec<Vec<f64>>,
    /// `(time index, removed measure)`.
    pub atoms: Vec<(usize, GridMeasure)>,
}

impl JumpMeasure {
    pub fn total(&self, dt: f64) -> f64 {
        let ac: f64 = self
            .rates
            .iter()
            .map(|r| r.iter().sum::<f64>() * dt)
            .sum();
        let atomic: f64 = self.atoms.iter().map(|(_, m)| m.total()).sum();
        ac + atomic
    }
}

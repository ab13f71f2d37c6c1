//! Cost functionals over measure paths and their exact discrete gradient
//! in the controls.
//!
//! Quadrature conventions, shared by every functional here and by the
//! gradient (the identities below are exact at the discrete level, not
//! just up to `O(dt)`):
//!
//! - running cost: `dt * L(x_j, α^k_j, m^k) * (M^k_j + M^{k+1}_j)/2`;
//! - rate-driven removal cost: the penalty is paired with the killing
//!   ledger, `Ψ(x_j, ·) * dt * β^k_j * M^{k+1}_j`, so every unit of removed
//!   mass is charged exactly once;
//! - quadratic penalty: `(δ/2) * dt * (β^k_j)² * M^{k+1}_j`;
//! - terminal: `G(m^n)`.
//!
//! The gradient runs the transpose of the forward scheme step by step
//! (killing, diffusion, upwind advection) and accumulates the measure
//! derivatives of the cost, including the backward reach of the time
//! mollifier; it therefore matches central finite differences of the
//! functionals to near machine precision.

use crate::error::{Error, Result};
use crate::grid::{GridMeasure, MeasureRef};
use crate::model::ModelSpec;
use crate::tridiag::solve_heat_implicit;

use super::fp::solve_fp;
use super::hjb::{mollifier_weights, time_mollify};
use super::{ControlField, JumpMeasure, MeasurePath, Mesh};

/// Numerical `D_a L` by central differences; exact for quadratic costs.
fn d_a_lag(model: &ModelSpec, x: f64, a: f64, m: &MeasureRef<'_>) -> f64 {
    let t = 1e-6 * (1.0 + a.abs());
    (model.lag(x, a + t, m) - model.lag(x, a - t, m)) / (2.0 * t)
}

fn running_cost(model: &ModelSpec, path: &MeasurePath, alpha: &[Vec<f64>]) -> f64 {
    let grid = path.grid();
    let n = grid.n_cells();
    let dt = path.mesh.dt();
    let mut acc = 0.0;
    for k in 0..path.mesh.n_steps {
        let m_ref = MeasureRef::Grid(&path.measures[k]);
        let mk = path.measures[k].mass();
        let mk1 = path.measures[k + 1].mass();
        for j in 0..n {
            acc += dt
                * model.lag(grid.node(j), alpha[k][j], &m_ref)
                * 0.5
                * (mk[j] + mk1[j]);
        }
    }
    acc
}

/// Removal cost against a penalty argument chosen per slice.
fn removal_cost_rates(
    model: &ModelSpec,
    penalty_arg: &[GridMeasure],
    path: &MeasurePath,
    beta: &[Vec<f64>],
) -> f64 {
    let grid = path.grid();
    let n = grid.n_cells();
    let dt = path.mesh.dt();
    let mut acc = 0.0;
    for k in 0..path.mesh.n_steps {
        let arg = MeasureRef::Grid(&penalty_arg[k]);
        let mk1 = path.measures[k + 1].mass();
        for j in 0..n {
            if beta[k][j] != 0.0 {
                acc += model.psi(grid.node(j), &arg) * dt * beta[k][j] * mk1[j];
            }
        }
    }
    acc
}

fn quadratic_penalty(path: &MeasurePath, beta: &[Vec<f64>], delta: f64) -> f64 {
    let dt = path.mesh.dt();
    let mut acc = 0.0;
    for k in 0..path.mesh.n_steps {
        let mk1 = path.measures[k + 1].mass();
        for (j, &b) in beta[k].iter().enumerate() {
            acc += 0.5 * delta * dt * b * b * mk1[j];
        }
    }
    acc
}

fn terminal_cost(model: &ModelSpec, path: &MeasurePath) -> f64 {
    model.g(&MeasureRef::Grid(&path.measures[path.mesh.n_steps]))
}

/// The plain cost of a triple `(m, α, μ)` with `μ` given as a jump
/// measure: running cost, removal charged at the pre-removal slice (for
/// atoms, the pre-jump measure), and the terminal cost.
pub fn evaluate_j(
    model: &ModelSpec,
    path: &MeasurePath,
    alpha: &[Vec<f64>],
    mu: &JumpMeasure,
) -> Result<f64> {
    let grid = path.grid();
    let n = grid.n_cells();
    let dt = path.mesh.dt();
    // Mass bookkeeping: initial mass = final mass + total removed.
    let m_start = path.pre_jump(0).total();
    let m_end = path.measures[path.mesh.n_steps].total();
    let defect = (m_start - m_end - mu.total(dt)).abs();
    if defect > 1e-8 {
        return Err(Error::MassInconsistency(defect));
    }

    let mut total = running_cost(model, path, alpha) + terminal_cost(model, path);
    for (k, rates) in mu.rates.iter().enumerate() {
        let m_ref = MeasureRef::Grid(&path.measures[k.min(path.mesh.n_steps)]);
        for j in 0..n {
            if rates[j] != 0.0 {
                total += model.psi(grid.node(j), &m_ref) * dt * rates[j];
            }
        }
    }
    for (k, removed) in &mu.atoms {
        let pre = path.pre_jump(*k);
        let pre_ref = MeasureRef::Grid(&pre);
        for j in 0..n {
            if removed.mass()[j] != 0.0 {
                total += model.psi(grid.node(j), &pre_ref) * removed.mass()[j];
            }
        }
    }
    Ok(total)
}

/// The time-regularized cost: the removal penalty sees the mollified path.
pub fn evaluate_j_theta(
    model: &ModelSpec,
    path: &MeasurePath,
    control: &ControlField,
    theta: f64,
) -> Result<f64> {
    let mollified = time_mollify(path, theta)?;
    Ok(running_cost(model, path, &control.alpha)
        + removal_cost_rates(model, &mollified.measures, path, &control.beta)
        + terminal_cost(model, path))
}

/// `J^{θ,δ} = J^θ(m, α, β m) + (δ/2) ∫∫ β² dm dt`, exactly by
/// construction.
pub fn evaluate_j_theta_delta(
    model: &ModelSpec,
    path: &MeasurePath,
    control: &ControlField,
    theta: f64,
    delta: f64,
) -> Result<f64> {
    Ok(evaluate_j_theta(model, path, control, theta)?
        + quadratic_penalty(path, &control.beta, delta))
}

/// Partial cost (running + removal + quadratic penalty, no terminal) over
/// slices `0..k_end`; used by the dynamic-programming check.
pub(crate) fn partial_cost(
    model: &ModelSpec,
    path: &MeasurePath,
    control: &ControlField,
    theta: f64,
    delta: f64,
    k_end: usize,
) -> Result<f64> {
    let mollified = time_mollify(path, theta)?;
    let grid = path.grid();
    let n = grid.n_cells();
    let dt = path.mesh.dt();
    let mut acc = 0.0;
    for k in 0..k_end {
        let m_ref = MeasureRef::Grid(&path.measures[k]);
        let arg = MeasureRef::Grid(&mollified.measures[k]);
        let mk = path.measures[k].mass();
        let mk1 = path.measures[k + 1].mass();
        for j in 0..n {
            let x = grid.node(j);
            let b = control.beta[k][j];
            acc += dt * model.lag(x, control.alpha[k][j], &m_ref) * 0.5 * (mk[j] + mk1[j]);
            acc += model.psi(x, &arg) * dt * b * mk1[j];
            acc += 0.5 * delta * dt * b * b * mk1[j];
        }
    }
    Ok(acc)
}

/// Value and exact gradient of the reduced functional
/// `(α, β) -> J^{θ,δ}(m(α, β), α, β)`.
#[derive(Debug, Clone)]
pub struct JGradient {
    pub value: f64,
    pub grad_alpha: Vec<Vec<f64>>,
    pub grad_beta: Vec<Vec<f64>>,
}

pub fn j_theta_delta_gradient(
    model: &ModelSpec,
    m0: &GridMeasure,
    mesh: &Mesh,
    control: &ControlField,
    theta: f64,
    delta: f64,
) -> Result<JGradient> {
    let fp = solve_fp(control, m0, mesh)?;
    let path = &fp.path;
    let grid = path.grid();
    let n = grid.n_cells();
    let h = grid.h();
    let dt = mesh.dt();
    let n_steps = mesh.n_steps;
    let weights = mollifier_weights(theta, dt)?;
    let mollified = time_mollify(path, theta)?;
    let value = evaluate_j_theta_delta(model, path, control, theta, delta)?;

    let mut bar_m: Vec<Vec<f64>> = vec![vec![0.0; n]; n_steps + 1];
    let mut grad_alpha = vec![vec![0.0; n]; n_steps];
    let mut grad_beta = vec![vec![0.0; n]; n_steps];

    // Terminal cost.
    {
        let m_ref = MeasureRef::Grid(&path.measures[n_steps]);
        match model.terminal().density() {
            Some(g) => {
                for j in 0..n {
                    bar_m[n_steps][j] += g(grid.node(j));
                }
            }
            None => {
                for j in 0..n {
                    bar_m[n_steps][j] += model.g_lin(&m_ref, grid.node(j));
                }
            }
        }
    }

    for k in (0..n_steps).rev() {
        let m_k = &path.measures[k];
        let m_ref = MeasureRef::Grid(m_k);
        let moll_ref = MeasureRef::Grid(&mollified.measures[k]);
        let mk = m_k.mass();
        let mk1 = path.measures[k + 1].mass();
        let alpha = &control.alpha[k];
        let beta = &control.beta[k];

        // Per-node running cost values are reused below.
        let lag_vals: Vec<f64> = (0..n)
            .map(|j| model.lag(grid.node(j), alpha[j], &m_ref))
            .collect();
        let psi_moll: Vec<f64> = (0..n)
            .map(|j| model.psi(grid.node(j), &moll_ref))
            .collect();

        // (a) cost_k's dependence on the next slice.
        for j in 0..n {
            bar_m[k + 1][j] += dt * lag_vals[j] * 0.5
                + psi_moll[j] * dt * beta[j]
                + 0.5 * delta * dt * beta[j] * beta[j];
        }

        // (b) direct control partials of cost_k.
        for j in 0..n {
            grad_beta[k][j] += psi_moll[j] * dt * mk1[j] + delta * dt * beta[j] * mk1[j];
            grad_alpha[k][j] +=
                dt * d_a_lag(model, grid.node(j), alpha[j], &m_ref) * 0.5 * (mk[j] + mk1[j]);
        }

        // (c) transpose of the dynamics step k (kill, diffuse, advect).
        let mut lam_kill = vec![0.0; n];
        for j in 0..n {
            let c = 1.0 / (1.0 + dt * beta[j]);
            lam_kill[j] = bar_m[k + 1][j] * c;
            grad_beta[k][j] += -dt * bar_m[k + 1][j] * mk1[j] * c;
        }
        let lam_diff = solve_heat_implicit(&lam_kill, dt, h);
        for j in 0..n {
            bar_m[k][j] += lam_diff[j];
        }
        for j in 0..n {
            let jp = (j + 1) % n;
            let a = 0.5 * (alpha[j] + alpha[jp]);
            let bar_flux = lam_diff[jp] - lam_diff[j];
            let (dflux_dm, upwind_mass) = if a >= 0.0 {
                (dt / h * a, mk[j])
            } else {
                (dt / h * a, mk[jp])
            };
            if a >= 0.0 {
                bar_m[k][j] += bar_flux * dflux_dm;
            } else {
                bar_m[k][jp] += bar_flux * dflux_dm;
            }
            let bar_a = bar_flux * dt / h * upwind_mass;
            grad_alpha[k][j] += 0.5 * bar_a;
            grad_alpha[k][jp] += 0.5 * bar_a;
        }

        // (d) cost_k's dependence on the current slice and, through the
        // mollifier, on earlier slices.
        for j in 0..n {
            bar_m[k][j] += dt * lag_vals[j] * 0.5;
        }
        if model.has_lag_lin() {
            for j in 0..n {
                let xj = grid.node(j);
                let mut acc = 0.0;
                for i in 0..n {
                    acc += model.lag_lin(grid.node(i), alpha[i], &m_ref, xj)?
                        * 0.5
                        * (mk[i] + mk1[i]);
                }
                bar_m[k][j] += dt * acc;
            }
        }
        // Mollifier reach-back of the removal penalty argument.
        let any_killing = beta.iter().any(|&b| b != 0.0);
        if any_killing {
            let killed: Vec<f64> = (0..n).map(|i| dt * beta[i] * mk1[i]).collect();
            let profile: Vec<f64> = (0..n)
                .map(|j| {
                    let xj = grid.node(j);
                    (0..n)
                        .map(|i| model.psi_lin(grid.node(i), &moll_ref, xj) * killed[i])
                        .sum()
                })
                .collect();
            for (r, &wr) in weights.iter().enumerate() {
                if wr == 0.0 {
                    continue;
                }
                let dst = k.saturating_sub(r);
                for j in 0..n {
                    bar_m[dst][j] += wr * profile[j];
                }
            }
        }
    }

    Ok(JGradient {
        value,
        grad_alpha,
        grad_beta,
    })
}

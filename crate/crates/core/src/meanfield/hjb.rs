//! Time mollification of measure paths and the backward penalized adjoint
//! equation.
//!
//! The mollifier is the polynomial bump `ξ_θ(s) ∝ (s/θ)² (1 - s/θ)²` on
//! `[0, θ]`, discretized on the path mesh and normalized to unit mass so
//! that constant paths are fixed points. Note `ξ_θ(0) = 0`: the smoothed
//! slice never sees the current instant, which keeps the backward sweep
//! explicit in the removal source term.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridMeasure, MeasureRef};
use crate::model::ModelSpec;
use crate::tridiag::solve_heat_implicit;

use super::{ControlField, MeasurePath};

/// Discrete mollifier weights `w_r ∝ ξ_θ(r dt)`, `r = 0..=R`, normalized
/// to sum to one. Requires `θ >= 2 dt` so the window holds at least two
/// mesh nodes.
pub(crate) fn mollifier_weights(theta: f64, dt: f64) -> Result<Vec<f64>> {
    if theta < 2.0 * dt {
        return Err(Error::InvalidParameter(format!(
            "theta = {theta} must be at least two time steps (dt = {dt})"
        )));
    }
    let r_max = (theta / dt).floor() as usize;
    let mut w: Vec<f64> = (0..=r_max)
        .map(|r| {
            let s = r as f64 * dt / theta;
            (s * s * (1.0 - s) * (1.0 - s)).max(0.0)
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= total;
    }
    Ok(w)
}

/// `(ξ_θ * m)_t`, the path smoothed backward in time with `m` extended by
/// its initial slice before the start.
pub fn time_mollify(path: &MeasurePath, theta: f64) -> Result<MeasurePath> {
    let dt = path.mesh.dt();
    let w = mollifier_weights(theta, dt)?;
    let grid = Arc::clone(path.grid());
    let n = grid.n_cells();
    let mut measures = Vec::with_capacity(path.measures.len());
    for k in 0..path.measures.len() {
        let mut mass = vec![0.0; n];
        for (r, &wr) in w.iter().enumerate() {
            let src = &path.measures[k.saturating_sub(r)];
            for (a, b) in mass.iter_mut().zip(src.mass()) {
                *a += wr * b;
            }
        }
        measures.push(GridMeasure::new(Arc::clone(&grid), mass)?);
    }
    Ok(MeasurePath {
        mesh: path.mesh.clone(),
        measures,
        jumps: Vec::new(),
    })
}

/// Hybrid centered/upwind numerical Hamiltonian shared with the particle
/// hierarchy, here without the population scaling.
fn numerical_hamiltonian(
    model: &ModelSpec,
    x: f64,
    v_minus: f64,
    v_center: f64,
    v_plus: f64,
    h: f64,
    m: &MeasureRef<'_>,
) -> f64 {
    let pc = (v_plus - v_minus) / (2.0 * h);
    if pc.abs() <= crate::hierarchy::HYBRID_THRESHOLD {
        model.h(x, pc, m)
    } else {
        let pf = (v_plus - v_center) / h;
        let pb = (v_center - v_minus) / h;
        let sigma = model.dp_h(x, pb, m).abs().max(model.dp_h(x, pf, m).abs());
        model.h(x, pc, m) - 0.5 * sigma * (pf - pb)
    }
}

/// Backward sweep for the penalized adjoint `u`:
///
/// ```text
/// -∂_t u - Δu + H(x, Du, m_t) + (u - Ψ(x, m_t))₊² / (2δ) = F(t, x),
/// u(T, ·) = δG/δm(m_T, ·),
/// ```
///
/// with `F` collecting the measure derivative of the running cost and the
/// forward-looking mollified removal term. Each step does the implicit
/// diffusion solve, the explicit Hamiltonian on the diffused field, and an
/// exact scalar solve of the convex penalty relation
/// `u + (dt/2δ)(u - Ψ)₊² = rhs` per node.
pub fn solve_hjb_penalized(
    model: &ModelSpec,
    path: &MeasurePath,
    control: &ControlField,
    theta: f64,
    delta: f64,
) -> Result<Vec<GridFunction>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter("delta must be positive".into()));
    }
    let grid = Arc::clone(path.grid());
    let n = grid.n_cells();
    let h = grid.h();
    let dt = path.mesh.dt();
    let n_steps = path.mesh.n_steps;
    let weights = mollifier_weights(theta, dt)?;
    let mollified = time_mollify(path, theta)?;

    let terminal_measure = path.measures[n_steps].clone();
    let tm_ref = MeasureRef::Grid(&terminal_measure);
    let mut u: Vec<Vec<f64>> = vec![Vec::new(); n_steps + 1];
    u[n_steps] = (0..n).map(|j| model.g_lin(&tm_ref, grid.node(j))).collect();

    // Removal source profiles S^k(x_j), filled as the sweep reaches each
    // slice. S^k pairs the future killing intensity with the measure
    // derivative of the penalty at the mollified argument.
    let mut removal_profile: Vec<Option<Vec<f64>>> = vec![None; n_steps + 1];
    let build_profile = |k: usize, u_k: &[f64]| -> Vec<f64> {
        let m_k = MeasureRef::Grid(&path.measures[k]);
        let moll_k = MeasureRef::Grid(&mollified.measures[k]);
        let mass = path.measures[k].mass();
        let mut intensity = vec![0.0; n];
        for i in 0..n {
            let psi = model.psi(grid.node(i), &m_k);
            intensity[i] = (u_k[i] - psi).max(0.0) / delta * mass[i];
        }
        (0..n)
            .map(|j| {
                let xj = grid.node(j);
                (0..n)
                    .map(|i| model.psi_lin(grid.node(i), &moll_k, xj) * intensity[i])
                    .sum()
            })
            .collect()
    };
    removal_profile[n_steps] = Some(build_profile(n_steps, &u[n_steps]));

    for k in (0..n_steps).rev() {
        let m_k = &path.measures[k];
        let m_ref = MeasureRef::Grid(m_k);

        // Source term F at slice k.
        let mut f_src = vec![0.0; n];
        for j in 0..n {
            let xj = grid.node(j);
            let mut acc = 0.0;
            for i in 0..n {
                acc += model.lag_lin(grid.node(i), control.alpha[k][i], &m_ref, xj)?
                    * m_k.mass()[i];
            }
            f_src[j] = acc;
        }
        for (r, &wr) in weights.iter().enumerate().skip(1) {
            let kf = k + r;
            if kf > n_steps {
                break;
            }
            let profile = removal_profile[kf]
                .as_ref()
                .expect("future removal profile available in backward sweep");
            for j in 0..n {
                f_src[j] += wr * profile[j];
            }
        }

        // 1. explicit Hamiltonian plus source on the previous slice
        let u_next = &u[k + 1];
        let mut w = vec![0.0; n];
        for j in 0..n {
            let ham = numerical_hamiltonian(
                model,
                grid.node(j),
                u_next[(j + n - 1) % n],
                u_next[j],
                u_next[(j + 1) % n],
                h,
                &m_ref,
            );
            w[j] = u_next[j] - dt * ham + dt * f_src[j];
        }

        // 2. implicit diffusion
        let z = solve_heat_implicit(&w, dt, h);

        // 3. implicit penalty, solved exactly per node
        let c = dt / (2.0 * delta);
        let mut u_k = vec![0.0; n];
        for j in 0..n {
            let psi = model.psi(grid.node(j), &m_ref);
            u_k[j] = if z[j] <= psi {
                z[j]
            } else {
                psi + ((1.0 + 4.0 * c * (z[j] - psi)).sqrt() - 1.0) / (2.0 * c)
            };
            if !u_k[j].is_finite() {
                return Err(Error::NumericalBreakdown {
                    context: "penalized adjoint step",
                    time_index: k,
                });
            }
        }
        removal_profile[k] = Some(build_profile(k, &u_k));
        u[k] = u_k;
    }

    u.into_iter()
        .map(|vals| GridFunction::new(Arc::clone(&grid), vals))
        .collect()
}

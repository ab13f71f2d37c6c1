//! Conservative finite-volume scheme for the Fokker-Planck equation with
//! killing: explicit upwind advection, implicit diffusion, implicit
//! killing. The killing ledger is exact: the mass removed in a step equals
//! `dt * β * m_post` cell by cell, by construction of the implicit factor.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::GridMeasure;
use crate::tridiag::solve_heat_implicit;

use super::{ControlField, MeasurePath, Mesh};

/// A solved forward path with its mass ledger and the per-step
/// intermediates needed by the exact adjoint.
#[derive(Debug, Clone)]
pub struct FpSolution {
    pub path: MeasurePath,
    /// `killed[k][j]`: mass removed on slice `k` in cell `j`.
    pub killed: Vec<Vec<f64>>,
    pub killed_total: f64,
    /// Post-advection masses per step (adjoint intermediate).
    pub(crate) after_advection: Vec<Vec<f64>>,
}

impl FpSolution {
    /// `max |m_T + killed - m_0|` bookkeeping defect.
    pub fn mass_defect(&self) -> f64 {
        let m0 = self.path.measures[0].total();
        let mt = self.path.measures.last().unwrap().total();
        (mt + self.killed_total - m0).abs()
    }
}

/// Advance `m0` along the controlled dynamics on the control's mesh.
pub fn solve_fp(control: &ControlField, m0: &GridMeasure, mesh: &Mesh) -> Result<FpSolution> {
    control.validate()?;
    if control.mesh != *mesh {
        return Err(Error::InvalidParameter(
            "control field lives on a different mesh".into(),
        ));
    }
    let grid = Arc::clone(m0.grid());
    let n = grid.n_cells();
    let h = grid.h();
    let dt = mesh.dt();

    // Advective CFL for the explicit upwind flux.
    let mut amax: f64 = 0.0;
    for slice in &control.alpha {
        for &a in slice {
            amax = amax.max(a.abs());
        }
    }
    if dt * amax / h > 0.5 {
        let limit = 0.5 * h / amax;
        return Err(Error::CflViolation {
            dt,
            limit,
            suggested_steps: ((mesh.t1 - mesh.t0) / limit).ceil() as usize,
        });
    }

    let mut measures = Vec::with_capacity(mesh.n_steps + 1);
    measures.push(m0.clone());
    let mut killed = Vec::with_capacity(mesh.n_steps);
    let mut after_advection = Vec::with_capacity(mesh.n_steps);
    let mut killed_total = 0.0;
    let mut mass = m0.mass().to_vec();

    for k in 0..mesh.n_steps {
        let alpha = &control.alpha[k];
        let beta = &control.beta[k];

        // 1. explicit upwind advection (interface velocity: node average)
        let mut adv = mass.clone();
        for j in 0..n {
            let jp = (j + 1) % n;
            let a = 0.5 * (alpha[j] + alpha[jp]);
            let flux = if a >= 0.0 {
                dt / h * a * mass[j]
            } else {
                dt / h * a * mass[jp]
            };
            adv[j] -= flux;
            adv[jp] += flux;
        }
        for v in adv.iter_mut() {
            if *v < 0.0 {
                if *v < -1e-12 {
                    return Err(Error::NumericalBreakdown {
                        context: "fokker-planck advection produced negative mass",
                        time_index: k,
                    });
                }
                *v = 0.0;
            }
        }
        after_advection.push(adv.clone());

        // 2. implicit diffusion
        let diffused = solve_heat_implicit(&adv, dt, h);

        // 3. implicit killing with the exact ledger
        let mut next = vec![0.0; n];
        let mut killed_k = vec![0.0; n];
        for j in 0..n {
            let c = 1.0 / (1.0 + dt * beta[j]);
            next[j] = diffused[j] * c;
            killed_k[j] = diffused[j] - next[j];
            killed_total += killed_k[j];
        }
        killed.push(killed_k);
        mass = next;
        measures.push(GridMeasure::new(Arc::clone(&grid), mass.clone())?);
    }

    Ok(FpSolution {
        path: MeasurePath {
            mesh: mesh.clone(),
            measures,
            jumps: Vec::new(),
        },
        killed,
        killed_total,
        after_advection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;

    fn mesh(n_steps: usize) -> Mesh {
        Mesh::new(0.0, 0.1, n_steps).unwrap()
    }

    #[test]
    fn uniform_is_invariant_without_controls() {
        let grid = Arc::new(TorusGrid::new(32));
        let m0 = GridMeasure::uniform(Arc::clone(&grid), 0.8);
        let mesh = mesh(100);
        let control = ControlField::zero(mesh.clone(), 32);
        let sol = solve_fp(&control, &m0, &mesh).unwrap();
        for slice in &sol.path.measures {
            for (a, b) in slice.mass().iter().zip(m0.mass()) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn constant_killing_decays_total_mass() {
        let grid = Arc::new(TorusGrid::new(32));
        let m0 = GridMeasure::uniform(Arc::clone(&grid), 1.0);
        let mesh = mesh(200);
        let mut control = ControlField::zero(mesh.clone(), 32);
        let b = 3.0;
        for slice in control.beta.iter_mut() {
            for v in slice.iter_mut() {
                *v = b;
            }
        }
        let sol = solve_fp(&control, &m0, &mesh).unwrap();
        let t = 0.1;
        let expected = (-b * t).exp();
        let got = sol.path.measures.last().unwrap().total();
        assert!(
            (got - expected).abs() < 2.0 * mesh.dt(),
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn spike_first_mode_decays_at_heat_rate() {
        let n = 64;
        let grid = Arc::new(TorusGrid::new(n));
        let mut mass = vec![0.0; n];
        mass[10] = 1.0;
        let m0 = GridMeasure::new(Arc::clone(&grid), mass).unwrap();
        let mesh = Mesh::new(0.0, 0.05, 500).unwrap();
        let control = ControlField::zero(mesh.clone(), n);
        let sol = solve_fp(&control, &m0, &mesh).unwrap();
        let mode = |m: &GridMeasure| -> f64 {
            let (mut c, mut s) = (0.0, 0.0);
            for j in 0..n {
                let x = grid.node(j);
                c += (std::f64::consts::TAU * x).cos() * m.mass()[j];
                s += (std::f64::consts::TAU * x).sin() * m.mass()[j];
            }
            (c * c + s * s).sqrt()
        };
        let a0 = mode(&sol.path.measures[0]);
        let a1 = mode(sol.path.measures.last().unwrap());
        let observed_rate = -(a1 / a0).ln() / 0.05;
        // Discrete eigenvalue of the implicit scheme for the first mode:
        // lambda_h = (2 - 2 cos(2 pi h)) / h^2, and each step multiplies the
        // mode by 1 / (1 + dt lambda_h).
        let h = grid.h();
        let lam_h = (2.0 - 2.0 * (std::f64::consts::TAU * h).cos()) / (h * h);
        let dt = mesh.dt();
        let discrete_rate = (1.0 + dt * lam_h).ln() / dt;
        assert!(
            (observed_rate - discrete_rate).abs() / discrete_rate < 1e-6,
            "observed {observed_rate}, discrete {discrete_rate}"
        );
        // and the discrete rate is within about dt + h^2 of 4 pi^2
        let continuum = 4.0 * std::f64::consts::PI.powi(2);
        assert!((discrete_rate - continuum).abs() / continuum < 0.05);
    }

    #[test]
    fn ledger_is_exact() {
        let n = 48;
        let grid = Arc::new(TorusGrid::new(n));
        let m0 = GridMeasure::uniform(Arc::clone(&grid), 0.9);
        let mesh = Mesh::new(0.0, 0.2, 300).unwrap();
        let mut control = ControlField::zero(mesh.clone(), n);
        for (k, (al, be)) in control
            .alpha
            .iter_mut()
            .zip(control.beta.iter_mut())
            .enumerate()
        {
            for j in 0..n {
                let x = j as f64 / n as f64;
                al[j] = 1.5 * (std::f64::consts::TAU * (x + 0.01 * k as f64)).sin();
                be[j] = 2.0 * (std::f64::consts::TAU * x).cos().max(0.0);
            }
        }
        let sol = solve_fp(&control, &m0, &mesh).unwrap();
        assert!(sol.mass_defect() < 1e-10, "defect {}", sol.mass_defect());
        // ledger equals sum over steps of dt * beta * m_post exactly
        let dt = mesh.dt();
        for (k, killed_k) in sol.killed.iter().enumerate() {
            for j in 0..n {
                let expected = dt * control.beta[k][j] * sol.path.measures[k + 1].mass()[j];
                assert!((killed_k[j] - expected).abs() < 1e-15);
            }
        }
        assert!(sol.path.mass_nonincreasing(1e-12));
    }

    #[test]
    fn cfl_violation_detected() {
        let grid = Arc::new(TorusGrid::new(64));
        let m0 = GridMeasure::uniform(Arc::clone(&grid), 1.0);
        let mesh = Mesh::new(0.0, 1.0, 10).unwrap();
        let mut control = ControlField::zero(mesh.clone(), 64);
        for slice in control.alpha.iter_mut() {
            for v in slice.iter_mut() {
                *v = 5.0;
            }
        }
        assert!(matches!(
            solve_fp(&control, &m0, &mesh),
            Err(Error::CflViolation { .. })
        ));
    }
}

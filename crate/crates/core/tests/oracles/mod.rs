//! Independent reference computations used only by the test suites.
//!
//! Each oracle deliberately takes a different algorithmic route from the
//! implementation it checks: the dual-norm oracle solves the direct
//! `(f, s, t)` program instead of the flow dual, the transport oracle is a
//! dense LP over couplings instead of the cumulative-shift formula, the
//! single-particle solver is a fully explicit Godunov scheme, and the
//! obstacle-problem oracle is a coordinate-descent box QP.

use std::sync::Arc;

use meanstop_core::grid::{circle_dist, GridMeasure, MeasureRef, TorusGrid};
use meanstop_core::lp::{Cmp, LpProblem};
use meanstop_core::model::ModelSpec;

/// Bounded-Lipschitz distance by the direct linear program over the test
/// function values and the norm split `(s, t)`.
#[allow(dead_code)]
pub fn bl_primal_lp(m: &GridMeasure, n: &GridMeasure) -> f64 {
    let nc = m.grid().n_cells();
    let h = m.grid().h();
    let mu: Vec<f64> = m
        .mass()
        .iter()
        .zip(n.mass())
        .map(|(a, b)| a - b)
        .collect();
    // vars: f_0..f_{nc-1} free, s, t
    let s_var = nc;
    let t_var = nc + 1;
    let mut lp = LpProblem::new(nc + 2, true);
    for j in 0..nc {
        lp.mark_free(j);
        lp.set_objective(j, mu[j]);
    }
    for j in 0..nc {
        lp.add_row(&[(j, 1.0), (s_var, -1.0)], Cmp::Le, 0.0);
        lp.add_row(&[(j, -1.0), (s_var, -1.0)], Cmp::Le, 0.0);
        let jp = (j + 1) % nc;
        lp.add_row(&[(jp, 1.0), (j, -1.0), (t_var, -h)], Cmp::Le, 0.0);
        lp.add_row(&[(j, 1.0), (jp, -1.0), (t_var, -h)], Cmp::Le, 0.0);
    }
    lp.add_row(&[(s_var, 1.0), (t_var, 1.0)], Cmp::Le, 1.0);
    lp.solve().expect("primal dual-norm LP").objective
}

/// Circular 1-Wasserstein distance by the dense transport LP.
#[allow(dead_code)]
pub fn w1_transport_lp(m: &GridMeasure, n: &GridMeasure) -> f64 {
    let nc = m.grid().n_cells();
    let grid = m.grid();
    let mut lp = LpProblem::new(nc * nc, false);
    for i in 0..nc {
        for j in 0..nc {
            lp.set_objective(i * nc + j, circle_dist(grid.node(i), grid.node(j)));
        }
    }
    for i in 0..nc {
        let row: Vec<(usize, f64)> = (0..nc).map(|j| (i * nc + j, 1.0)).collect();
        lp.add_row(&row, Cmp::Eq, m.mass()[i]);
    }
    for j in 0..nc {
        let col: Vec<(usize, f64)> = (0..nc).map(|i| (i * nc + j, 1.0)).collect();
        lp.add_row(&col, Cmp::Eq, n.mass()[j]);
    }
    lp.solve().expect("transport LP").objective
}

/// Fully explicit Godunov-flux solver for the single-particle obstacle
/// problem
/// `max{ -v_t - v_xx + H(x, N v_x, m)/N , v - (G(0) + Ψ(x, m)/N) } = 0`
/// with terminal data `min(G(m_x^{N,1}), G(0) + Ψ(x, m_x^{N,1})/N)`.
#[allow(dead_code)]
pub struct SingleParticleReference {
    pub grid: Arc<TorusGrid>,
    pub values: Vec<Vec<f64>>, // [step][node]
    pub times: Vec<f64>,
}

#[allow(dead_code)]
pub fn solve_single_particle(
    model: &ModelSpec,
    big_n: usize,
    n_cells: usize,
    n_steps: usize,
) -> SingleParticleReference {
    let grid = Arc::new(TorusGrid::new(n_cells));
    let h = grid.h();
    let t_end = model.horizon;
    let dt = t_end / n_steps as f64;
    assert!(dt <= 0.25 * h * h, "explicit reference needs dt <= h^2/4");
    let scale = big_n as f64;
    let weight = 1.0 / scale;

    // Godunov flux for convex H via the p-argmin found by ternary search;
    // the single-particle measure depends only on the node, so the argmin
    // is precomputed per node.
    let argmin_p = |x: f64, m: &MeasureRef<'_>| -> f64 {
        let (mut lo, mut hi) = (-20.0f64, 20.0f64);
        for _ in 0..120 {
            let p1 = lo + (hi - lo) / 3.0;
            let p2 = hi - (hi - lo) / 3.0;
            if model.h(x, p1, m) < model.h(x, p2, m) {
                hi = p2;
            } else {
                lo = p1;
            }
        }
        0.5 * (lo + hi)
    };
    let p_star_at: Vec<f64> = (0..n_cells)
        .map(|j| {
            let x = grid.node(j);
            let pos = [x];
            let m = MeasureRef::Atoms {
                positions: &pos,
                weight,
            };
            argmin_p(x, &m)
        })
        .collect();

    let mut values = vec![vec![0.0; n_cells]; n_steps + 1];
    let times: Vec<f64> = (0..=n_steps).map(|s| s as f64 * dt).collect();

    // Terminal envelope for one particle, built directly.
    for j in 0..n_cells {
        let x = grid.node(j);
        let pos = [x];
        let m = MeasureRef::Atoms {
            positions: &pos,
            weight,
        };
        let keep = model.g(&m);
        let drop = model.g_zero() + model.psi(x, &m) * weight;
        values[n_steps][j] = keep.min(drop);
    }

    for step in (0..n_steps).rev() {
        let prev = values[step + 1].clone();
        for j in 0..n_cells {
            let x = grid.node(j);
            let pos = [x];
            let m = MeasureRef::Atoms {
                positions: &pos,
                weight,
            };
            let vm = prev[(j + n_cells - 1) % n_cells];
            let vp = prev[(j + 1) % n_cells];
            let v0 = prev[j];
            let lap = (vp - 2.0 * v0 + vm) / (h * h);
            let p_minus = scale * (v0 - vm) / h;
            let p_plus = scale * (vp - v0) / h;
            let p_star = p_star_at[j];
            let ham = if p_minus <= p_plus {
                model.h(x, p_star.clamp(p_minus, p_plus), &m)
            } else {
                model.h(x, p_plus, &m).max(model.h(x, p_minus, &m))
            };
            let mut v = v0 + dt * (lap - ham / scale);
            let obstacle = model.g_zero() + model.psi(x, &m) * weight;
            if v > obstacle {
                v = obstacle;
            }
            values[step][j] = v;
        }
    }

    SingleParticleReference {
        grid,
        values,
        times,
    }
}

/// Box-constrained quadratic program `min ½ fᵀQf - bᵀf` over `f <= 0` with
/// the (periodic tridiagonal) `H¹` Gram matrix, solved by cyclic
/// coordinate descent to convergence.
#[allow(dead_code)]
pub fn phi_qp_oracle(mu: &[f64], h: f64) -> (f64, Vec<f64>) {
    let n = mu.len();
    // Q = h ( I + D^T D / h^2 ) acting periodically; row j has diagonal
    // h (1 + 2/h^2) and off-diagonals -h/h^2 at j±1.
    let diag = h * (1.0 + 2.0 / (h * h));
    let off = -1.0 / h;
    let b: Vec<f64> = mu.iter().map(|v| v * h).collect();
    let mut f = vec![0.0; n];
    for _ in 0..500_000 {
        let mut change: f64 = 0.0;
        for j in 0..n {
            let neighbors = off * (f[(j + 1) % n] + f[(j + n - 1) % n]);
            let unconstrained = (b[j] - neighbors) / diag;
            let new = unconstrained.min(0.0);
            change = change.max((new - f[j]).abs());
            f[j] = new;
        }
        if change < 1e-15 {
            break;
        }
    }
    let mut quad = 0.0;
    let mut lin = 0.0;
    for j in 0..n {
        let df = (f[(j + 1) % n] - f[j]) / h;
        quad += h * (f[j] * f[j] + df * df);
        lin += b[j] * f[j];
    }
    (lin - 0.5 * quad, f)
}

/// Deterministic random sub-probability measure for test instances.
#[allow(dead_code)]
pub fn random_measure(
    grid: &Arc<TorusGrid>,
    rng: &mut impl rand::Rng,
    total: f64,
) -> GridMeasure {
    let n = grid.n_cells();
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    GridMeasure::new(
        Arc::clone(grid),
        raw.into_iter().map(|v| v / s * total).collect(),
    )
    .unwrap()
}

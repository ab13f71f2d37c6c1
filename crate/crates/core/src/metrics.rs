//! Distances on sub-probability measures: the bounded-Lipschitz dual norm,
//! the circular 1-Wasserstein distance for equal masses, the removal-aware
//! distance `rho`, and its empirical-state specialization.
//!
//! The dual norm is computed exactly as a linear program. We solve the dual
//! (flow) formulation
//!
//! ```text
//! d(m, n) = min over edge flows psi and creations a of
//!           max( sum_j |a_j|, h * sum_j |psi_j| )
//!           with a_j = mu_j - psi_{j-1} + psi_j,  mu = m - n,
//! ```
//!
//! which has n + 2 rows instead of the 4n + 1 of the direct formulation
//! over `(f, s, t)`; the two agree by strong duality, and the test suite
//! checks the direct formulation against this one.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{circle_dist, EmpiricalState, GridMeasure};
use crate::lp::{Cmp, LpProblem};

/// Bounded-Lipschitz distance: the dual norm of `{ ||f||_inf + ||Df||_inf <= 1 }`
/// with `D` the forward difference over `h`, periodic.
pub fn bl_distance(m: &GridMeasure, n: &GridMeasure) -> Result<f64> {
    m.grid().same_as(n.grid())?;
    let mu: Vec<f64> = m
        .mass()
        .iter()
        .zip(n.mass())
        .map(|(a, b)| a - b)
        .collect();
    bl_norm(&mu, m.grid().h())
}

/// Dual norm of a signed cell-mass vector, via the flow LP.
pub(crate) fn bl_norm(mu: &[f64], h: f64) -> Result<f64> {
    let nc = mu.len();
    if mu.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    // Variables: psi+ (nc), psi- (nc), a+ (nc), a- (nc), lambda (1).
    let psi_p = 0;
    let psi_m = nc;
    let a_p = 2 * nc;
    let a_m = 3 * nc;
    let lambda = 4 * nc;
    let mut lp = LpProblem::new(4 * nc + 1, false);
    lp.set_objective(lambda, 1.0);
    for j in 0..nc {
        let jm = (j + nc - 1) % nc;
        lp.add_row(
            &[
                (a_p + j, 1.0),
                (a_m + j, -1.0),
                (psi_p + jm, 1.0),
                (psi_m + jm, -1.0),
                (psi_p + j, -1.0),
                (psi_m + j, 1.0),
            ],
            Cmp::Eq,
            mu[j],
        );
    }
    let mut tv_row: Vec<(usize, f64)> = (0..nc).map(|j| (a_p + j, 1.0)).collect();
    tv_row.extend((0..nc).map(|j| (a_m + j, 1.0)));
    tv_row.push((lambda, -1.0));
    lp.add_row(&tv_row, Cmp::Le, 0.0);
    let mut flow_row: Vec<(usize, f64)> = (0..nc).map(|j| (psi_p + j, h)).collect();
    flow_row.extend((0..nc).map(|j| (psi_m + j, h)));
    flow_row.push((lambda, -1.0));
    lp.add_row(&flow_row, Cmp::Le, 0.0);
    Ok(lp.solve()?.objective)
}

/// Circular 1-Wasserstein distance between two measures of equal total
/// mass, by the cumulative-shift formula (exact in one dimension).
pub fn w1_distance(m: &GridMeasure, n: &GridMeasure) -> Result<f64> {
    m.grid().same_as(n.grid())?;
    let (tm, tn) = (m.total(), n.total());
    if (tm - tn).abs() > 1e-10 {
        return Err(Error::MassMismatch(tm, tn));
    }
    let nc = m.grid().n_cells();
    let h = m.grid().h();
    // F_j = net mass of m - n on cells 0..=j; the transport flow across the
    // arc (x_j, x_{j+1}) is F_j - c for a free circulation constant c, and
    // the cost h * sum |F_j - c| is minimized at the median.
    let mut f = Vec::with_capacity(nc);
    let mut acc = 0.0;
    for j in 0..nc {
        acc += m.mass()[j] - n.mass()[j];
        f.push(acc);
    }
    let mut sorted = f.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Any point between the two middle values is optimal for even nc; pick
    // the lower middle for determinism.
    let med = if nc % 2 == 1 {
        sorted[nc / 2]
    } else {
        sorted[nc / 2 - 1]
    };
    Ok(h * f.iter().map(|v| (v - med).abs()).sum::<f64>())
}

/// The removal-aware distance: with `total(m) <= total(n)`,
/// `rho(m, n) = n(T) - m(T) + inf { d(m, n') : n' <= n, n'(T) = m(T) }`,
/// the infimum solved jointly with the dual-norm flow as one LP.
pub fn rho_distance(m: &GridMeasure, n: &GridMeasure) -> Result<f64> {
    m.grid().same_as(n.grid())?;
    let (tm, tn) = (m.total(), n.total());
    let (small, big) = if tm <= tn { (m, n) } else { (n, m) };
    let mass_gap = (tn - tm).abs();
    let t_small = small.total();
    if t_small == 0.0 {
        return Ok(mass_gap);
    }
    let nc = m.grid().n_cells();
    let h = m.grid().h();
    // Variables: psi+ psi- a+ a- (4 nc), lambda (1), nprime (nc).
    let psi_p = 0;
    let psi_m = nc;
    let a_p = 2 * nc;
    let a_m = 3 * nc;
    let lambda = 4 * nc;
    let np = 4 * nc + 1;
    let mut lp = LpProblem::new(5 * nc + 1, false);
    lp.set_objective(lambda, 1.0);
    for j in 0..nc {
        let jm = (j + nc - 1) % nc;
        lp.add_row(
            &[
                (a_p + j, 1.0),
                (a_m + j, -1.0),
                (psi_p + jm, 1.0),
                (psi_m + jm, -1.0),
                (psi_p + j, -1.0),
                (psi_m + j, 1.0),
                (np + j, 1.0),
            ],
            Cmp::Eq,
            small.mass()[j],
        );
        lp.add_row(&[(np + j, 1.0)], Cmp::Le, big.mass()[j]);
    }
    let mut tv_row: Vec<(usize, f64)> = (0..nc).map(|j| (a_p + j, 1.0)).collect();
    tv_row.extend((0..nc).map(|j| (a_m + j, 1.0)));
    tv_row.push((lambda, -1.0));
    lp.add_row(&tv_row, Cmp::Le, 0.0);
    let mut flow_row: Vec<(usize, f64)> = (0..nc).map(|j| (psi_p + j, h)).collect();
    flow_row.extend((0..nc).map(|j| (psi_m + j, h)));
    flow_row.push((lambda, -1.0));
    lp.add_row(&flow_row, Cmp::Le, 0.0);
    let eq_row: Vec<(usize, f64)> = (0..nc).map(|j| (np + j, 1.0)).collect();
    lp.add_row(&eq_row, Cmp::Eq, t_small);
    Ok(mass_gap + lp.solve()?.objective)
}

/// `rho` between empirical states sharing a normalizer: the mass gap plus
/// an exact best sub-selection matching.
///
/// For matched sizes up to 3, every permutation is enumerated; for larger
/// sizes, both sides are sorted and the cyclic shifts of the sorted
/// matching are tried, which is exact for the geodesic cost on the circle.
pub fn empirical_rho(a: &EmpiricalState, b: &EmpiricalState) -> Result<f64> {
    if a.big_n() != b.big_n() {
        return Err(Error::NormalizerMismatch(a.big_n(), b.big_n()));
    }
    let (small, big) = if a.k() <= b.k() { (a, b) } else { (b, a) };
    let n = small.big_n() as f64;
    let gap = (big.k() - small.k()) as f64 / n;
    if small.k() == 0 {
        return Ok(gap);
    }
    let ks = small.k();
    let mut best = f64::INFINITY;
    let mut selection: Vec<usize> = (0..ks).collect();
    loop {
        let chosen: Vec<f64> = selection.iter().map(|&i| big.positions()[i]).collect();
        let cost = best_matching(small.positions(), &chosen);
        if cost < best {
            best = cost;
        }
        if !next_combination(&mut selection, big.k()) {
            break;
        }
    }
    Ok(gap + best / n)
}

/// Minimal sum of circle distances over bijections between two equal-size
/// position sets.
fn best_matching(xs: &[f64], ys: &[f64]) -> f64 {
    let k = xs.len();
    debug_assert_eq!(k, ys.len());
    if k <= 3 {
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let cost: f64 = (0..k).map(|i| circle_dist(xs[i], ys[p[i]])).sum();
            if cost < best {
                best = cost;
            }
        });
        best
    } else {
        let mut xs = xs.to_vec();
        let mut ys = ys.to_vec();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut best = f64::INFINITY;
        for shift in 0..k {
            let cost: f64 = (0..k)
                .map(|i| circle_dist(xs[i], ys[(i + shift) % k]))
                .sum();
            if cost < best {
                best = cost;
            }
        }
        best
    }
}

fn permute(perm: &mut Vec<usize>, i: usize, visit: &mut impl FnMut(&[usize])) {
    if i == perm.len() {
        visit(perm);
        return;
    }
    for j in i..perm.len() {
        perm.swap(i, j);
        permute(perm, i + 1, visit);
        perm.swap(i, j);
    }
}

/// Advance `sel` to the next k-combination of `0..n` in lexicographic
/// order; returns false after the last one.
fn next_combination(sel: &mut [usize], n: usize) -> bool {
    let k = sel.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if sel[i] < n - (k - i) {
            sel[i] += 1;
            for j in i + 1..k {
                sel[j] = sel[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Approximate a grid measure by `K = round(N * total)` particles placed by
/// inverse-CDF sampling at quantile midpoints, the mass of each cell spread
/// uniformly over its arc.
pub fn approximate_measure(m0: &GridMeasure, big_n: usize) -> Result<EmpiricalState> {
    if big_n == 0 {
        return Err(Error::InvalidParameter("N must be positive".into()));
    }
    let total = m0.total();
    let k = (big_n as f64 * total).round() as usize;
    let k = k.min(big_n);
    if k == 0 || total == 0.0 {
        return EmpiricalState::new(big_n, Vec::new());
    }
    let grid = m0.grid();
    let nc = grid.n_cells();
    let h = grid.h();
    let mut positions = Vec::with_capacity(k);
    let mut cell = 0usize;
    let mut below = 0.0; // mass strictly before the current cell
    for i in 1..=k {
        let q = (i as f64 - 0.5) * total / k as f64;
        while cell < nc && below + m0.mass()[cell] < q {
            below += m0.mass()[cell];
            cell += 1;
        }
        let cell = cell.min(nc - 1);
        let inside = ((q - below) / m0.mass()[cell].max(f64::MIN_POSITIVE)).clamp(0.0, 1.0);
        // Cell `cell` spans [x_cell - h/2, x_cell + h/2).
        let x = grid.node(cell) - 0.5 * h + inside * h;
        positions.push(crate::grid::wrap(x));
    }
    EmpiricalState::new(big_n, positions)
}

/// Convenience: the `(n_cells)` dual-norm distance between an empirical
/// state (deposited on the grid) and a grid measure.
pub fn bl_to_empirical(m: &GridMeasure, e: &EmpiricalState) -> Result<f64> {
    let dep = e.as_measure(Arc::clone(m.grid()));
    bl_distance(m, &dep)
}

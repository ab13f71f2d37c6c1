//! Small dense linear-program solver (two-phase primal simplex).
//!
//! The metric module needs exact values of dual-norm and transport programs
//! with a few hundred variables at most, so a dense tableau with Bland's
//! rule as an anti-cycling fallback is plenty. Problems are stated with
//! free or nonnegative variables and `<=`, `>=`, `=` rows; standardization
//! happens internally.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    cmp: Cmp,
    rhs: f64,
}

/// An LP in user form: `n_vars` variables, each nonnegative unless marked
/// free, linear rows, and a linear objective.
#[derive(Debug, Clone)]
pub struct LpProblem {
    n_vars: usize,
    maximize: bool,
    objective: Vec<f64>,
    rows: Vec<Row>,
    free: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub objective: f64,
    pub x: Vec<f64>,
}

impl LpProblem {
    pub fn new(n_vars: usize, maximize: bool) -> Self {
        LpProblem {
            n_vars,
            maximize,
            objective: vec![0.0; n_vars],
            rows: Vec::new(),
            free: vec![false; n_vars],
        }
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    /// Mark a variable as free (unbounded in both directions).
    pub fn mark_free(&mut self, var: usize) {
        self.free[var] = true;
    }

    pub fn add_row(&mut self, coeffs: &[(usize, f64)], cmp: Cmp, rhs: f64) {
        self.rows.push(Row {
            coeffs: coeffs.to_vec(),
            cmp,
            rhs,
        });
    }

    pub fn solve(&self) -> Result<LpSolution> {
        // Standard form: every free variable splits into a difference of two
        // nonnegative ones.
        let mut col_of = Vec::with_capacity(self.n_vars); // (plus column, optional minus column)
        let mut n_std = 0usize;
        for i in 0..self.n_vars {
            if self.free[i] {
                col_of.push((n_std, Some(n_std + 1)));
                n_std += 2;
            } else {
                col_of.push((n_std, None));
                n_std += 1;
            }
        }

        let m = self.rows.len();
        let mut a = vec![vec![0.0f64; n_std]; m];
        let mut b = vec![0.0f64; m];
        let mut cmps = vec![Cmp::Eq; m];
        for (r, row) in self.rows.iter().enumerate() {
            let flip = row.rhs < 0.0;
            let sgn = if flip { -1.0 } else { 1.0 };
            b[r] = sgn * row.rhs;
            cmps[r] = match (row.cmp, flip) {
                (Cmp::Eq, _) => Cmp::Eq,
                (Cmp::Le, false) | (Cmp::Ge, true) => Cmp::Le,
                (Cmp::Ge, false) | (Cmp::Le, true) => Cmp::Ge,
            };
            for &(i, v) in &row.coeffs {
                let (p, mopt) = col_of[i];
                a[r][p] += sgn * v;
                if let Some(mcol) = mopt {
                    a[r][mcol] -= sgn * v;
                }
            }
        }

        // Slack / surplus columns, then artificials.
        let n_struct = n_std;
        for (r, cmp) in cmps.iter().enumerate() {
            match cmp {
                Cmp::Le | Cmp::Ge => {
                    for (rr, row) in a.iter_mut().enumerate() {
                        row.push(if rr == r {
                            if *cmp == Cmp::Le {
                                1.0
                            } else {
                                -1.0
                            }
                        } else {
                            0.0
                        });
                    }
                    n_std += 1;
                }
                Cmp::Eq => {}
            }
        }
        let mut basis = vec![usize::MAX; m];
        let mut artificial_start = n_std;
        for (r, cmp) in cmps.iter().enumerate() {
            match cmp {
                Cmp::Le => {
                    // The slack column for row r is a valid starting basis.
                    let mut col = n_struct;
                    for (rr, c) in cmps.iter().enumerate().take(r) {
                        if *c != Cmp::Eq {
                            let _ = rr;
                            col += 1;
                        }
                    }
                    basis[r] = col;
                }
                Cmp::Ge | Cmp::Eq => {
                    for (rr, row) in a.iter_mut().enumerate() {
                        row.push(if rr == r { 1.0 } else { 0.0 });
                    }
                    basis[r] = n_std;
                    n_std += 1;
                }
            }
        }
        if artificial_start > n_std {
            artificial_start = n_std;
        }

        let mut tab = Tableau {
            a,
            b,
            basis,
            n_cols: n_std,
        };

        // Phase 1.
        if artificial_start < n_std {
            let mut cost = vec![0.0; n_std];
            for c in cost.iter_mut().skip(artificial_start) {
                *c = 1.0;
            }
            let val = tab.run(&cost)?;
            if val > FEAS_TOL {
                return Err(Error::Lp(format!("infeasible (phase-1 value {val:.3e})")));
            }
            tab.evict_artificials(artificial_start);
            tab.n_cols = artificial_start;
            for row in tab.a.iter_mut() {
                row.truncate(artificial_start);
            }
        }

        // Phase 2.
        let mut cost = vec![0.0; tab.n_cols];
        for i in 0..self.n_vars {
            let c = if self.maximize {
                -self.objective[i]
            } else {
                self.objective[i]
            };
            let (p, mopt) = col_of[i];
            cost[p] += c;
            if let Some(mcol) = mopt {
                cost[mcol] -= c;
            }
        }
        let val = tab.run(&cost)?;

        let mut x = vec![0.0; self.n_vars];
        let std_x = tab.solution();
        for i in 0..self.n_vars {
            let (p, mopt) = col_of[i];
            x[i] = std_x[p];
            if let Some(mcol) = mopt {
                x[i] -= std_x[mcol];
            }
        }
        let objective = if self.maximize { -val } else { val };
        Ok(LpSolution { objective, x })
    }
}

struct Tableau {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    basis: Vec<usize>,
    n_cols: usize,
}

impl Tableau {
    /// Minimize `cost . x` from the current basic feasible point.
    /// Returns the objective value.
    fn run(&mut self, cost: &[f64]) -> Result<f64> {
        let m = self.a.len();
        // Reduced-cost row, kept in sync by the same pivots.
        let mut z: Vec<f64> = cost[..self.n_cols].to_vec();
        for r in 0..m {
            let bi = self.basis[r];
            // A basic artificial left over on a redundant row carries zero
            // cost once its column has been dropped.
            let cb = if bi < cost.len() { cost[bi] } else { 0.0 };
            if cb != 0.0 {
                for j in 0..self.n_cols {
                    z[j] -= cb * self.a[r][j];
                }
            }
        }

        let max_iter = 200 * (m + self.n_cols) + 2000;
        let bland_after = 20 * (m + self.n_cols) + 200;
        for iter in 0..max_iter {
            let entering = if iter < bland_after {
                // Dantzig: most negative reduced cost.
                let mut best = COST_TOL;
                let mut pick = None;
                for (j, &zj) in z.iter().enumerate() {
                    if -zj > best {
                        best = -zj;
                        pick = Some(j);
                    }
                }
                pick
            } else {
                // Bland: first negative.
                z.iter().position(|&zj| zj < -COST_TOL)
            };
            let Some(e) = entering else {
                let mut obj = 0.0;
                for r in 0..m {
                    let bi = self.basis[r];
                    let cb = if bi < cost.len() { cost[bi] } else { 0.0 };
                    obj += cb * self.b[r];
                }
                return Ok(obj);
            };

            // Ratio test; ties resolved toward the smallest basis index.
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for r in 0..m {
                let are = self.a[r][e];
                if are > PIVOT_TOL {
                    let ratio = self.b[r] / are;
                    if ratio < best_ratio - 1e-12
                        || (ratio < best_ratio + 1e-12
                            && leave.is_some_and(|l| self.basis[r] < self.basis[l]))
                    {
                        best_ratio = ratio;
                        leave = Some(r);
                    }
                }
            }
            let Some(l) = leave else {
                return Err(Error::Lp("unbounded".into()));
            };
            let _ = best_ratio;
            self.pivot(l, e);
            // Update reduced costs.
            let ze = z[e];
            for j in 0..self.n_cols {
                z[j] -= ze * self.a[l][j];
            }
            z[e] = 0.0;
        }
        Err(Error::Lp("iteration limit reached".into()))
    }

    fn pivot(&mut self, l: usize, e: usize) {
        let m = self.a.len();
        let p = self.a[l][e];
        for j in 0..self.n_cols {
            self.a[l][j] /= p;
        }
        self.b[l] /= p;
        self.a[l][e] = 1.0;
        for r in 0..m {
            if r == l {
                continue;
            }
            let f = self.a[r][e];
            if f != 0.0 {
                for j in 0..self.n_cols {
                    self.a[r][j] -= f * self.a[l][j];
                }
                self.b[r] -= f * self.b[l];
                self.a[r][e] = 0.0;
            }
        }
        self.basis[l] = e;
    }

    /// Pivot zero-level artificial variables out of the basis where possible.
    fn evict_artificials(&mut self, artificial_start: usize) {
        let m = self.a.len();
        for r in 0..m {
            if self.basis[r] >= artificial_start {
                if let Some(e) =
                    (0..artificial_start).find(|&j| self.a[r][j].abs() > PIVOT_TOL)
                {
                    self.pivot(r, e);
                }
                // A fully zero row is redundant; the artificial stays basic
                // at level zero and never re-enters because its column is
                // dropped right after.
            }
        }
    }

    fn solution(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n_cols];
        for (r, &bi) in self.basis.iter().enumerate() {
            if bi < self.n_cols {
                x[bi] = self.b[r];
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_max() {
        // max 3x + 2y st x + y <= 4, x + 3y <= 6, x,y >= 0 -> x=4, y=0, obj 12
        let mut lp = LpProblem::new(2, true);
        lp.set_objective(0, 3.0);
        lp.set_objective(1, 2.0);
        lp.add_row(&[(0, 1.0), (1, 1.0)], Cmp::Le, 4.0);
        lp.add_row(&[(0, 1.0), (1, 3.0)], Cmp::Le, 6.0);
        let s = lp.solve().unwrap();
        assert!((s.objective - 12.0).abs() < 1e-9);
        assert!((s.x[0] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_free_vars() {
        // min x + y st x - y = 3, x + y >= 5, y free, x >= 0 -> x=4, y=1
        let mut lp = LpProblem::new(2, false);
        lp.set_objective(0, 1.0);
        lp.set_objective(1, 1.0);
        lp.mark_free(1);
        lp.add_row(&[(0, 1.0), (1, -1.0)], Cmp::Eq, 3.0);
        lp.add_row(&[(0, 1.0), (1, 1.0)], Cmp::Ge, 5.0);
        let s = lp.solve().unwrap();
        assert!((s.objective - 5.0).abs() < 1e-9, "{s:?}");
        assert!((s.x[0] - 4.0).abs() < 1e-9);
        assert!((s.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_rows() {
        // min 2x + y st -x - y <= -3 (x + y >= 3) -> obj 3 at (0,3)
        let mut lp = LpProblem::new(2, false);
        lp.set_objective(0, 2.0);
        lp.set_objective(1, 1.0);
        lp.add_row(&[(0, -1.0), (1, -1.0)], Cmp::Le, -3.0);
        let s = lp.solve().unwrap();
        assert!((s.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        let mut lp = LpProblem::new(1, false);
        lp.set_objective(0, 1.0);
        lp.add_row(&[(0, 1.0)], Cmp::Le, 1.0);
        lp.add_row(&[(0, 1.0)], Cmp::Ge, 2.0);
        assert!(lp.solve().is_err());
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LpProblem::new(1, true);
        lp.set_objective(0, 1.0);
        lp.add_row(&[(0, -1.0)], Cmp::Le, 0.0);
        assert!(lp.solve().is_err());
    }

    #[test]
    fn degenerate_transport_like() {
        // Assignment-like LP with many ties; exercises the anti-cycling path.
        let n = 4;
        let mut lp = LpProblem::new(n * n, false);
        for i in 0..n {
            for j in 0..n {
                lp.set_objective(i * n + j, ((i + 2 * j) % 3) as f64);
            }
        }
        for i in 0..n {
            let row: Vec<(usize, f64)> = (0..n).map(|j| (i * n + j, 1.0)).collect();
            lp.add_row(&row, Cmp::Eq, 1.0);
            let col: Vec<(usize, f64)> = (0..n).map(|j| (j * n + i, 1.0)).collect();
            lp.add_row(&col, Cmp::Eq, 1.0);
        }
        let s = lp.solve().unwrap();
        assert!(s.objective >= -1e-9);
    }
}

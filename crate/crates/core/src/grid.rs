//! Periodic 1-D grids, grid functions, sub-probability measures, and
//! empirical particle states on the unit torus.
//!
//! Conventions used throughout the crate:
//! - nodes sit at `x_j = j * h` with `h = 1 / n_cells`;
//! - cell `j` is the arc `[x_j - h/2, x_j + h/2)`, so a point is deposited
//!   to the cell of its nearest node;
//! - measures store *mass per cell* (not densities), so totals are exact
//!   sums; densities are derived as `mass / h` only where stencils need
//!   them;
//! - all types are immutable after construction.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Distance on the unit circle with the shorter-arc convention.
///
/// Ties at exactly 1/2 are broken toward the positive orientation, i.e. the
/// representative difference is taken in `(-1/2, 1/2]`.
pub fn circle_dist(x: f64, y: f64) -> f64 {
    let mut d = (x - y).rem_euclid(1.0);
    if d > 0.5 {
        d = 1.0 - d;
    }
    d
}

/// Wrap a point onto `[0, 1)`.
pub fn wrap(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    if w == 1.0 {
        0.0
    } else {
        w
    }
}

/// A uniform periodic grid on the unit torus.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusGrid {
    n_cells: usize,
    h: f64,
}

impl TorusGrid {
    pub fn new(n_cells: usize) -> Self {
        assert!(n_cells > 0, "grid needs at least one cell");
        let h = 1.0 / n_cells as f64;
        debug_assert!((h * n_cells as f64 - 1.0).abs() < 1e-12);
        TorusGrid { n_cells, h }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Node position `x_j = j h`.
    pub fn node(&self, j: usize) -> f64 {
        (j % self.n_cells) as f64 * self.h
    }

    /// Periodic index.
    pub fn idx(&self, j: isize) -> usize {
        j.rem_euclid(self.n_cells as isize) as usize
    }

    /// Index of the cell containing `x` (the nearest node).
    pub fn cell_of(&self, x: f64) -> usize {
        let j = (wrap(x) / self.h).round() as usize;
        j % self.n_cells
    }

    pub fn same_as(&self, other: &TorusGrid) -> Result<()> {
        if self.n_cells != other.n_cells {
            return Err(Error::MismatchedGrids(self.n_cells, other.n_cells));
        }
        Ok(())
    }
}

/// A nonnegative mass vector on a periodic grid with total mass at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    grid: Arc<TorusGrid>,
    mass: Vec<f64>,
}

impl GridMeasure {
    pub fn new(grid: Arc<TorusGrid>, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.n_cells() {
            return Err(Error::MismatchedGrids(grid.n_cells(), mass.len()));
        }
        let mut total = 0.0;
        for &m in &mass {
            if !(m >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "measure has a negative or non-finite cell mass: {m}"
                )));
            }
            total += m;
        }
        if total > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "total mass {total} exceeds one"
            )));
        }
        Ok(GridMeasure { grid, mass })
    }

    pub fn zero(grid: Arc<TorusGrid>) -> Self {
        let n = grid.n_cells();
        GridMeasure {
            grid,
            mass: vec![0.0; n],
        }
    }

    /// Uniform measure with the given total mass.
    pub fn uniform(grid: Arc<TorusGrid>, total: f64) -> Self {
        let n = grid.n_cells();
        GridMeasure {
            grid,
            mass: vec![total / n as f64; n],
        }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Integrate a point function against the measure (nodes carry the mass).
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(j, &m)| f(self.grid.node(j)) * m)
            .sum()
    }

    /// Entrywise partial order `self <= other`.
    pub fn le(&self, other: &GridMeasure, tol: f64) -> bool {
        self.mass
            .iter()
            .zip(&other.mass)
            .all(|(a, b)| *a <= *b + tol)
    }

    /// Serialize in the plain-text column format
    /// `# torus-measure n_cells=<n>` followed by `index,mass` lines.
    ///
    /// The 17 significant digits make the round trip bit-exact.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# torus-measure n_cells={}", self.grid.n_cells());
        for (j, m) in self.mass.iter().enumerate() {
            let _ = writeln!(out, "{j},{m:.16e}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty measure file".into()))?;
        let n: usize = header
            .strip_prefix("# torus-measure n_cells=")
            .ok_or_else(|| Error::Parse(format!("bad measure header: {header}")))?
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("bad n_cells: {e}")))?;
        let grid = Arc::new(TorusGrid::new(n));
        let mut mass = vec![0.0; n];
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (idx, val) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad measure row: {line}")))?;
            let j: usize = idx
                .parse()
                .map_err(|e| Error::Parse(format!("bad index: {e}")))?;
            if j >= n {
                return Err(Error::Parse(format!("index {j} out of range")));
            }
            mass[j] = val
                .parse()
                .map_err(|e| Error::Parse(format!("bad mass: {e}")))?;
        }
        GridMeasure::new(grid, mass)
    }
}

/// Real values at the grid nodes, extended periodically.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<TorusGrid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<TorusGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::MismatchedGrids(grid.n_cells(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "grid function has non-finite entries".into(),
            ));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: Arc<TorusGrid>, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n_cells()).map(|j| f(grid.node(j))).collect();
        GridFunction { grid, values }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Forward difference `(f_{j+1} - f_j) / h`, periodic.
    pub fn forward_diff(&self) -> Vec<f64> {
        let n = self.values.len();
        let h = self.grid.h();
        (0..n)
            .map(|j| (self.values[(j + 1) % n] - self.values[j]) / h)
            .collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Discrete `W^{1,∞}` norm `‖f‖_∞ + ‖Df‖_∞` with the forward difference.
    pub fn w1inf_norm(&self) -> f64 {
        let d = self
            .forward_diff()
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        self.sup_norm() + d
    }
}

/// A configuration of `K <= N` surviving particles with population
/// normalizer `N`; positions are continuous torus points.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalState {
    big_n: usize,
    positions: Vec<f64>,
}

impl EmpiricalState {
    pub fn new(big_n: usize, positions: Vec<f64>) -> Result<Self> {
        if big_n == 0 {
            return Err(Error::InvalidParameter("N must be positive".into()));
        }
        if positions.len() > big_n {
            return Err(Error::Capacity {
                what: "particle count",
                got: positions.len(),
                limit: big_n,
            });
        }
        let positions = positions.into_iter().map(wrap).collect();
        Ok(EmpiricalState { big_n, positions })
    }

    pub fn big_n(&self) -> usize {
        self.big_n
    }

    pub fn k(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Mass of each particle, `1/N`.
    pub fn weight(&self) -> f64 {
        1.0 / self.big_n as f64
    }

    pub fn total(&self) -> f64 {
        self.k() as f64 / self.big_n as f64
    }

    /// The state with particle `i` removed.
    pub fn without(&self, i: usize) -> EmpiricalState {
        let mut positions = self.positions.clone();
        positions.remove(i);
        EmpiricalState {
            big_n: self.big_n,
            positions,
        }
    }

    /// Deposit the particles onto a grid, mass `1/N` to the nearest cell.
    ///
    /// The total of the result is `K/N` up to a final-bit rounding: the
    /// accumulated summation residue is folded back into the heaviest cell.
    pub fn as_measure(&self, grid: Arc<TorusGrid>) -> GridMeasure {
        let n = grid.n_cells();
        let mut counts = vec![0usize; n];
        for &x in &self.positions {
            counts[grid.cell_of(x)] += 1;
        }
        let inv_n = self.big_n as f64;
        let mut mass: Vec<f64> = counts.iter().map(|&c| c as f64 / inv_n).collect();
        let target = self.total();
        for _ in 0..2 {
            let sum: f64 = mass.iter().sum();
            let residual = target - sum;
            if residual == 0.0 {
                break;
            }
            if let Some(j) = (0..n).max_by(|&a, &b| mass[a].partial_cmp(&mass[b]).unwrap()) {
                mass[j] += residual;
            }
        }
        GridMeasure { grid, mass }
    }
}

/// A borrowed view of a sub-probability measure, accepted by model
/// evaluations so the same model runs against grid measures, empirical
/// states, and raw particle slices alike.
#[derive(Debug, Clone, Copy)]
pub enum MeasureRef<'a> {
    Grid(&'a GridMeasure),
    Empirical(&'a EmpiricalState),
    /// Equal-weight atoms, used in the N-particle solver hot loop.
    Atoms { positions: &'a [f64], weight: f64 },
    Zero,
}

impl MeasureRef<'_> {
    pub fn total(&self) -> f64 {
        match self {
            MeasureRef::Grid(m) => m.total(),
            MeasureRef::Empirical(e) => e.total(),
            MeasureRef::Atoms { positions, weight } => positions.len() as f64 * weight,
            MeasureRef::Zero => 0.0,
        }
    }

    pub fn integrate(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        match self {
            MeasureRef::Grid(m) => m.integrate(f),
            MeasureRef::Empirical(e) => {
                let w = e.weight();
                e.positions().iter().map(|&x| f(x) * w).sum()
            }
            MeasureRef::Atoms { positions, weight } => {
                positions.iter().map(|&x| f(x) * weight).sum()
            }
            MeasureRef::Zero => 0.0,
        }
    }
}

impl<'a> From<&'a GridMeasure> for MeasureRef<'a> {
    fn from(m: &'a GridMeasure) -> Self {
        MeasureRef::Grid(m)
    }
}

impl<'a> From<&'a EmpiricalState> for MeasureRef<'a> {
    fn from(e: &'a EmpiricalState) -> Self {
        MeasureRef::Empirical(e)
    }
}

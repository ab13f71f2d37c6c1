//! Backward finite-difference solver for the hierarchy of obstacle HJB
//! equations indexed by the number of surviving particles.
//!
//! For each population level the scheme runs backward in time from the
//! monotone envelope of the terminal cost:
//!
//! 1. one implicit diffusion sub-step, dimensional splitting with periodic
//!    tridiagonal solves;
//! 2. one explicit Hamiltonian sub-step on the diffused field, centered
//!    differences with a local Lax-Friedrichs (upwind) correction where the
//!    scaled gradient exceeds the hybrid threshold;
//! 3. projection onto the removal obstacle built from the same-time tables
//!    of the lower levels, which are solved first within each time step.
//!
//! The Hamiltonian is truncated to `H^R` during stepping, with `R`
//! calibrated from the terminal envelope's sampled Lipschitz constant.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::envelopes::discrete_envelope_atoms;
use crate::error::{Error, Result};
use crate::grid::{circle_dist, EmpiricalState, MeasureRef, TorusGrid};
use crate::model::{truncate_hamiltonian, ModelSpec};
use crate::tridiag::solve_heat_implicit;

/// Centered differences are kept while `|N D_x V| <= HYBRID_THRESHOLD`.
pub const HYBRID_THRESHOLD: f64 = 1.0;

/// Hard cap on the tensor dimension.
pub const MAX_K: usize = 3;

#[derive(Debug, Clone)]
pub struct HierarchyConfig {
    pub big_n: usize,
    pub k_max: usize,
    pub n_cells: usize,
    pub n_steps: usize,
    pub t0: f64,
    /// The guard is `dt <= cfl_safety * h^2`.
    pub cfl_safety: f64,
    /// Evaluate the obstacle over every subset instead of single removals
    /// plus the full removal.
    pub full_subset_obstacle: bool,
}

impl HierarchyConfig {
    pub fn new(big_n: usize, k_max: usize, n_cells: usize, n_steps: usize) -> Self {
        HierarchyConfig {
            big_n,
            k_max,
            n_cells,
            n_steps,
            t0: 0.0,
            cfl_safety: 1.0,
            full_subset_obstacle: false,
        }
    }
}

/// The solved family of value tables, one tensor grid per population level.
pub struct ValueHierarchy {
    pub big_n: usize,
    pub k_max: usize,
    grid: Arc<TorusGrid>,
    times: Vec<f64>,
    /// `tables[k][step]` is the flattened table on `grid^k`
    /// (axis 0 fastest); the `k = 0` table has a single entry.
    tables: Vec<Vec<Vec<f64>>>,
    pub g_zero: f64,
    /// Truncation radius used during stepping.
    pub trunc_radius: f64,
    config: HierarchyConfig,
}

impl ValueHierarchy {
    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.config
    }

    pub fn table(&self, k: usize, step: usize) -> &[f64] {
        &self.tables[k][step]
    }

    /// Value by multilinear interpolation in space and linear in time.
    pub fn query_value(&self, t: f64, state: &EmpiricalState) -> Result<f64> {
        let k = state.k();
        if k > self.k_max {
            return Err(Error::OutOfRange(format!(
                "state has {k} particles, hierarchy solved up to {}",
                self.k_max
            )));
        }
        let t0 = self.times[0];
        let t1 = *self.times.last().unwrap();
        if t < t0 - 1e-9 || t > t1 + 1e-9 {
            return Err(Error::OutOfRange(format!("t = {t} outside [{t0}, {t1}]")));
        }
        if k == 0 {
            return Ok(self.g_zero);
        }
        let dt = self.dt();
        let s = ((t - t0) / dt).clamp(0.0, (self.times.len() - 1) as f64);
        let step = (s.floor() as usize).min(self.times.len() - 2);
        let w_t = s - step as f64;
        let v0 = self.interp_space(k, step, state.positions());
        if w_t <= 1e-12 {
            return Ok(v0);
        }
        let v1 = self.interp_space(k, step + 1, state.positions());
        Ok((1.0 - w_t) * v0 + w_t * v1)
    }

    fn interp_space(&self, k: usize, step: usize, positions: &[f64]) -> f64 {
        let n = self.grid.n_cells();
        let h = self.grid.h();
        let table = &self.tables[k][step];
        // Corner indices and weights per axis.
        let mut lo = [0usize; MAX_K];
        let mut w = [0.0f64; MAX_K];
        for (a, &x) in positions.iter().enumerate() {
            let u = crate::grid::wrap(x) / h;
            let j = u.floor() as usize % n;
            lo[a] = j;
            w[a] = u - u.floor();
        }
        let mut value = 0.0;
        for corner in 0..(1usize << k) {
            let mut idx = 0usize;
            let mut stride = 1usize;
            let mut weight = 1.0;
            for a in 0..k {
                let up = corner >> a & 1 == 1;
                let j = if up { (lo[a] + 1) % n } else { lo[a] };
                idx += j * stride;
                stride *= n;
                weight *= if up { w[a] } else { 1.0 - w[a] };
            }
            value += weight * table[idx];
        }
        value
    }
}

/// Solve the hierarchy for population levels `0..=k_max`.
pub fn solve_hierarchy(model: &ModelSpec, config: HierarchyConfig) -> Result<ValueHierarchy> {
    if config.k_max > MAX_K {
        return Err(Error::Capacity {
            what: "population levels",
            got: config.k_max,
            limit: MAX_K,
        });
    }
    if config.k_max > config.big_n {
        return Err(Error::InvalidParameter(format!(
            "k_max = {} exceeds N = {}",
            config.k_max, config.big_n
        )));
    }
    let grid = Arc::new(TorusGrid::new(config.n_cells));
    let h = grid.h();
    let horizon = model.horizon - config.t0;
    if horizon <= 0.0 {
        return Err(Error::InvalidParameter("t0 beyond the horizon".into()));
    }
    let dt = horizon / config.n_steps as f64;
    let limit = config.cfl_safety * h * h;
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::CflViolation {
            dt,
            limit,
            suggested_steps: (horizon / limit).ceil() as usize,
        });
    }

    let n = config.n_cells;
    let times: Vec<f64> = (0..=config.n_steps)
        .map(|s| config.t0 + s as f64 * dt)
        .collect();
    let g_zero = model.g_zero();

    // Level 0 is constant in time.
    let mut tables: Vec<Vec<Vec<f64>>> = Vec::with_capacity(config.k_max + 1);
    tables.push(vec![vec![g_zero]; config.n_steps + 1]);

    // Terminal envelopes per level, which also calibrate the truncation.
    let mut terminal: Vec<Vec<f64>> = Vec::with_capacity(config.k_max);
    for k in 1..=config.k_max {
        let size = n.pow(k as u32);
        let mut slice = vec![0.0; size];
        let mut coords = [0.0f64; MAX_K];
        for (idx, v) in slice.iter_mut().enumerate() {
            decode(idx, n, k, &grid, &mut coords);
            let (value, _) = discrete_envelope_atoms(model, &coords[..k], config.big_n);
            *v = value;
        }
        terminal.push(slice);
    }
    let mut env_lip: f64 = 0.0;
    if config.k_max >= 1 {
        let v_t = &terminal[0];
        for j in 0..n {
            let d = (v_t[(j + 1) % n] - v_t[j]).abs() / h;
            env_lip = env_lip.max(config.big_n as f64 * d);
        }
    }
    // The truncation radius must stay positive even for flat terminal data.
    let radius = (4.0 * env_lip).max(1.0);
    let stepping_model = truncate_hamiltonian(model, radius)?;

    for k in 1..=config.k_max {
        let size = n.pow(k as u32);
        let mut level: Vec<Vec<f64>> = vec![Vec::new(); config.n_steps + 1];
        level[config.n_steps] = std::mem::take(&mut terminal[k - 1]);

        let weight = 1.0 / config.big_n as f64;
        let mut coords = [0.0f64; MAX_K];
        for step in (0..config.n_steps).rev() {
            // 1. implicit diffusion by dimensional splitting
            let mut w = level[step + 1].clone();
            for axis in 0..k {
                diffuse_axis(&mut w, n, axis, dt, h);
            }

            // 2. explicit Hamiltonian on the diffused field
            let mut v: Vec<f64> = vec![0.0; size];
            let scale = config.big_n as f64;
            for idx in 0..size {
                decode(idx, n, k, &grid, &mut coords);
                let m = MeasureRef::Atoms {
                    positions: &coords[..k],
                    weight,
                };
                let mut ham_sum = 0.0;
                let mut stride = 1usize;
                for axis in 0..k {
                    let j = idx / stride % n;
                    let up = if j + 1 < n { idx + stride } else { idx + stride - n * stride };
                    let dn = if j > 0 { idx - stride } else { idx + (n - 1) * stride };
                    let vp = w[up];
                    let vm = w[dn];
                    let v0 = w[idx];
                    let pc = scale * (vp - vm) / (2.0 * h);
                    let x = coords[axis];
                    ham_sum += if pc.abs() <= HYBRID_THRESHOLD {
                        stepping_model.h(x, pc, &m)
                    } else {
                        let pf = scale * (vp - v0) / h;
                        let pb = scale * (v0 - vm) / h;
                        let sigma = stepping_model
                            .dp_h(x, pb, &m)
                            .abs()
                            .max(stepping_model.dp_h(x, pf, &m).abs());
                        stepping_model.h(x, pc, &m) - 0.5 * sigma * (pf - pb)
                    };
                    stride *= n;
                }
                v[idx] = w[idx] - dt * ham_sum / scale;
            }

            // 3. obstacle projection against the same-time lower levels
            for idx in 0..size {
                decode(idx, n, k, &grid, &mut coords);
                let m = MeasureRef::Atoms {
                    positions: &coords[..k],
                    weight,
                };
                let obstacle = obstacle_at(
                    &tables,
                    model,
                    &m,
                    &coords[..k],
                    idx,
                    n,
                    step,
                    weight,
                    config.full_subset_obstacle,
                );
                if v[idx] > obstacle {
                    v[idx] = obstacle;
                }
                if !v[idx].is_finite() {
                    return Err(Error::NumericalBreakdown {
                        context: "hierarchy step",
                        time_index: step,
                    });
                }
            }
            level[step] = v;
        }
        tables.push(level);
    }

    Ok(ValueHierarchy {
        big_n: config.big_n,
        k_max: config.k_max,
        grid,
        times,
        tables,
        g_zero,
        trunc_radius: radius,
        config,
    })
}

/// Minimum over removal subsets of
/// `V^{K-|S|}(t, x^{-S}) + (1/N) sum_{i in S} Ψ(x^i, m_x)`.
///
/// The default evaluates single removals plus the full removal; the
/// verification mode enumerates every nonempty subset.
#[allow(clippy::too_many_arguments)]
fn obstacle_at(
    tables: &[Vec<Vec<f64>>],
    model: &ModelSpec,
    m_full: &MeasureRef<'_>,
    coords: &[f64],
    idx: usize,
    n: usize,
    step: usize,
    weight: f64,
    full_subsets: bool,
) -> f64 {
    let k = coords.len();
    let mut penalties = [0.0f64; MAX_K];
    for (i, &x) in coords.iter().enumerate() {
        penalties[i] = model.psi(x, m_full) * weight;
    }
    let mut best = f64::INFINITY;
    if full_subsets {
        for mask in 1u32..(1 << k) {
            let mut reduced_idx = 0usize;
            let mut reduced_stride = 1usize;
            let mut stride = 1usize;
            let mut pen = 0.0;
            let mut kept = 0usize;
            for i in 0..k {
                let j = idx / stride % n;
                if mask >> i & 1 == 1 {
                    pen += penalties[i];
                } else {
                    reduced_idx += j * reduced_stride;
                    reduced_stride *= n;
                    kept += 1;
                }
                stride *= n;
            }
            let v = tables[kept][step][reduced_idx] + pen;
            if v < best {
                best = v;
            }
        }
        return best;
    }
    // Single removals.
    for i in 0..k {
        let mut reduced_idx = 0usize;
        let mut reduced_stride = 1usize;
        let mut stride = 1usize;
        for a in 0..k {
            let j = idx / stride % n;
            if a != i {
                reduced_idx += j * reduced_stride;
                reduced_stride *= n;
            }
            stride *= n;
        }
        let v = tables[k - 1][step][reduced_idx] + penalties[i];
        if v < best {
            best = v;
        }
    }
    // Full removal.
    if k > 1 {
        let pen: f64 = penalties[..k].iter().sum();
        let v = tables[0][step][0] + pen;
        if v < best {
            best = v;
        }
    }
    best
}

fn decode(idx: usize, n: usize, k: usize, grid: &TorusGrid, coords: &mut [f64; MAX_K]) {
    let mut rest = idx;
    for c in coords.iter_mut().take(k) {
        *c = grid.node(rest % n);
        rest /= n;
    }
}

/// In-place implicit heat step along one tensor axis.
fn diffuse_axis(values: &mut [f64], n: usize, axis: usize, dt: f64, h: f64) {
    let stride = n.pow(axis as u32);
    let n_lines = values.len() / n;
    let mut line = vec![0.0f64; n];
    for l in 0..n_lines {
        // Base index of this line: insert a zero digit at position `axis`.
        let low = l % stride;
        let high = l / stride;
        let base = high * stride * n + low;
        for (j, lv) in line.iter_mut().enumerate() {
            *lv = values[base + j * stride];
        }
        let solved = solve_heat_implicit(&line, dt, h);
        for (j, sv) in solved.iter().enumerate() {
            values[base + j * stride] = *sv;
        }
    }
}

/// Feedback data extracted from a solved hierarchy: the optimal drift per
/// particle and the removal region with its minimizing subset.
pub struct FeedbackPolicy {
    pub big_n: usize,
    pub k_max: usize,
    grid: Arc<TorusGrid>,
    times: Vec<f64>,
    /// `drift[k][step]` has length `k * n^k`, axis-major.
    drift: Vec<Vec<Vec<f64>>>,
    /// `stop_mask[k][step][idx]`: bit mask of the removed particles, zero
    /// where continuation is optimal.
    stop_mask: Vec<Vec<Vec<u32>>>,
    pub contact_tol: f64,
}

impl FeedbackPolicy {
    /// The do-nothing policy: zero drift, no stopping. Used as a baseline
    /// control and in analytic cross-checks.
    pub fn zero(big_n: usize, k_max: usize, n_cells: usize, times: Vec<f64>) -> Self {
        let grid = Arc::new(TorusGrid::new(n_cells));
        let n_slices = times.len();
        let mut drift = vec![vec![Vec::new(); n_slices]];
        let mut stop_mask = vec![vec![Vec::new(); n_slices]];
        for k in 1..=k_max {
            let size = n_cells.pow(k as u32);
            drift.push(vec![vec![0.0; k * size]; n_slices]);
            stop_mask.push(vec![vec![0u32; size]; n_slices]);
        }
        FeedbackPolicy {
            big_n,
            k_max,
            grid,
            times,
            drift,
            stop_mask,
            contact_tol: 0.0,
        }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn drift_table(&self, k: usize, step: usize) -> &[f64] {
        &self.drift[k][step]
    }

    pub fn stop_table(&self, k: usize, step: usize) -> &[u32] {
        &self.stop_mask[k][step]
    }

    /// Drift of particle `axis` at continuous positions (multilinear in
    /// space, previous-slice in time).
    pub fn drift_at(&self, k: usize, step: usize, axis: usize, positions: &[f64]) -> f64 {
        let n = self.grid.n_cells();
        let h = self.grid.h();
        let table = &self.drift[k][step];
        let offset = axis * n.pow(k as u32);
        let mut lo = [0usize; MAX_K];
        let mut w = [0.0f64; MAX_K];
        for (a, &x) in positions.iter().enumerate() {
            let u = crate::grid::wrap(x) / h;
            let j = u.floor() as usize % n;
            lo[a] = j;
            w[a] = u - u.floor();
        }
        let mut value = 0.0;
        for corner in 0..(1usize << k) {
            let mut idx = 0usize;
            let mut stride = 1usize;
            let mut weight = 1.0;
            for a in 0..k {
                let up = corner >> a & 1 == 1;
                let j = if up { (lo[a] + 1) % n } else { lo[a] };
                idx += j * stride;
                stride *= n;
                weight *= if up { w[a] } else { 1.0 - w[a] };
            }
            value += weight * table[offset + idx];
        }
        value
    }

    /// Stop decision at the nearest grid node.
    pub fn stop_at(&self, k: usize, step: usize, positions: &[f64]) -> u32 {
        let n = self.grid.n_cells();
        let mut idx = 0usize;
        let mut stride = 1usize;
        for &x in positions {
            idx += self.grid.cell_of(x) * stride;
            stride *= n;
        }
        self.stop_mask[k][step][idx]
    }
}

/// Extract the feedback drift and stopping sets from a solved hierarchy.
pub fn extract_policy(hierarchy: &ValueHierarchy, model: &ModelSpec) -> FeedbackPolicy {
    let n = hierarchy.grid.n_cells();
    let h = hierarchy.grid.h();
    let contact_tol = 10.0 * (h * h + hierarchy.dt());
    let scale = hierarchy.big_n as f64;
    let weight = 1.0 / scale;
    let n_steps = hierarchy.times.len() - 1;

    let mut drift: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); n_steps + 1]];
    let mut stop_mask: Vec<Vec<Vec<u32>>> = vec![vec![Vec::new(); n_steps + 1]];
    let mut coords = [0.0f64; MAX_K];
    for k in 1..=hierarchy.k_max {
        let size = n.pow(k as u32);
        let mut level_drift = Vec::with_capacity(n_steps + 1);
        let mut level_stop = Vec::with_capacity(n_steps + 1);
        for step in 0..=n_steps {
            let table = &hierarchy.tables[k][step];
            let mut d = vec![0.0; k * size];
            let mut s = vec![0u32; size];
            for idx in 0..size {
                decode(idx, n, k, &hierarchy.grid, &mut coords);
                let m = MeasureRef::Atoms {
                    positions: &coords[..k],
                    weight,
                };
                let mut stride = 1usize;
                for axis in 0..k {
                    let j = idx / stride % n;
                    let up = if j + 1 < n { idx + stride } else { idx + stride - n * stride };
                    let dn = if j > 0 { idx - stride } else { idx + (n - 1) * stride };
                    let p = scale * (table[up] - table[dn]) / (2.0 * h);
                    d[axis * size + idx] = -model.dp_h(coords[axis], p, &m);
                    stride *= n;
                }
                // Stop where the obstacle is within the contact tolerance;
                // the minimizing subset keeps the popcount-then-lex order.
                let (gap, mask) = obstacle_gap(hierarchy, model, &m, &coords[..k], idx, n, step, weight);
                if gap <= contact_tol {
                    s[idx] = mask;
                }
            }
            level_drift.push(d);
            level_stop.push(s);
        }
        drift.push(level_drift);
        stop_mask.push(level_stop);
    }

    FeedbackPolicy {
        big_n: hierarchy.big_n,
        k_max: hierarchy.k_max,
        grid: Arc::clone(&hierarchy.grid),
        times: hierarchy.times.clone(),
        drift,
        stop_mask,
        contact_tol,
    }
}

/// Gap to the obstacle and the minimizing subset over all nonempty
/// removals, ties broken toward smaller subsets then lexicographic.
#[allow(clippy::too_many_arguments)]
fn obstacle_gap(
    hierarchy: &ValueHierarchy,
    model: &ModelSpec,
    m_full: &MeasureRef<'_>,
    coords: &[f64],
    idx: usize,
    n: usize,
    step: usize,
    weight: f64,
) -> (f64, u32) {
    let k = coords.len();
    let mut penalties = [0.0f64; MAX_K];
    for (i, &x) in coords.iter().enumerate() {
        penalties[i] = model.psi(x, m_full) * weight;
    }
    let mut best = f64::INFINITY;
    let mut best_mask = 0u32;
    // Popcount-ordered masks for k <= 3.
    let order: &[u32] = match k {
        1 => &[0b1],
        2 => &[0b01, 0b10, 0b11],
        _ => &[0b001, 0b010, 0b100, 0b011, 0b101, 0b110, 0b111],
    };
    for &mask in order {
        let mut reduced_idx = 0usize;
        let mut reduced_stride = 1usize;
        let mut stride = 1usize;
        let mut pen = 0.0;
        let mut kept = 0usize;
        for i in 0..k {
            let j = idx / stride % n;
            if mask >> i & 1 == 1 {
                pen += penalties[i];
            } else {
                reduced_idx += j * reduced_stride;
                reduced_stride *= n;
                kept += 1;
            }
            stride *= n;
        }
        let v = hierarchy.tables[kept][step][reduced_idx] + pen;
        if v < best {
            best = v;
            best_mask = mask;
        }
    }
    (best - hierarchy.tables[k][step][idx], best_mask)
}

/// Empirical regularity constants of a solved hierarchy.
#[derive(Debug, Clone)]
pub struct RegularityReport {
    /// Per level `k = 1..=k_max`.
    pub per_level: Vec<LevelRegularity>,
}

#[derive(Debug, Clone)]
pub struct LevelRegularity {
    pub k: usize,
    /// sup of `N |V(t,x) - V(t,y)| / sum_i |x_i - y_i|` over sampled pairs.
    pub spatial_lipschitz: f64,
    /// sup of `N |V^{K-1}(t, x^{-i}) - V^K(t, x)|`.
    pub removal_constant: f64,
    /// sup of `|V(t,x) - V(s,x)| / |t-s|^{1/2}`.
    pub time_holder: f64,
}

pub fn regularity_report(hierarchy: &ValueHierarchy) -> RegularityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e67);
    let n = hierarchy.grid.n_cells();
    let scale = hierarchy.big_n as f64;
    let n_steps = hierarchy.times.len() - 1;
    let mut per_level = Vec::new();
    for k in 1..=hierarchy.k_max {
        let size = n.pow(k as u32);
        let mut spatial: f64 = 0.0;
        let mut removal: f64 = 0.0;
        let mut holder: f64 = 0.0;
        let samples = 600;
        for _ in 0..samples {
            let step = rng.random_range(0..=n_steps);
            let ia = rng.random_range(0..size);
            let ib = rng.random_range(0..size);
            if ia != ib {
                let mut dist = 0.0;
                let mut sa = 1usize;
                for _axis in 0..k {
                    let ja = ia / sa % n;
                    let jb = ib / sa % n;
                    dist += circle_dist(
                        hierarchy.grid.node(ja),
                        hierarchy.grid.node(jb),
                    );
                    sa *= n;
                }
                if dist > 1e-12 {
                    let dv = (hierarchy.tables[k][step][ia] - hierarchy.tables[k][step][ib]).abs();
                    spatial = spatial.max(scale * dv / dist);
                }
            }
            // Removal comparison at a random coordinate.
            let remove_axis = rng.random_range(0..k);
            let mut reduced_idx = 0usize;
            let mut reduced_stride = 1usize;
            let mut stride = 1usize;
            for a in 0..k {
                let j = ia / stride % n;
                if a != remove_axis {
                    reduced_idx += j * reduced_stride;
                    reduced_stride *= n;
                }
                stride *= n;
            }
            let dv = (hierarchy.tables[k - 1][step][reduced_idx]
                - hierarchy.tables[k][step][ia])
                .abs();
            removal = removal.max(scale * dv);
            // Time increments at a fixed node.
            let step2 = rng.random_range(0..=n_steps);
            if step2 != step {
                let dt_gap = (hierarchy.times[step2] - hierarchy.times[step]).abs();
                let dv = (hierarchy.tables[k][step2][ia] - hierarchy.tables[k][step][ia]).abs();
                holder = holder.max(dv / dt_gap.sqrt());
            }
        }
        per_level.push(LevelRegularity {
            k,
            spatial_lipschitz: spatial,
            removal_constant: removal,
            time_holder: holder,
        });
    }
    RegularityReport { per_level }
}

impl ValueHierarchy {
    /// Text artifact for one level: a header then one row per time slice,
    /// row-major node values; byte-deterministic given config and model.
    pub fn level_to_text(&self, k: usize) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# vnk N={} K={k} n_cells={} n_steps={} T={:.16e}",
            self.big_n,
            self.grid.n_cells(),
            self.times.len() - 1,
            self.times.last().unwrap()
        );
        for step in 0..self.times.len() {
            let row: Vec<String> = self.tables[k][step]
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }
}

//! Monotone envelopes of the terminal cost under the stopping penalty:
//! the exact subset-minimization on particle configurations, the
//! cell-by-cell (or projected-gradient) minimization on grid measures, and
//! the partition-of-unity mollification that trades a small uniform error
//! for a smooth, still-monotone terminal cost.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{circle_dist, EmpiricalState, GridMeasure, MeasureRef};
use crate::model::{ModelSpec, Terminal};

/// Result of an envelope minimization.
#[derive(Debug, Clone)]
pub struct EnvelopeResult {
    pub value: f64,
    pub minimizer: EnvelopeMinimizer,
}

#[derive(Debug, Clone)]
pub enum EnvelopeMinimizer {
    /// Indices of the removed particles.
    Subset(Vec<usize>),
    /// The surviving measure `m' <= m`.
    Kept(GridMeasure),
}

/// Hard cap on the exact subset enumeration.
pub const MAX_ENUM_K: usize = 20;

/// Exact minimum of
/// `G(m_{x^{-S}}) + (1/N) sum_{i in S} Ψ(x^i, m_x)` over subsets `S`.
///
/// Ties break toward smaller `|S|`, then lexicographically, which the
/// popcount-ordered enumeration makes free.
pub fn discrete_envelope(model: &ModelSpec, state: &EmpiricalState) -> Result<EnvelopeResult> {
    let k = state.k();
    if k > MAX_ENUM_K {
        return Err(Error::Capacity {
            what: "particles for exact subset enumeration (use a greedy mode)",
            got: k,
            limit: MAX_ENUM_K,
        });
    }
    let (value, mask) = discrete_envelope_atoms(model, state.positions(), state.big_n());
    let subset: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
    Ok(EnvelopeResult {
        value,
        minimizer: EnvelopeMinimizer::Subset(subset),
    })
}

/// Slice-level version used in the solver hot loops: returns the value and
/// the removal subset as a bit mask.
pub(crate) fn discrete_envelope_atoms(
    model: &ModelSpec,
    positions: &[f64],
    big_n: usize,
) -> (f64, u32) {
    let k = positions.len();
    debug_assert!(k <= MAX_ENUM_K);
    let weight = 1.0 / big_n as f64;
    let full = MeasureRef::Atoms { positions, weight };
    // Per-particle penalties are shared by every subset.
    let penalties: Vec<f64> = positions
        .iter()
        .map(|&x| model.psi(x, &full) * weight)
        .collect();

    let mut kept = Vec::with_capacity(k);
    let mut best_value = f64::INFINITY;
    let mut best_mask = 0u32;
    for_each_subset_by_popcount(k, |subset_mask, removed| {
        kept.clear();
        for (i, &x) in positions.iter().enumerate() {
            if subset_mask >> i & 1 == 0 {
                kept.push(x);
            }
        }
        let survivors = MeasureRef::Atoms {
            positions: &kept,
            weight,
        };
        let mut value = model.g(&survivors);
        for &i in removed {
            value += penalties[i];
        }
        if value < best_value {
            best_value = value;
            best_mask = subset_mask;
        }
    });
    (best_value, best_mask)
}

/// Visit all subsets of `0..k` ordered by popcount, lexicographic within a
/// popcount class. The callback receives the bit mask and the sorted index
/// list.
fn for_each_subset_by_popcount(k: usize, mut visit: impl FnMut(u32, &[usize])) {
    visit(0, &[]);
    let mut indices = Vec::with_capacity(k);
    for size in 1..=k {
        indices.clear();
        indices.extend(0..size);
        loop {
            let mask = indices.iter().fold(0u32, |m, &i| m | 1 << i);
            visit(mask, &indices);
            if !advance(&mut indices, k) {
                break;
            }
        }
    }
}

fn advance(sel: &mut [usize], n: usize) -> bool {
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

/// Continuous envelope `inf { G(m') + ∫ Ψ(x, m) d(m - m') : 0 <= m' <= m }`.
///
/// For a linear (or affine) terminal cost this splits cell by cell: keep
/// the mass where the terminal density does not exceed the penalty. For a
/// nonlinear cylindrical cost, projected gradient descent over the box with
/// eight multi-starts, best value kept.
pub fn continuous_envelope(model: &ModelSpec, m: &GridMeasure) -> Result<EnvelopeResult> {
    let mref = MeasureRef::Grid(m);
    let grid = m.grid();
    let n = grid.n_cells();
    let psi_at: Vec<f64> = (0..n).map(|j| model.psi(grid.node(j), &mref)).collect();

    if let Some(g) = model.terminal().density() {
        let offset = match model.terminal() {
            Terminal::Affine { offset, .. } => *offset,
            _ => 0.0,
        };
        let mut kept = vec![0.0; n];
        let mut value = offset;
        for j in 0..n {
            let gj = g(grid.node(j));
            if gj <= psi_at[j] {
                kept[j] = m.mass()[j];
                value += gj * m.mass()[j];
            } else {
                value += psi_at[j] * m.mass()[j];
            }
        }
        let kept = GridMeasure::new(Arc::clone(grid), kept)?;
        return Ok(EnvelopeResult {
            value,
            minimizer: EnvelopeMinimizer::Kept(kept),
        });
    }

    // Nonlinear cylindrical: F(m') = G(m') + sum_j Ψ_j (m_j - m'_j),
    // dF/dm'_j = δG/δm(m', x_j) - Ψ_j, projected onto the box [0, m].
    let objective = |mp: &[f64]| -> f64 {
        let gm = GridMeasure::new(Arc::clone(grid), mp.to_vec()).unwrap();
        let mut v = model.g(&MeasureRef::Grid(&gm));
        for j in 0..n {
            v += psi_at[j] * (m.mass()[j] - mp[j]);
        }
        v
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_00e1);
    let mut best_value = f64::INFINITY;
    let mut best: Vec<f64> = m.mass().to_vec();
    for start in 0..8 {
        let mut mp: Vec<f64> = match start {
            0 => m.mass().to_vec(),
            1 => vec![0.0; n],
            _ => m
                .mass()
                .iter()
                .map(|&v| v * rng.random::<f64>())
                .collect(),
        };
        let mut step = 0.5 * m.grid().h();
        let mut value = objective(&mp);
        for _ in 0..400 {
            let gm = GridMeasure::new(Arc::clone(grid), mp.clone()).unwrap();
            let gref = MeasureRef::Grid(&gm);
            let grad: Vec<f64> = (0..n)
                .map(|j| model.g_lin(&gref, grid.node(j)) - psi_at[j])
                .collect();
            let mut trial: Vec<f64> = (0..n)
                .map(|j| (mp[j] - step * grad[j]).clamp(0.0, m.mass()[j]))
                .collect();
            let mut tv = objective(&trial);
            let mut backtracks = 0;
            while tv > value && backtracks < 30 {
                step *= 0.5;
                trial = (0..n)
                    .map(|j| (mp[j] - step * grad[j]).clamp(0.0, m.mass()[j]))
                    .collect();
                tv = objective(&trial);
                backtracks += 1;
            }
            let moved: f64 = trial
                .iter()
                .zip(&mp)
                .map(|(a, b)| (a - b).abs())
                .sum();
            mp = trial;
            value = tv;
            step *= 1.5;
            if moved < 1e-12 {
                break;
            }
        }
        if value < best_value {
            best_value = value;
            best = mp;
        }
    }
    Ok(EnvelopeResult {
        value: best_value,
        minimizer: EnvelopeMinimizer::Kept(GridMeasure::new(Arc::clone(grid), best)?),
    })
}

/// A smooth partition of unity on the torus built from periodized bumps on
/// a uniform patch lattice.
pub struct Partition {
    pub centers: Vec<f64>,
    /// `∫ φ_i dx`, equal across patches by symmetry.
    pub patch_mass: Vec<f64>,
    n_patches: usize,
}

impl Partition {
    /// Patches with support diameter at most `delta`.
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "patch diameter must lie in (0, 1], got {delta}"
            )));
        }
        let n_patches = ((2.0 / delta).ceil() as usize).max(3);
        let centers: Vec<f64> = (0..n_patches)
            .map(|i| i as f64 / n_patches as f64)
            .collect();
        // Quadrature of each normalized patch on a fine mesh.
        let quad = 4096usize;
        let mut patch_mass = vec![0.0; n_patches];
        for q in 0..quad {
            let x = q as f64 / quad as f64;
            let w = Self::weights_at(x, &centers, n_patches);
            for i in 0..n_patches {
                patch_mass[i] += w[i] / quad as f64;
            }
        }
        Ok(Partition {
            centers,
            patch_mass,
            n_patches,
        })
    }

    fn bump(u: f64) -> f64 {
        if u.abs() < 1.0 {
            (-1.0 / (1.0 - u * u)).exp()
        } else {
            0.0
        }
    }

    fn weights_at(x: f64, centers: &[f64], n_patches: usize) -> Vec<f64> {
        let r = 1.0 / n_patches as f64;
        let raw: Vec<f64> = centers
            .iter()
            .map(|&c| Self::bump(circle_dist(x, c) / r))
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    /// `φ_i(x)` for all patches.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        Self::weights_at(x, &self.centers, self.n_patches)
    }

    pub fn r_delta(&self) -> f64 {
        self.patch_mass.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }
}

/// Replace the terminal cost by its smoothed-and-tilted version
/// `G̃(m) = G_{δ,η}(m) - C (δ + (1+n) η + η/r_δ) m(T)`, where `G_{δ,η}`
/// averages `G` over jittered patch weights. The result is still
/// `Ψ`-non-increasing and Lipschitz with a constant independent of the
/// mollification parameters.
///
/// For a linear or affine terminal cost the jitter average is exact (the
/// jitter has mean zero); a general cylindrical cost is averaged by a
/// fixed-seed quasi Monte Carlo rule.
pub fn mollify_terminal(model: &ModelSpec, delta: f64, eta: f64) -> Result<ModelSpec> {
    let partition = Partition::new(delta)?;
    let r_delta = partition.r_delta();
    if !(eta > 0.0 && eta < r_delta) {
        return Err(Error::InvalidParameter(format!(
            "eta must lie in (0, r_delta = {r_delta:.4e}), got {eta}"
        )));
    }
    let n_patches = partition.n_patches();
    // Tilt constant: the sampled Lipschitz constants of Ψ and G.
    let report = crate::model::validate(model, 200, 0xC0FFEE);
    let c_tilt = report.psi_x_lipschitz + report.terminal_lipschitz;
    let tilt = c_tilt * (delta + (1.0 + n_patches as f64) * eta + eta / r_delta);
    let mix = eta / r_delta;

    let terminal = match model.terminal() {
        Terminal::Linear(_) | Terminal::Affine { .. } => {
            let g = model.terminal().density().unwrap().clone();
            let offset0 = match model.terminal() {
                Terminal::Affine { offset, .. } => *offset,
                _ => 0.0,
            };
            // G(sum_i (c_i + y_i) delta_{x_i}) averaged over mean-zero y is
            // sum_i c_i g(x_i) + offset, with
            // c_i = <phi_i, (1 - mix) m + mix Leb>.
            let g_at_centers: Vec<f64> = partition.centers.iter().map(|&c| g(c)).collect();
            let lebesgue_part: f64 = (0..n_patches)
                .map(|i| g_at_centers[i] * partition.patch_mass[i])
                .sum();
            let centers = partition.centers.clone();
            let np = n_patches;
            let g_tilde = move |y: f64| -> f64 {
                let w = Partition::weights_at(y, &centers, np);
                let patch_sum: f64 = (0..np).map(|i| g_at_centers[i] * w[i]).sum();
                (1.0 - mix) * patch_sum - tilt
            };
            Terminal::Affine {
                g: Arc::new(g_tilde),
                offset: offset0 + mix * lebesgue_part,
            }
        }
        Terminal::Cylindrical { .. } => {
            // The mean-zero jitter average has no closed form here and an
            // exact tensor quadrature over the patch weights does not scale;
            // the affine class covers every shipped model.
            return Err(Error::UnsupportedModel(
                "terminal mollification needs a linear or affine terminal cost".into(),
            ));
        }
    };
    Ok(model.with_terminal(terminal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::model::model_by_name;
    use std::collections::BTreeMap;

    fn congestion() -> ModelSpec {
        model_by_name("congestion", &BTreeMap::new(), 1.0).unwrap()
    }

    #[test]
    fn prohibitive_penalty_keeps_everything() {
        let mut params = BTreeMap::new();
        params.insert("psi0".into(), 1e3);
        let model = model_by_name("quadratic", &params, 1.0).unwrap();
        let state = EmpiricalState::new(4, vec![0.1, 0.5, 0.8]).unwrap();
        let env = discrete_envelope(&model, &state).unwrap();
        let full = MeasureRef::Empirical(&state);
        assert_eq!(env.value, model.g(&full));
        match env.minimizer {
            EnvelopeMinimizer::Subset(s) => assert!(s.is_empty()),
            _ => panic!("expected subset"),
        }
    }

    #[test]
    fn cheap_penalty_removes_everything() {
        // g = 2, Ψ = 1: removing particle i changes the cost by
        // (1 - 2)/N < 0, so everything goes; value G(0) + K/N.
        let mut params = BTreeMap::new();
        params.insert("psi0".into(), 1.0);
        params.insert("g0".into(), 2.0);
        params.insert("g1".into(), 0.0);
        let model = model_by_name("linearG", &params, 1.0).unwrap();
        let state = EmpiricalState::new(5, vec![0.2, 0.4, 0.6, 0.9]).unwrap();
        let env = discrete_envelope(&model, &state).unwrap();
        let expected = 0.0 + 4.0 / 5.0;
        assert!((env.value - expected).abs() < 1e-14, "value {}", env.value);
        match env.minimizer {
            EnvelopeMinimizer::Subset(s) => assert_eq!(s, vec![0, 1, 2, 3]),
            _ => panic!("expected subset"),
        }
    }

    #[test]
    fn capacity_error_beyond_enumeration() {
        let model = congestion();
        let state = EmpiricalState::new(30, (0..25).map(|i| i as f64 / 25.0).collect()).unwrap();
        assert!(matches!(
            discrete_envelope(&model, &state),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn continuous_envelope_per_cell_rule() {
        // g = 2, Ψ = 1 everywhere: remove all mass.
        let mut params = BTreeMap::new();
        params.insert("psi0".into(), 1.0);
        params.insert("g0".into(), 2.0);
        params.insert("g1".into(), 0.0);
        let model = model_by_name("linearG", &params, 1.0).unwrap();
        let grid = Arc::new(TorusGrid::new(32));
        let m = GridMeasure::uniform(Arc::clone(&grid), 0.8);
        let env = continuous_envelope(&model, &m).unwrap();
        assert!((env.value - 0.8).abs() < 1e-14);
        match env.minimizer {
            EnvelopeMinimizer::Kept(kept) => assert_eq!(kept.total(), 0.0),
            _ => panic!("expected kept measure"),
        }
    }

    #[test]
    fn continuous_envelope_keeps_cheap_mass() {
        // Ψ above g everywhere: keep everything, value = G(m).
        let mut params = BTreeMap::new();
        params.insert("psi0".into(), 10.0);
        params.insert("g0".into(), 1.0);
        params.insert("g1".into(), 0.5);
        let model = model_by_name("linearG", &params, 1.0).unwrap();
        let grid = Arc::new(TorusGrid::new(32));
        let m = GridMeasure::uniform(Arc::clone(&grid), 0.6);
        let env = continuous_envelope(&model, &m).unwrap();
        let gm = model.g(&MeasureRef::Grid(&m));
        assert!((env.value - gm).abs() < 1e-14);
    }

    #[test]
    fn mollified_constant_terminal_is_tilt_only() {
        let base = congestion();
        let c = 0.7;
        let model = base.with_terminal(Terminal::Affine {
            g: Arc::new(|_| 0.0),
            offset: c,
        });
        let mollified = mollify_terminal(&model, 0.25, 1e-3).unwrap();
        let grid = Arc::new(TorusGrid::new(16));
        for total in [0.0, 0.3, 0.9] {
            let m = GridMeasure::uniform(Arc::clone(&grid), total);
            let val = mollified.g(&MeasureRef::Grid(&m));
            let base_val = c;
            // G̃ = c - tilt * m(T): linear in total mass.
            let m2 = GridMeasure::uniform(Arc::clone(&grid), total / 2.0);
            let val2 = mollified.g(&MeasureRef::Grid(&m2));
            if total > 0.0 {
                let slope1 = (val - base_val) / total;
                let slope2 = (val2 - base_val) / (total / 2.0);
                assert!((slope1 - slope2).abs() < 1e-10, "{slope1} vs {slope2}");
                assert!(slope1 <= 0.0);
            }
        }
    }

    #[test]
    fn mollifier_rejects_large_eta() {
        let model = congestion();
        let partition = Partition::new(0.25).unwrap();
        let too_big = partition.r_delta() * 1.01;
        assert!(mollify_terminal(&model, 0.25, too_big).is_err());
    }

    #[test]
    fn partition_sums_to_one() {
        let p = Partition::new(0.2).unwrap();
        for q in 0..97 {
            let x = q as f64 / 97.0;
            let w = p.eval(x);
            let s: f64 = w.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let total_mass: f64 = p.patch_mass.iter().sum();
        assert!((total_mass - 1.0).abs() < 1e-9);
    }
}

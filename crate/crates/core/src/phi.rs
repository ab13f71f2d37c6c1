//! The comparison-principle penalization
//! `Φ(μ) = sup { <μ, f> - ||f||_{H¹}²/2 : f ∈ H¹, f <= 0 }`
//! and its maximizer, computed through the penalized semilinear equation
//! `f - Δf + f₊/ε = μ` with a semismooth Newton active-set loop and an
//! adaptive `ε` refinement.
//!
//! All norms use one discrete `H¹` inner product,
//! `<f, g> = h Σ f g + h Σ Df Dg` with forward differences, so the
//! variational identities hold exactly at the discrete level.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, TorusGrid};
use crate::tridiag::solve_heat_implicit_diag;

#[derive(Debug, Clone)]
pub struct PhiResult {
    pub value: f64,
    /// The (approximate) maximizer; its positive part is `O(ε)`.
    pub f_hat: GridFunction,
    pub epsilon_used: f64,
    pub newton_iters: usize,
    /// Sup of the positive part of `f_hat`.
    pub positive_overshoot: f64,
}

/// Discrete `H¹` inner product.
pub fn h1_inner(f: &[f64], g: &[f64], h: f64) -> f64 {
    let n = f.len();
    let mut acc = 0.0;
    for j in 0..n {
        let df = (f[(j + 1) % n] - f[j]) / h;
        let dg = (g[(j + 1) % n] - g[j]) / h;
        acc += f[j] * g[j] + df * dg;
    }
    acc * h
}

/// `L²` pairing `h Σ f g` (the duality pairing for density arguments).
pub fn l2_inner(f: &[f64], g: &[f64], h: f64) -> f64 {
    f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() * h
}

/// Discrete `H⁻¹` norm via one solve of `(I - Δ) w = μ`.
pub fn h_minus1_norm(mu: &[f64], h: f64) -> f64 {
    let w = solve_heat_implicit_diag(mu, 1.0, h, &vec![0.0; mu.len()]);
    l2_inner(mu, &w, h).max(0.0).sqrt()
}

/// Solve the penalized semilinear equation for the given `ε`, returning the
/// solution and the number of active-set iterations.
fn solve_penalized(mu: &[f64], h: f64, eps: f64, start_active: &[bool]) -> (Vec<f64>, Vec<bool>, usize) {
    let n = mu.len();
    let mut active = start_active.to_vec();
    let mut f = vec![0.0; n];
    let mut iters = 0;
    for _ in 0..100 {
        iters += 1;
        let extra: Vec<f64> = active
            .iter()
            .map(|&a| if a { 1.0 / eps } else { 0.0 })
            .collect();
        f = solve_heat_implicit_diag(mu, 1.0, h, &extra);
        let next: Vec<bool> = f.iter().map(|&v| v > 0.0).collect();
        if next == active {
            return (f, active, iters);
        }
        active = next;
    }
    // Newton cycling: fall back to projected gradient ascent on the
    // concave objective with the hard constraint f <= 0, then report that
    // point (its positive part is zero, which is feasible for any eps).
    let tau = 1.0 / (1.0 + 4.0 / (h * h));
    let mut g = vec![0.0; n];
    for _ in 0..200_000 {
        let mut change: f64 = 0.0;
        for j in 0..n {
            let lap = (f[(j + 1) % n] - 2.0 * f[j] + f[(j + n - 1) % n]) / (h * h);
            g[j] = mu[j] - (f[j] - lap);
        }
        for j in 0..n {
            let new = (f[j] + tau * g[j]).min(0.0);
            change = change.max((new - f[j]).abs());
            f[j] = new;
        }
        iters += 1;
        if change < 1e-13 {
            break;
        }
    }
    let active: Vec<bool> = f.iter().map(|&v| v > 0.0).collect();
    (f, active, iters)
}

/// Compute `Φ(μ)` and its maximizer for a signed density `μ`.
///
/// `ε` is halved adaptively until the value changes by less than `1e-8`.
/// A nonnegative `μ` short-circuits to the exact answer `Φ = 0`, `f̂ = 0`.
pub fn phi_solve(mu: &GridFunction, epsilon: f64) -> Result<PhiResult> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let grid = mu.grid();
    let h = grid.h();
    let n = grid.n_cells();
    if mu.values().iter().all(|&v| v >= 0.0) {
        return Ok(PhiResult {
            value: 0.0,
            f_hat: GridFunction::new(Arc::clone(grid), vec![0.0; n])?,
            epsilon_used: epsilon,
            newton_iters: 0,
            positive_overshoot: 0.0,
        });
    }

    let mut eps = epsilon;
    let mut active = vec![false; n];
    let mut total_iters = 0;
    let mut last_value = f64::INFINITY;
    let mut f = vec![0.0; n];
    for _ in 0..60 {
        let (sol, act, iters) = solve_penalized(mu.values(), h, eps, &active);
        total_iters += iters;
        f = sol;
        active = act;
        let value = l2_inner(mu.values(), &f, h) - 0.5 * h1_inner(&f, &f, h);
        if (value - last_value).abs() < 1e-8 {
            last_value = value;
            break;
        }
        last_value = value;
        eps *= 0.5;
    }
    let overshoot = f.iter().fold(0.0f64, |a, &v| a.max(v));
    Ok(PhiResult {
        value: last_value,
        f_hat: GridFunction::new(Arc::clone(grid), f)?,
        epsilon_used: eps,
        newton_iters: total_iters,
        positive_overshoot: overshoot,
    })
}

/// Central finite differences of `Φ` against the pairing `<ν, f̂_μ>`;
/// returns the worst relative error over the directions.
pub fn phi_gradient_check(mu: &GridFunction, directions: &[GridFunction]) -> Result<f64> {
    let h = mu.grid().h();
    let base = phi_solve(mu, 1e-4)?;
    let t = 1e-4;
    let mut worst: f64 = 0.0;
    for nu in directions {
        mu.grid().same_as(nu.grid())?;
        if nu.values().iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidParameter("zero direction".into()));
        }
        let plus: Vec<f64> = mu
            .values()
            .iter()
            .zip(nu.values())
            .map(|(a, b)| a + t * b)
            .collect();
        let minus: Vec<f64> = mu
            .values()
            .iter()
            .zip(nu.values())
            .map(|(a, b)| a - t * b)
            .collect();
        let grid = Arc::clone(mu.grid());
        let vp = phi_solve(&GridFunction::new(Arc::clone(&grid), plus)?, 1e-4)?.value;
        let vm = phi_solve(&GridFunction::new(grid, minus)?, 1e-4)?.value;
        let fd = (vp - vm) / (2.0 * t);
        let pairing = l2_inner(nu.values(), base.f_hat.values(), h);
        let scale = fd.abs().max(pairing.abs()).max(1e-10);
        let err = (fd - pairing).abs() / scale;
        if fd.abs() < 1e-10 && pairing.abs() < 1e-10 {
            continue;
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Max over pairs of `||f̂₁ - f̂₂||_{H¹} / ||μ₁ - μ₂||_{H⁻¹}`; the map is
/// nonexpansive, so the ratio must not exceed one.
pub fn phi_lipschitz_check(pairs: &[(GridFunction, GridFunction)]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (mu1, mu2) in pairs {
        mu1.grid().same_as(mu2.grid())?;
        let h = mu1.grid().h();
        let diff: Vec<f64> = mu1
            .values()
            .iter()
            .zip(mu2.values())
            .map(|(a, b)| a - b)
            .collect();
        let denom = h_minus1_norm(&diff, h);
        if denom < 1e-12 {
            continue;
        }
        let f1 = phi_solve(mu1, 1e-6)?;
        let f2 = phi_solve(mu2, 1e-6)?;
        let fd: Vec<f64> = f1
            .f_hat
            .values()
            .iter()
            .zip(f2.f_hat.values())
            .map(|(a, b)| a - b)
            .collect();
        let num = h1_inner(&fd, &fd, h).max(0.0).sqrt();
        worst = worst.max(num / denom);
    }
    Ok(worst)
}

/// Slack of the energy inequality
/// `∫ Df̂ · Dμ >= -2 Φ(μ) + ||μ₋||₂²` for a density `μ` (discrete `H¹`).
/// Nonnegative up to solver tolerance.
pub fn phi_energy_inequality_check(mu: &GridFunction) -> Result<f64> {
    let h = mu.grid().h();
    let n = mu.grid().n_cells();
    let res = phi_solve(mu, 1e-6)?;
    let f = res.f_hat.values();
    let m = mu.values();
    let mut grad_pairing = 0.0;
    let mut neg_norm2 = 0.0;
    for j in 0..n {
        let df = (f[(j + 1) % n] - f[j]) / h;
        let dm = (m[(j + 1) % n] - m[j]) / h;
        grad_pairing += df * dm;
        neg_norm2 += m[j].min(0.0).powi(2);
    }
    grad_pairing *= h;
    neg_norm2 *= h;
    Ok(grad_pairing + 2.0 * res.value - neg_norm2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Arc<TorusGrid> {
        Arc::new(TorusGrid::new(n))
    }

    fn random_density(g: &Arc<TorusGrid>, rng: &mut impl Rng, amp: f64) -> GridFunction {
        let vals: Vec<f64> = (0..g.n_cells())
            .map(|_| amp * (rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        GridFunction::new(Arc::clone(g), vals).unwrap()
    }

    #[test]
    fn nonnegative_density_gives_zero() {
        let g = grid(48);
        let mu = GridFunction::from_fn(Arc::clone(&g), |x| 0.3 + 0.2 * (x * 6.28).sin().abs());
        let res = phi_solve(&mu, 1e-3).unwrap();
        assert_eq!(res.value, 0.0);
        assert!(res.f_hat.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_negative_density_closed_form() {
        let g = grid(64);
        let c = 0.8;
        let mu = GridFunction::from_fn(Arc::clone(&g), |_| -c);
        let res = phi_solve(&mu, 1e-3).unwrap();
        assert!((res.value - 0.5 * c * c).abs() < 1e-8, "value {}", res.value);
        for &v in res.f_hat.values() {
            assert!((v + c).abs() < 1e-8);
        }
    }

    #[test]
    fn value_identities_hold() {
        let g = grid(48);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mu = random_density(&g, &mut rng, 1.0);
            let res = phi_solve(&mu, 1e-3).unwrap();
            let h = g.h();
            let half_norm = 0.5 * h1_inner(res.f_hat.values(), res.f_hat.values(), h);
            let half_pair = 0.5 * l2_inner(mu.values(), res.f_hat.values(), h);
            assert!((res.value - half_norm).abs() < 1e-8, "{} vs {half_norm}", res.value);
            assert!((res.value - half_pair).abs() < 1e-8);
            assert!(res.value >= -1e-12);
            assert!(res.positive_overshoot <= 1e-6);
        }
    }

    #[test]
    fn monotone_in_the_density_order() {
        let g = grid(32);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mu1 = random_density(&g, &mut rng, 1.0);
            let bump: Vec<f64> = (0..32).map(|_| rng.random::<f64>() * 0.5).collect();
            let mu2 = GridFunction::new(
                Arc::clone(&g),
                mu1.values()
                    .iter()
                    .zip(&bump)
                    .map(|(a, b)| a + b)
                    .collect(),
            )
            .unwrap();
            let v1 = phi_solve(&mu1, 1e-4).unwrap().value;
            let v2 = phi_solve(&mu2, 1e-4).unwrap().value;
            assert!(v2 <= v1 + 1e-8, "larger density must not increase Φ");
        }
    }

    #[test]
    fn variational_inequality_against_feasible_directions() {
        let g = grid(32);
        let h = g.h();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mu = random_density(&g, &mut rng, 1.0);
        let res = phi_solve(&mu, 1e-5).unwrap();
        for _ in 0..100 {
            let raw: Vec<f64> = (0..32).map(|_| -rng.random::<f64>()).collect();
            let norm = h1_inner(&raw, &raw, h).sqrt();
            let dir: Vec<f64> = raw.iter().map(|v| v / norm).collect();
            let lhs = l2_inner(mu.values(), &dir, h) - h1_inner(res.f_hat.values(), &dir, h);
            // <μ - f̂, h>_{duality} <= 0 for feasible h <= 0 at the optimum
            // (up to the ε-penalization slack).
            assert!(lhs <= 1e-6, "violation {lhs}");
        }
    }

    #[test]
    fn gradient_check_small_error() {
        let g = grid(48);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mu = random_density(&g, &mut rng, 1.0);
        let dirs: Vec<GridFunction> = (0..5).map(|_| random_density(&g, &mut rng, 1.0)).collect();
        let err = phi_gradient_check(&mu, &dirs).unwrap();
        assert!(err <= 1e-3, "gradient error {err}");
    }

    #[test]
    fn lipschitz_ratio_below_one() {
        let g = grid(48);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let pairs: Vec<(GridFunction, GridFunction)> = (0..20)
            .map(|_| (random_density(&g, &mut rng, 1.0), random_density(&g, &mut rng, 1.0)))
            .collect();
        let ratio = phi_lipschitz_check(&pairs).unwrap();
        assert!(ratio <= 1.0 + 1e-6, "ratio {ratio}");
    }

    #[test]
    fn energy_inequality_slack() {
        let g = grid(48);
        // constant negative: slack is exactly zero
        let mu = GridFunction::from_fn(Arc::clone(&g), |_| -0.5);
        let slack = phi_energy_inequality_check(&mu).unwrap();
        assert!(slack.abs() < 1e-6, "slack {slack}");
        // random signed densities: nonnegative up to tolerance
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let mu = random_density(&g, &mut rng, 1.0);
            let slack = phi_energy_inequality_check(&mu).unwrap();
            assert!(slack >= -1e-6, "slack {slack}");
        }
    }

    #[test]
    fn epsilon_refinement_is_cauchy() {
        let g = grid(32);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mu = random_density(&g, &mut rng, 1.0);
        let mut values = Vec::new();
        for k in 0..6 {
            let eps = 1e-2 / 2f64.powi(k);
            // One fixed-eps solve (no adaptivity) by calling the inner path
            // through a tiny epsilon tolerance trick: solve with start eps
            // and read off the first value.
            let (f, _, _) = super::solve_penalized(mu.values(), g.h(), eps, &vec![false; 32]);
            let v = l2_inner(mu.values(), &f, g.h()) - 0.5 * h1_inner(&f, &f, g.h());
            values.push(v);
        }
        for w in values.windows(2) {
            assert!((w[1] - w[0]).abs() <= (values[0] - values[values.len() - 1]).abs() + 1e-9);
        }
        let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        for w in diffs.windows(1).skip(1) {
            let _ = w;
        }
        assert!(diffs.last().unwrap() < &diffs[0].max(1e-12));
    }
}

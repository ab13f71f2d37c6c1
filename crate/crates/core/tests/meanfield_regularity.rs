//! Regularity of the regularized mean-field value: adjoint bounds stable
//! across the penalty ladder, Lipschitz difference quotients in the
//! measure, and square-root time increments.

mod oracles;

use std::collections::BTreeMap;
use std::sync::Arc;

use meanstop_core::grid::{GridMeasure, TorusGrid};
use meanstop_core::meanfield::{solve_mfc, MfcParams};
use meanstop_core::metrics::bl_distance;
use meanstop_core::model::{model_by_name, ModelSpec};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn model(horizon: f64) -> ModelSpec {
    let mut params = BTreeMap::new();
    params.insert("c0".into(), 0.8);
    params.insert("c1".into(), 0.5);
    params.insert("c2".into(), 0.25);
    params.insert("kappa".into(), 0.2);
    model_by_name("congestion", &params, horizon).unwrap()
}

#[test]
fn adjoint_bounds_stable_as_delta_shrinks() {
    let model = model(0.1);
    let n = 24;
    let grid = Arc::new(TorusGrid::new(n));
    let m0 = GridMeasure::uniform(Arc::clone(&grid), 0.6);
    let params = MfcParams::new(100);
    let mut sup_norms = Vec::new();
    let mut grad_norms = Vec::new();
    for &delta in &[0.2, 0.1, 0.05] {
        let sol = solve_mfc(&model, 0.0, &m0, 0.01, delta, &params).unwrap();
        let mut sup: f64 = 0.0;
        let mut grad: f64 = 0.0;
        let h = grid.h();
        for u in &sol.adjoint {
            sup = sup.max(u.sup_norm());
            for d in u.forward_diff() {
                grad = grad.max(d.abs());
            }
            let _ = h;
        }
        sup_norms.push(sup);
        grad_norms.push(grad);
    }
    for pair in sup_norms.windows(2) {
        let ratio = pair[1] / pair[0];
        assert!(ratio <= 1.2 && ratio >= 1.0 / 1.2, "sup norms {sup_norms:?}");
    }
    for pair in grad_norms.windows(2) {
        let ratio = pair[1] / pair[0];
        assert!(ratio <= 1.2 && ratio >= 1.0 / 1.2, "grad norms {grad_norms:?}");
    }
}

#[test]
fn lipschitz_in_measure_uniform_across_delta() {
    let model = model(0.1);
    let n = 16;
    let grid = Arc::new(TorusGrid::new(n));
    let params = MfcParams::new(60);
    let mut rng = ChaCha8Rng::seed_from_u64(113);
    // a handful of perturbation pairs, quotients per delta
    let mut per_delta: Vec<f64> = Vec::new();
    for &delta in &[0.2, 0.1, 0.05] {
        let mut worst: f64 = 0.0;
        let mut rng_local = rng.clone();
        for _ in 0..6 {
            let m0 = oracles::random_measure(&grid, &mut rng_local, 0.7);
            let mut perturbed = m0.mass().to_vec();
            for v in perturbed.iter_mut() {
                *v *= 1.0 - 0.2 * rng_local.random::<f64>();
            }
            let m1 = GridMeasure::new(Arc::clone(&grid), perturbed).unwrap();
            let d = bl_distance(&m0, &m1).unwrap();
            if d < 1e-9 {
                continue;
            }
            let u0 = solve_mfc(&model, 0.0, &m0, 0.01, delta, &params).unwrap().value;
            let u1 = solve_mfc(&model, 0.0, &m1, 0.01, delta, &params).unwrap().value;
            worst = worst.max((u0 - u1).abs() / d);
        }
        per_delta.push(worst);
    }
    rng.random::<u32>();
    let max_c = per_delta.iter().fold(0.0f64, |a, &b| a.max(b));
    let min_c = per_delta.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    assert!(
        max_c / min_c <= 1.2,
        "Lipschitz quotients drift across delta: {per_delta:?}"
    );
}

#[test]
fn time_increments_are_square_root_bounded() {
    let model = model(0.2);
    let n = 16;
    let grid = Arc::new(TorusGrid::new(n));
    let m0 = GridMeasure::uniform(Arc::clone(&grid), 0.6);
    // Values from later starting times on matching meshes.
    let value_from = |t0: f64| -> f64 {
        let steps = (((0.2 - t0) / 0.002).round() as usize).max(10);
        let params = MfcParams::new(steps);
        solve_mfc(&model, t0, &m0, 0.01, 0.1, &params).unwrap().value
    };
    let base = value_from(0.0);
    for &gap in &[0.04, 0.08, 0.16] {
        let v = value_from(gap);
        let ratio = (v - base).abs() / gap.sqrt();
        assert!(ratio <= 2.0, "time increment ratio {ratio} at gap {gap}");
    }
}

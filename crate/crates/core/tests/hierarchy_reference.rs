//! The population-level solver against an independent single-particle
//! reference, plus refinement behavior.

mod oracles;

use std::collections::BTreeMap;

use meanstop_core::grid::EmpiricalState;
use meanstop_core::hierarchy::{solve_hierarchy, HierarchyConfig};
use meanstop_core::model::model_by_name;
use oracles::solve_single_particle;

fn prohibitive_model(horizon: f64) -> meanstop_core::model::ModelSpec {
    let mut params = BTreeMap::new();
    params.insert("psi0".into(), 1e3);
    params.insert("f0_amp".into(), 0.4);
    params.insert("kappa".into(), 0.0);
    params.insert("g0".into(), 1.0);
    params.insert("g_amp".into(), 0.5);
    model_by_name("quadratic", &params, horizon).unwrap()
}

/// Max deviation from the fine explicit reference over the shared nodes of
/// the initial slice.
fn error_against_reference(
    n_cells: usize,
    n_steps: usize,
    reference: &oracles::SingleParticleReference,
    model: &meanstop_core::model::ModelSpec,
) -> f64 {
    let big_n = 2;
    let cfg = HierarchyConfig::new(big_n, 1, n_cells, n_steps);
    let hier = solve_hierarchy(model, cfg).unwrap();
    let ref_n = reference.grid.n_cells();
    let stride = ref_n / n_cells;
    assert_eq!(stride * n_cells, ref_n, "grids must nest");
    let mut worst: f64 = 0.0;
    for j in 0..n_cells {
        let v = hier.table(1, 0)[j];
        let r = reference.values[0][j * stride];
        worst = worst.max((v - r).abs());
    }
    worst
}

#[test]
fn single_particle_agreement_and_refinement() {
    let horizon = 0.25;
    let model = prohibitive_model(horizon);
    // Fine explicit reference: n = 256, dt <= h^2/4.
    let ref_steps = ((horizon * 4.0) / (1.0 / 256.0f64).powi(2)).ceil() as usize;
    let reference = solve_single_particle(&model, 2, 256, ref_steps);

    let coarse_n = 32;
    let coarse_steps = (horizon * 2.0 * (coarse_n * coarse_n) as f64).ceil() as usize;
    let err_coarse = error_against_reference(coarse_n, coarse_steps, &reference, &model);
    let h = 1.0 / coarse_n as f64;
    let dt = horizon / coarse_steps as f64;
    let tol = 5.0 * (h * h + dt);
    assert!(
        err_coarse <= tol,
        "coarse error {err_coarse} exceeds 5 (h^2 + dt) = {tol}"
    );

    let err_fine = error_against_reference(2 * coarse_n, 4 * coarse_steps, &reference, &model);
    let ratio = err_coarse / err_fine;
    assert!(
        (2.5..=6.0).contains(&ratio),
        "refinement ratio {ratio} (coarse {err_coarse}, fine {err_fine})"
    );
}

#[test]
fn reference_includes_obstacle_when_cheap() {
    // With an affordable penalty both solvers must agree on where stopping
    // caps the value.
    let horizon = 0.2;
    let mut params = BTreeMap::new();
    params.insert("psi0".into(), 0.3);
    params.insert("f0_amp".into(), 0.2);
    params.insert("g0".into(), 1.0);
    params.insert("g_amp".into(), 0.5);
    let model = model_by_name("quadratic", &params, horizon).unwrap();
    let ref_steps = ((horizon * 4.0) / (1.0 / 128.0f64).powi(2)).ceil() as usize;
    let reference = solve_single_particle(&model, 2, 128, ref_steps);
    let n_cells = 32;
    let n_steps = (horizon * 2.0 * (n_cells * n_cells) as f64).ceil() as usize;
    let cfg = HierarchyConfig::new(2, 1, n_cells, n_steps);
    let hier = solve_hierarchy(&model, cfg).unwrap();
    let stride = 128 / n_cells;
    let mut worst: f64 = 0.0;
    for j in 0..n_cells {
        let v = hier.table(1, 0)[j];
        let r = reference.values[0][j * stride];
        worst = worst.max((v - r).abs());
    }
    let h = 1.0 / n_cells as f64;
    let dt = horizon / n_steps as f64;
    assert!(
        worst <= 5.0 * (h * h + dt),
        "obstacle-active error {worst}"
    );
}

#[test]
fn query_value_interpolates_between_reference_nodes() {
    let horizon = 0.25;
    let model = prohibitive_model(horizon);
    let cfg = HierarchyConfig::new(2, 1, 32, 520);
    let hier = solve_hierarchy(&model, cfg).unwrap();
    // off-node, off-slice query stays within the surrounding value range
    let st = EmpiricalState::new(2, vec![0.337]).unwrap();
    let v = hier.query_value(0.1234, &st).unwrap();
    let lo = hier
        .table(1, 256)
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = hier
        .table(1, 256)
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
}

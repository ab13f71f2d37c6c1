//! The semismooth-Newton obstacle solve against the coordinate-descent QP
//! oracle.

mod oracles;

use std::sync::Arc;

use meanstop_core::grid::{GridFunction, TorusGrid};
use meanstop_core::phi::phi_solve;
use oracles::phi_qp_oracle;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[test]
fn newton_matches_qp_oracle() {
    let n = 48;
    let grid = Arc::new(TorusGrid::new(n));
    let mut rng = ChaCha8Rng::seed_from_u64(97);
    for trial in 0..10 {
        let vals: Vec<f64> = (0..n)
            .map(|_| 1.5 * (rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        let mu = GridFunction::new(Arc::clone(&grid), vals.clone()).unwrap();
        let fast = phi_solve(&mu, 1e-4).unwrap();
        let (oracle_value, oracle_f) = phi_qp_oracle(&vals, grid.h());
        assert!(
            (fast.value - oracle_value).abs() < 1e-7,
            "trial {trial}: {} vs {oracle_value}",
            fast.value
        );
        let max_dev = fast
            .f_hat
            .values()
            .iter()
            .zip(&oracle_f)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev < 1e-4, "trial {trial}: maximizers differ by {max_dev}");
    }
}

#[test]
fn oracle_agrees_on_constant_case() {
    let n = 64;
    let grid = Arc::new(TorusGrid::new(n));
    let c = 0.7;
    let vals = vec![-c; n];
    let (value, f) = phi_qp_oracle(&vals, grid.h());
    assert!((value - 0.5 * c * c).abs() < 1e-10);
    for v in f {
        assert!((v + c).abs() < 1e-10);
    }
}

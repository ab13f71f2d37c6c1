//! Periodic tridiagonal solves (Thomas algorithm plus a Sherman-Morrison
//! correction for the wrap-around corner entries).

/// Solve `A x = d` where `A` is tridiagonal with constant wrap-around:
/// `A[i][i] = diag[i]`, `A[i][i-1] = lower[i]`, `A[i][i+1] = upper[i]`,
/// indices periodic (so `lower[0]` is the `(0, n-1)` entry and `upper[n-1]`
/// the `(n-1, 0)` entry).
pub fn solve_periodic(diag: &[f64], lower: &[f64], upper: &[f64], d: &[f64]) -> Vec<f64> {
    let n = diag.len();
    assert!(n >= 3, "periodic tridiagonal needs n >= 3");
    debug_assert_eq!(lower.len(), n);
    debug_assert_eq!(upper.len(), n);
    debug_assert_eq!(d.len(), n);

    // Condensed system on 0..n-1 with the corner entries removed via a
    // rank-one update: A = B + u v^T with u = (gamma, 0, .., 0, lower[0]*? )
    // Using the standard choice: gamma = -diag[0].
    let gamma = -diag[0];
    let mut dd: Vec<f64> = diag.to_vec();
    dd[0] = diag[0] - gamma;
    dd[n - 1] = diag[n - 1] - upper[n - 1] * lower[0] / gamma;

    let y = solve_plain(&dd, lower, upper, d);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = upper[n - 1];
    let q = solve_plain(&dd, lower, upper, &u);

    // v = (1, 0, ..., 0, lower[0]/gamma)
    let vy = y[0] + lower[0] / gamma * y[n - 1];
    let vq = q[0] + lower[0] / gamma * q[n - 1];
    let factor = vy / (1.0 + vq);
    (0..n).map(|i| y[i] - factor * q[i]).collect()
}

/// Plain (non-periodic) Thomas solve; `lower[0]` and `upper[n-1]` ignored.
fn solve_plain(diag: &[f64], lower: &[f64], upper: &[f64], d: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    x[0] = d[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        x[i] = (d[i] - lower[i] * x[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// Solve `(I - a * Lap_h) x = d` on the periodic grid, where `Lap_h` is the
/// standard three-point Laplacian with spacing `h`.
pub fn solve_heat_implicit(d: &[f64], a: f64, h: f64) -> Vec<f64> {
    let n = d.len();
    let r = a / (h * h);
    let diag = vec![1.0 + 2.0 * r; n];
    let off = vec![-r; n];
    solve_periodic(&diag, &off, &off, d)
}

/// Solve `(I - a * Lap_h + diag(extra)) x = d` on the periodic grid.
pub fn solve_heat_implicit_diag(d: &[f64], a: f64, h: f64, extra: &[f64]) -> Vec<f64> {
    let n = d.len();
    let r = a / (h * h);
    let diag: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * r + extra[i]).collect();
    let off = vec![-r; n];
    solve_periodic(&diag, &off, &off, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat_vec(diag: &[f64], lower: &[f64], upper: &[f64], x: &[f64]) -> Vec<f64> {
        let n = diag.len();
        (0..n)
            .map(|i| {
                diag[i] * x[i]
                    + lower[i] * x[(i + n - 1) % n]
                    + upper[i] * x[(i + 1) % n]
            })
            .collect()
    }

    #[test]
    fn periodic_solve_round_trip() {
        let n = 17;
        let diag: Vec<f64> = (0..n).map(|i| 3.0 + 0.1 * (i as f64).sin()).collect();
        let lower: Vec<f64> = (0..n).map(|i| -0.7 + 0.01 * i as f64).collect();
        let upper: Vec<f64> = (0..n).map(|i| -0.9 + 0.02 * i as f64).collect();
        let d: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
        let x = solve_periodic(&diag, &lower, &upper, &d);
        let back = mat_vec(&diag, &lower, &upper, &x);
        for i in 0..n {
            assert!((back[i] - d[i]).abs() < 1e-10, "row {i}");
        }
    }

    #[test]
    fn implicit_heat_preserves_mean_and_positivity() {
        let n = 64;
        let h = 1.0 / n as f64;
        let d: Vec<f64> = (0..n)
            .map(|i| if i == 10 { 1.0 } else { 0.0 })
            .collect();
        let x = solve_heat_implicit(&d, 1e-3, h);
        let sum: f64 = x.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(x.iter().all(|&v| v >= 0.0));
    }
}

//! The experiment runners behind each CLI kind.

use std::sync::Arc;
use std::time::Instant;

use meanstop_core::envelopes::{continuous_envelope, discrete_envelope};
use meanstop_core::error::{Error, Result};
use meanstop_core::grid::{EmpiricalState, GridFunction, GridMeasure, MeasureRef, TorusGrid};
use meanstop_core::hierarchy::{
    extract_policy, regularity_report, solve_hierarchy, HierarchyConfig, ValueHierarchy,
};
use meanstop_core::meanfield::{
    evaluate_j_theta, evaluate_j_theta_delta, j_theta_delta_gradient, psi_monotonicity_check,
    regularization_ladder, solve_fp, solve_mfc, ControlField, Mesh, MfcParams,
};
use meanstop_core::metrics::{bl_distance, rho_distance};
use meanstop_core::model::{validate, ModelSpec};
use meanstop_core::montecarlo::{simulate, SimConfig};
use meanstop_core::phi::{
    phi_energy_inequality_check, phi_gradient_check, phi_lipschitz_check, phi_solve,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::report::RunReport;
use crate::svg::{Chart, Series};

pub fn run(kind: &str, cfg: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let mut report = match kind {
        "validate-model" => run_validate(cfg)?,
        "envelope" => run_envelope(cfg)?,
        "nparticle" => run_nparticle(cfg)?,
        "montecarlo" => run_montecarlo(cfg)?,
        "meanfield" => run_meanfield(cfg)?,
        "ladder" => run_ladder(cfg)?,
        "converge" => run_convergence(cfg)?,
        "lipschitz" => run_lipschitz(cfg)?,
        "phi" => run_phi(cfg)?,
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown experiment kind '{other}'"
            )))
        }
    };
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn seeded_rng(cfg: &ExperimentConfig, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed ^ salt)
}

fn random_measure(grid: &Arc<TorusGrid>, rng: &mut impl Rng, total: f64) -> GridMeasure {
    let n = grid.n_cells();
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    GridMeasure::new(
        Arc::clone(grid),
        raw.into_iter().map(|v| v / s * total).collect(),
    )
    .unwrap()
}

fn node_state(
    rng: &mut impl Rng,
    grid: &Arc<TorusGrid>,
    big_n: usize,
    k: usize,
) -> EmpiricalState {
    let positions: Vec<f64> = (0..k)
        .map(|_| grid.node(rng.random_range(0..grid.n_cells())))
        .collect();
    EmpiricalState::new(big_n, positions).unwrap()
}

pub fn run_validate(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new("validate-model", &cfg.echo);
    let model = cfg.model()?;
    let v = validate(&model, 500, cfg.seed);
    let csv = format!(
        "check,value,pass\ncoercivity_constant,{:.16e},{}\nduality_gap,{:.16e},{}\npsi_monotonicity_violation,{:.16e},{}\npsi_x_lipschitz,{:.16e},\nterminal_lipschitz,{:.16e},\n",
        v.coercivity_constant,
        v.coercivity_ok,
        v.duality_gap,
        v.duality_ok,
        v.psi_monotonicity_violation,
        v.psi_monotone_ok,
        v.psi_x_lipschitz,
        v.terminal_lipschitz,
    );
    report.table("validator", csv);
    report.check(
        "coercivity",
        v.coercivity_ok,
        format!("tightest constant {:.4}", v.coercivity_constant),
    );
    report.check(
        "legendre-duality",
        v.duality_ok,
        format!("max sampled gap {:.3e}", v.duality_gap),
    );
    report.check(
        "psi-monotone",
        v.psi_monotone_ok,
        format!("max violation {:.3e}", v.psi_monotonicity_violation),
    );
    report.check("finite-evaluations", v.all_finite, String::new());
    Ok(report)
}

pub fn run_envelope(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new("envelope", &cfg.echo);
    let model = cfg.model()?;
    let grid = Arc::new(TorusGrid::new(cfg.n_cells));
    let mut rng = seeded_rng(cfg, 0xE57);

    // Removal monotonicity on random states and subsets.
    let mut worst_discrete: f64 = f64::NEG_INFINITY;
    for _ in 0..200 {
        let k = rng.random_range(1..=3usize);
        let state = node_state(&mut rng, &grid, 8, k);
        let full = discrete_envelope(&model, &state)?;
        let m_full = MeasureRef::Empirical(&state);
        let mask: u32 = rng.random_range(1..(1u32 << k));
        let mut reduced = state.clone();
        let mut penalty = 0.0;
        for i in (0..k).rev() {
            if mask >> i & 1 == 1 {
                penalty += model.psi(state.positions()[i], &m_full) / 8.0;
                reduced = reduced.without(i);
            }
        }
        let sub = discrete_envelope(&model, &reduced)?;
        worst_discrete = worst_discrete.max(full.value - sub.value - penalty);
    }
    report.check(
        "discrete-monotone",
        worst_discrete <= 1e-10,
        format!("max violation {worst_discrete:.3e}"),
    );

    let mut worst_cont: f64 = f64::NEG_INFINITY;
    for _ in 0..200 {
        let m = random_measure(&grid, &mut rng, 0.9);
        let n = GridMeasure::new(
            Arc::clone(&grid),
            m.mass().iter().map(|v| v * rng.random::<f64>()).collect(),
        )?;
        let env_m = continuous_envelope(&model, &m)?;
        let env_n = continuous_envelope(&model, &n)?;
        let m_ref = MeasureRef::Grid(&m);
        let transfer: f64 = (0..cfg.n_cells)
            .map(|j| model.psi(grid.node(j), &m_ref) * (m.mass()[j] - n.mass()[j]))
            .sum();
        worst_cont = worst_cont.max(env_m.value - env_n.value - transfer);
    }
    report.check(
        "continuous-monotone",
        worst_cont <= 1e-10,
        format!("max violation {worst_cont:.3e}"),
    );

    // Convergence trend over the population sizes.
    let mut csv = String::from("N,max_gap\n");
    let mut gaps = Vec::new();
    for &big_n in &cfg.big_n {
        let mut rng_n = seeded_rng(cfg, 0xE58);
        let mut worst: f64 = 0.0;
        for _ in 0..cfg.probes.max(40) {
            let positions: Vec<f64> = (0..big_n).map(|_| rng_n.random::<f64>()).collect();
            let state = EmpiricalState::new(big_n, positions)?;
            let d = discrete_envelope(&model, &state)?.value;
            let c = continuous_envelope(&model, &state.as_measure(Arc::clone(&grid)))?.value;
            worst = worst.max((d - c).abs());
        }
        csv.push_str(&format!("{big_n},{worst:.16e}\n"));
        gaps.push((big_n as f64, worst));
    }
    let decreasing = gaps.windows(2).all(|w| w[1].1 < w[0].1);
    report.check(
        "gap-decreasing",
        decreasing,
        format!("gaps {:?}", gaps.iter().map(|g| g.1).collect::<Vec<_>>()),
    );
    report.table("envelope_gaps", csv);
    report.plot(
        "gap_vs_n",
        Chart {
            title: "envelope gap vs N".into(),
            x_label: "N".into(),
            y_label: "max gap".into(),
            log_x: false,
            log_y: true,
            series: vec![Series {
                label: "max gap".into(),
                points: gaps,
            }],
        }
        .render(),
    );
    Ok(report)
}

fn hierarchy_for(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    big_n: usize,
    k_max: usize,
) -> Result<ValueHierarchy> {
    let k_max = k_max.min(big_n);
    let steps = cfg.hierarchy_steps(cfg.n_cells);
    solve_hierarchy(model, HierarchyConfig::new(big_n, k_max, cfg.n_cells, steps))
}

/// Full-table obstacle and removal-monotonicity audit; returns the worst
/// violation.
pub fn hierarchy_invariant_violation(
    hierarchy: &ValueHierarchy,
    model: &ModelSpec,
) -> f64 {
    let grid = hierarchy.grid();
    let n = grid.n_cells();
    let weight = 1.0 / hierarchy.big_n as f64;
    let mut worst: f64 = f64::NEG_INFINITY;
    for k in 1..=hierarchy.k_max {
        let size = n.pow(k as u32);
        for step in 0..hierarchy.times().len() {
            let table = hierarchy.table(k, step);
            for idx in 0..size {
                let mut coords = [0.0f64; 3];
                let mut rest = idx;
                for c in coords.iter_mut().take(k) {
                    *c = grid.node(rest % n);
                    rest /= n;
                }
                let m = MeasureRef::Atoms {
                    positions: &coords[..k],
                    weight,
                };
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
                    let bound = hierarchy.table(k - 1, step)[reduced_idx]
                        + model.psi(coords[i], &m) * weight;
                    worst = worst.max(table[idx] - bound);
                }
            }
        }
    }
    worst
}

pub fn run_nparticle(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new("nparticle", &cfg.echo);
    let model = cfg.model()?;
    let mut csv = String::from("N,K,spatial_lipschitz,removal_constant,time_holder\n");
    for &big_n in &cfg.big_n {
        let hierarchy = hierarchy_for(cfg, &model, big_n, cfg.k_max)?;
        let violation = hierarchy_invariant_violation(&hierarchy, &model);
        report.check(
            &format!("invariants-N{big_n}"),
            violation <= 1e-9,
            format!("worst obstacle/monotonicity violation {violation:.3e}"),
        );
        let reg = regularity_report(&hierarchy);
        for level in &reg.per_level {
            csv.push_str(&format!(
                "{big_n},{},{:.16e},{:.16e},{:.16e}\n",
                level.k, level.spatial_lipschitz, level.removal_constant, level.time_holder
            ));
        }
        for k in 1..=hierarchy.k_max {
            report.table(&format!("vnk_N{big_n}_K{k}"), hierarchy.level_to_text(k));
        }
    }
    report.table("regularity", csv);
    Ok(report)
}

pub fn run_montecarlo(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new("montecarlo", &cfg.echo);
    let model = cfg.model()?;
    let big_n = cfg.big_n[0];
    let k = cfg.k_max.min(big_n);
    let hierarchy = hierarchy_for(cfg, &model, big_n, k)?;
    let policy = extract_policy(&hierarchy, &model);
    let grid = hierarchy.grid().clone();
    let mut rng = seeded_rng(cfg, 0x3C);
    let initial = node_state(&mut rng, &grid, big_n, k);
    let sim = SimConfig::new(cfg.n_paths, cfg.dt_sim, cfg.seed, 0.0, initial.clone());
    let est = simulate(&model, &policy, &sim)?;
    let pde = hierarchy.query_value(0.0, &initial)?;
    let gap = (est.mean - pde).abs();
    let pass = gap <= 3.0 * est.std_error.max(1e-12);
    report.check(
        "mc-vs-pde",
        pass,
        format!(
            "mc {:.6} pde {pde:.6} gap {gap:.2e} (3 sigma = {:.2e})",
            est.mean,
            3.0 * est.std_error
        ),
    );
    let mut csv = String::from("experiment,N,K,t0,mean,stderr,n_paths,seed\n");
    csv.push_str(&est.csv_row("montecarlo", big_n, k, 0.0, cfg.seed));
    csv.push('\n');
    report.table("estimates", csv);
    Ok(report)
}

fn mfc_params(cfg: &ExperimentConfig) -> MfcParams {
    let mut p = MfcParams::new(if cfg.n_steps > 0 { cfg.n_steps } else { 250 });
    p.damping = cfg.damping;
    p
}

pub fn run_meanfield(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new("meanfield", &cfg.echo);
    let model = cfg.model()?;
    let grid = Arc::new(TorusGrid::new(cfg.n_cells));
    let total = cfg
        .model_params
        .get("m0_total")
        .copied()
        .unwrap_or(0.5)
        .clamp(0.0, 1.0);
    let m0 = GridMeasure::uniform(Arc::clone(&grid), total);
    let params = mfc_params(cfg);
    let theta = cfg.thetas[0];
    let delta = cfg.deltas[0];
    let sol = solve_mfc(&model, 0.0, &m0, theta, delta, &params)?;
    report.check(
        "solver-converged",
        sol.converged,
        format!(
            "value {:.6}, iterations {}, residual {:.2e}, descent fallback {}",
            sol.value, sol.iterations, sol.residual, sol.used_descent
        ),
    );

    // Mass ledger on the solved control.
    let mesh = sol.path.mesh.clone();
    let fp = solve_fp(&sol.control, &m0, &mesh)?;
    report.check(
        "fp-mass-ledger",
        fp.mass_defect() <= 1e-10,
        format!("defect {:.3e}", fp.mass_defect()),
    );

    // Gradient check against finite differences on random directions.
    let mut rng = seeded_rng(cfg, 0x6AD);
    let mut base = sol.control.clone();
    for k in 0..mesh.n_steps {
        for j in 0..cfg.n_cells {
            base.beta[k][j] += 0.3; // keep the rate interior
        }
    }
    let g = j_theta_delta_gradient(&model, &m0, &mesh, &base, theta, delta)?;
    let eval = |c: &ControlField| -> Result<f64> {
        let fp = solve_fp(c, &m0, &mesh)?;
        evaluate_j_theta_delta(&model, &fp.path, c, theta, delta)
    };
    let t = 1e-5;
    let mut worst_rel: f64 = 0.0;
    for _ in 0..5 {
        let mut plus = base.clone();
        let mut minus = base.clone();
        let mut dot = 0.0;
        for k in 0..mesh.n_steps {
            for j in 0..cfg.n_cells {
                let va: f64 = rng.random::<f64>() * 2.0 - 1.0;
                let vb: f64 = rng.random::<f64>() * 2.0 - 1.0;
                plus.alpha[k][j] += t * va;
                plus.beta[k][j] += t * vb;
                minus.alpha[k][j] -= t * va;
                minus.beta[k][j] -= t * vb;
                dot += g.grad_alpha[k][j] * va + g.grad_beta[k][j] * vb;
            }
        }
        let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * t);
        worst_rel = worst_rel.max((fd - dot).abs() / fd.abs().max(dot.abs()).max(1e-12));
    }
    report.check(
        "adjoint-gradient",
        worst_rel <= 1e-4,
        format!("max relative error {worst_rel:.3e}"),
    );

    // Dynamic programming at the midpoint.
    let dpp = meanstop_core::meanfield::check_dpp(
        &model,
        0.0,
        model.horizon / 2.0,
        &m0,
        theta,
        delta,
        &params,
    )?;
    let h = grid.h();
    let dt = mesh.dt();
    let tol = 5.0 * (h * h + dt + 1e-6);
    report.check("dpp", dpp <= tol, format!("residual {dpp:.3e} (tol {tol:.3e})"));

    if let Some(out) = &cfg.out_dir {
        sol.write_dir(&std::path::Path::new(out).join("mfc_solution"))?;
    }
    let mut csv = String::from("quantity,value\n");
    csv.push_str(&format!("value,{:.16e}\n", sol.value));
    csv.push_str(&format!("optimality_residual,{:.16e}\n", sol.optimality_residual(&model)));
    csv.push_str(&format!("dpp_residual,{dpp:.16e}\n"));
    report.table("meanfield", csv);
    Ok(report)
}

pub fn run_ladder(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new("ladder", &cfg.echo);
    let model = cfg.model()?;
    let grid = Arc::new(TorusGrid::new(cfg.n_cells));
    let total = cfg.model_params.get("m0_total").copied().unwrap_or(0.5);
    let m0 = GridMeasure::uniform(Arc::clone(&grid), total);
    let params = mfc_params(cfg);
    let ladder =
        regularization_ladder(&model, 0.0, &m0, &cfg.thetas, &cfg.deltas, &params)?;
    report.table("ladder", ladder.to_csv());
    let all_converged = ladder.cells.iter().all(|c| c.converged);
    report.check(
        "cells-converged",
        all_converged,
        format!("corner value {:.6} +- {:.2e}", ladder.corner_value, ladder.corner_defect),
    );
    // Cauchy differences shrink along each delta row.
    let mut shrinking = true;
    for row in &ladder.delta_cauchy {
        for w in row.windows(2) {
            if w[1] > w[0] + 1e-12 {
                shrinking = false;
            }
        }
    }
    report.check(
        "delta-cauchy-decreasing",
        shrinking,
        format!("{:?}", ladder.delta_cauchy),
    );
    // Penalty positivity at each solved triple.
    let mut penalty_ok = true;
    for &theta in &cfg.thetas {
        for &delta in &cfg.deltas {
            let sol = solve_mfc(&model, 0.0, &m0, theta, delta, &params)?;
            let j_theta = evaluate_j_theta(&model, &sol.path, &sol.control, theta)?;
            if sol.value < j_theta - 1e-12 {
                penalty_ok = false;
            }
        }
    }
    report.check("penalty-positivity", penalty_ok, String::new());
    // Psi monotonicity over random ordered pairs.
    let mut rng = seeded_rng(cfg, 0x9A);
    let mut pairs = Vec::new();
    for _ in 0..3 {
        let m = random_measure(&grid, &mut rng, 0.8);
        let n = GridMeasure::new(
            Arc::clone(&grid),
            m.mass().iter().map(|v| v * rng.random::<f64>()).collect(),
        )?;
        pairs.push((m, n));
    }
    let viol = psi_monotonicity_check(
        &model,
        0.0,
        &pairs,
        cfg.thetas[0],
        *cfg.deltas.last().unwrap(),
        &params,
    )?;
    report.check(
        "psi-monotone-value",
        viol <= 1e-3,
        format!("max violation {viol:.3e}"),
    );
    Ok(report)
}

/// The mean-field value estimate at a deposited empirical measure: the
/// corner of the regularization ladder.
fn u_estimate(
    model: &ModelSpec,
    m0: &GridMeasure,
    cfg: &ExperimentConfig,
    params: &MfcParams,
) -> Result<f64> {
    let ladder = regularization_ladder(model, 0.0, m0, &cfg.thetas, &cfg.deltas, params)?;
    Ok(ladder.corner_value)
}

pub fn run_convergence(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new("converge", &cfg.echo);
    let model = cfg.model()?;
    let grid = Arc::new(TorusGrid::new(cfg.n_cells));
    let params = mfc_params(cfg);
    let mut csv = String::from("N,K,e\n");
    let mut series: Vec<Series> = Vec::new();
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    for &big_n in &cfg.big_n {
        let k_top = cfg.k_max.min(big_n);
        let hierarchy = hierarchy_for(cfg, &model, big_n, k_top)?;
        for k in 1..=k_top {
            let mut rng = seeded_rng(cfg, 0xC0 + k as u64);
            let mut e: f64 = 0.0;
            for _ in 0..cfg.probes {
                let state = node_state(&mut rng, &grid, big_n, k);
                let v = hierarchy.query_value(0.0, &state)?;
                let m0 = state.as_measure(Arc::clone(&grid));
                let u = u_estimate(&model, &m0, cfg, &params)?;
                e = e.max((v - u).abs());
            }
            csv.push_str(&format!("{big_n},{k},{e:.16e}\n"));
            cells.push((big_n, k, e));
        }
    }
    for k in 1..=cfg.k_max {
        let points: Vec<(f64, f64)> = cells
            .iter()
            .filter(|c| c.1 == k)
            .map(|c| (c.0 as f64, c.2))
            .collect();
        if !points.is_empty() {
            series.push(Series {
                label: format!("K = {k}"),
                points,
            });
        }
    }
    report.table("convergence", csv);
    report.plot(
        "e_vs_n",
        Chart {
            title: "hierarchy vs mean-field value".into(),
            x_label: "N".into(),
            y_label: "e(N, K)".into(),
            log_x: false,
            log_y: true,
            series,
        }
        .render(),
    );
    // Trend check on the K = 1 column (noise band 20%).
    let k1: Vec<f64> = cells.iter().filter(|c| c.1 == 1).map(|c| c.2).collect();
    let trend_ok = k1.windows(2).all(|w| w[1] <= w[0] * 1.2);
    report.check("e-nonincreasing-K1", trend_ok, format!("{k1:?}"));
    let worst = cells.iter().map(|c| c.2).fold(0.0f64, f64::max);
    report.check("cells-computed", worst.is_finite(), format!("max e {worst:.3e}"));
    Ok(report)
}

pub fn run_lipschitz(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new("lipschitz", &cfg.echo);
    let model = cfg.model()?;
    let mut csv = String::from("N,K,spatial_lipschitz,removal_constant,time_holder\n");
    let mut spatial_by_k: Vec<Vec<f64>> = vec![Vec::new(); cfg.k_max + 1];
    let mut removal_by_k: Vec<Vec<f64>> = vec![Vec::new(); cfg.k_max + 1];
    let mut last_hierarchy = None;
    for &big_n in &cfg.big_n {
        let hierarchy = hierarchy_for(cfg, &model, big_n, cfg.k_max)?;
        let reg = regularity_report(&hierarchy);
        for level in &reg.per_level {
            csv.push_str(&format!(
                "{big_n},{},{:.16e},{:.16e},{:.16e}\n",
                level.k, level.spatial_lipschitz, level.removal_constant, level.time_holder
            ));
            spatial_by_k[level.k].push(level.spatial_lipschitz);
            removal_by_k[level.k].push(level.removal_constant);
        }
        last_hierarchy = Some(hierarchy);
    }
    report.table("constants", csv);
    let stability = |rows: &[Vec<f64>]| -> f64 {
        let mut worst: f64 = 1.0;
        for row in rows.iter().skip(1) {
            if row.len() >= 2 {
                let hi = row.iter().fold(0.0f64, |a, &b| a.max(b));
                let lo = row.iter().fold(f64::INFINITY, |a, &b| a.min(b));
                if lo > 1e-12 {
                    worst = worst.max(hi / lo);
                }
            }
        }
        worst
    };
    let spatial_factor = stability(&spatial_by_k);
    let removal_factor = stability(&removal_by_k);
    report.check(
        "spatial-stable",
        spatial_factor <= 1.25,
        format!("cross-N factor {spatial_factor:.3}"),
    );
    report.check(
        "removal-stable",
        removal_factor <= 1.25,
        format!("cross-N factor {removal_factor:.3}"),
    );

    // Time-Hoelder exponent fit near the terminal kink for K = 1.
    if let Some(h) = last_hierarchy {
        let n_steps = h.times().len() - 1;
        let dt = h.dt();
        let terminal = h.table(1, n_steps).to_vec();
        let mut points = Vec::new();
        let mut gap_steps = 2usize;
        while gap_steps < n_steps / 2 {
            let slice = h.table(1, n_steps - gap_steps);
            let dmax = slice
                .iter()
                .zip(&terminal)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if dmax > 0.0 {
                points.push(((gap_steps as f64 * dt).ln(), dmax.ln()));
            }
            gap_steps *= 4;
        }
        let exponent = least_squares_slope(&points);
        report.check(
            "time-holder-exponent",
            (0.45..=0.55).contains(&exponent),
            format!("fit exponent {exponent:.3} over {} gaps", points.len()),
        );
        report.table(
            "holder_fit",
            points
                .iter()
                .fold(String::from("log_gap,log_increment\n"), |mut acc, p| {
                    acc.push_str(&format!("{:.16e},{:.16e}\n", p.0, p.1));
                    acc
                }),
        );
    }
    Ok(report)
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return f64::NAN;
    }
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

pub fn run_phi(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new("phi", &cfg.echo);
    let grid = Arc::new(TorusGrid::new(cfg.n_cells));
    let mut rng = seeded_rng(cfg, 0xF1);
    let random_density = |rng: &mut ChaCha8Rng| -> GridFunction {
        GridFunction::new(
            Arc::clone(&grid),
            (0..cfg.n_cells)
                .map(|_| 1.2 * (rng.random::<f64>() * 2.0 - 1.0))
                .collect(),
        )
        .unwrap()
    };

    let nonneg = GridFunction::from_fn(Arc::clone(&grid), |x| 0.2 + (6.28 * x).cos().abs());
    let zero_case = phi_solve(&nonneg, 1e-3)?;
    report.check(
        "nonnegative-zero",
        zero_case.value == 0.0 && zero_case.f_hat.sup_norm() == 0.0,
        format!("value {:.3e}", zero_case.value),
    );

    let c = 0.8;
    let constant = GridFunction::from_fn(Arc::clone(&grid), |_| -c);
    let constant_case = phi_solve(&constant, 1e-3)?;
    report.check(
        "constant-closed-form",
        (constant_case.value - 0.5 * c * c).abs() <= 1e-8,
        format!("value {:.10} vs {:.10}", constant_case.value, 0.5 * c * c),
    );

    let mu = random_density(&mut rng);
    let dirs: Vec<GridFunction> = (0..10).map(|_| random_density(&mut rng)).collect();
    let grad_err = phi_gradient_check(&mu, &dirs)?;
    report.check(
        "gradient",
        grad_err <= 1e-3,
        format!("max relative error {grad_err:.3e}"),
    );

    let pairs: Vec<(GridFunction, GridFunction)> = (0..50)
        .map(|_| (random_density(&mut rng), random_density(&mut rng)))
        .collect();
    let ratio = phi_lipschitz_check(&pairs)?;
    report.check(
        "lipschitz-nonexpansive",
        ratio <= 1.0 + 1e-6,
        format!("max ratio {ratio:.9}"),
    );

    let mut min_slack = f64::INFINITY;
    for _ in 0..50 {
        let mu = random_density(&mut rng);
        min_slack = min_slack.min(phi_energy_inequality_check(&mu)?);
    }
    report.check(
        "energy-inequality",
        min_slack >= -1e-6,
        format!("min slack {min_slack:.3e}"),
    );

    let mut csv = String::from("check,value\n");
    csv.push_str(&format!("gradient_error,{grad_err:.16e}\n"));
    csv.push_str(&format!("lipschitz_ratio,{ratio:.16e}\n"));
    csv.push_str(&format!("energy_min_slack,{min_slack:.16e}\n"));
    report.table("phi", csv);
    Ok(report)
}

/// Metric-layer spot checks used by the all-checks driver.
pub fn metric_checks(cfg: &ExperimentConfig, report: &mut RunReport) -> Result<()> {
    let grid = Arc::new(TorusGrid::new(cfg.n_cells.min(32)));
    let mut rng = seeded_rng(cfg, 0xD1);
    let mut sandwich_ok = true;
    let mut detail = String::new();
    for _ in 0..40 {
        let (tm, tn) = (rng.random::<f64>(), rng.random::<f64>());
        let m = random_measure(&grid, &mut rng, tm);
        let n = random_measure(&grid, &mut rng, tn);
        let d = bl_distance(&m, &n)?;
        let rho = rho_distance(&m, &n)?;
        if d > rho + 1e-8 || rho > 3.0 * d + 1e-8 {
            sandwich_ok = false;
            detail = format!("d {d} rho {rho}");
            break;
        }
    }
    report.check("metric-sandwich", sandwich_ok, detail);
    Ok(())
}

//! Problem data: Hamiltonian, Lagrangian, stopping penalty, and terminal
//! cost, together with sampled validators for the standing assumptions and
//! the Lipschitz truncation of the Hamiltonian.
//!
//! Models depend on the measure argument only through its total mass and
//! finitely many integrals `∫ w dm` (cylindrical dependence). This keeps
//! the linear derivatives analytic and the optimality-system source term
//! computable without functional-differentiation machinery.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::MeasureRef;

pub type XpmFn = Arc<dyn Fn(f64, f64, &MeasureRef<'_>) -> f64 + Send + Sync>;
pub type PsiFn = Arc<dyn Fn(f64, &MeasureRef<'_>) -> f64 + Send + Sync>;
/// Linear derivative kernel `(x, m, y) -> δΨ/δm(x, m, y)`.
pub type KernelFn = Arc<dyn Fn(f64, &MeasureRef<'_>, f64) -> f64 + Send + Sync>;
/// Linear derivative of the Lagrangian `(y, a, m, x) -> δL/δm(y, a, m, x)`.
pub type LagLinFn = Arc<dyn Fn(f64, f64, &MeasureRef<'_>, f64) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type MeasureFn = Arc<dyn Fn(&MeasureRef<'_>) -> f64 + Send + Sync>;
/// Linear derivative of the terminal cost `(m, y) -> δG/δm(m, y)`.
pub type TerminalLinFn = Arc<dyn Fn(&MeasureRef<'_>, f64) -> f64 + Send + Sync>;

/// Terminal cost with enough structure for the envelope solvers.
#[derive(Clone)]
pub enum Terminal {
    /// `G(m) = ∫ g dm`; the linear derivative is `g` itself.
    Linear(ScalarFn),
    /// `G(m) = ∫ g dm + offset` (what the mollifier produces from a linear
    /// input).
    Affine { g: ScalarFn, offset: f64 },
    /// General cylindrical `G` with its linear derivative `δG/δm(m, y)`.
    Cylindrical { eval: MeasureFn, lin: TerminalLinFn },
}

impl Terminal {
    pub fn eval(&self, m: &MeasureRef<'_>) -> f64 {
        match self {
            Terminal::Linear(g) => m.integrate(&**g),
            Terminal::Affine { g, offset } => m.integrate(&**g) + offset,
            Terminal::Cylindrical { eval, .. } => eval(m),
        }
    }

    pub fn lin(&self, m: &MeasureRef<'_>, y: f64) -> f64 {
        match self {
            Terminal::Linear(g) | Terminal::Affine { g, .. } => g(y),
            Terminal::Cylindrical { lin, .. } => lin(m, y),
        }
    }

    /// Linear up to a constant: the per-cell envelope rule applies.
    pub fn density(&self) -> Option<&ScalarFn> {
        match self {
            Terminal::Linear(g) | Terminal::Affine { g, .. } => Some(g),
            Terminal::Cylindrical { .. } => None,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.density().is_some()
    }
}

/// The data of one control problem.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub horizon: f64,
    hamiltonian: XpmFn,
    grad_p: XpmFn,
    lagrangian: XpmFn,
    psi: PsiFn,
    psi_lin: KernelFn,
    terminal: Terminal,
    lagrangian_lin: Option<LagLinFn>,
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        horizon: f64,
        hamiltonian: XpmFn,
        grad_p: XpmFn,
        lagrangian: XpmFn,
        psi: PsiFn,
        psi_lin: KernelFn,
        terminal: Terminal,
        lagrangian_lin: Option<LagLinFn>,
    ) -> Self {
        assert!(horizon > 0.0, "horizon must be positive");
        ModelSpec {
            name: name.into(),
            horizon,
            hamiltonian,
            grad_p,
            lagrangian,
            psi,
            psi_lin,
            terminal,
            lagrangian_lin,
        }
    }

    pub fn h(&self, x: f64, p: f64, m: &MeasureRef<'_>) -> f64 {
        (self.hamiltonian)(x, p, m)
    }

    pub fn dp_h(&self, x: f64, p: f64, m: &MeasureRef<'_>) -> f64 {
        (self.grad_p)(x, p, m)
    }

    pub fn lag(&self, x: f64, a: f64, m: &MeasureRef<'_>) -> f64 {
        (self.lagrangian)(x, a, m)
    }

    pub fn psi(&self, x: f64, m: &MeasureRef<'_>) -> f64 {
        (self.psi)(x, m)
    }

    pub fn psi_lin(&self, x: f64, m: &MeasureRef<'_>, y: f64) -> f64 {
        (self.psi_lin)(x, m, y)
    }

    pub fn g(&self, m: &MeasureRef<'_>) -> f64 {
        self.terminal.eval(m)
    }

    pub fn g_zero(&self) -> f64 {
        self.terminal.eval(&MeasureRef::Zero)
    }

    pub fn g_lin(&self, m: &MeasureRef<'_>, y: f64) -> f64 {
        self.terminal.lin(m, y)
    }

    pub fn terminal(&self) -> &Terminal {
        &self.terminal
    }

    /// `δL/δm(y, a, m, x)`, required by the mean-field adjoint equation.
    pub fn lag_lin(&self, y: f64, a: f64, m: &MeasureRef<'_>, x: f64) -> Result<f64> {
        match &self.lagrangian_lin {
            Some(f) => Ok(f(y, a, m, x)),
            None => Err(Error::UnsupportedModel(format!(
                "model '{}' provides no δL/δm",
                self.name
            ))),
        }
    }

    pub fn has_lag_lin(&self) -> bool {
        self.lagrangian_lin.is_some()
    }

    /// Replace another field set wholesale (used by the mollifier).
    pub fn with_terminal(&self, terminal: Terminal) -> ModelSpec {
        let mut out = self.clone();
        out.terminal = terminal;
        out
    }
}

/// Clamp `p` to `[-r, r]`.
fn project(p: f64, r: f64) -> f64 {
    p.clamp(-r, r)
}

/// The truncated model: `H` is evaluated at the projection of `p` onto the
/// ball of radius `R`, and the momentum derivative vanishes outside.
pub fn truncate_hamiltonian(model: &ModelSpec, radius: f64) -> Result<ModelSpec> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "truncation radius must be positive, got {radius}"
        )));
    }
    let mut out = model.clone();
    let h = Arc::clone(&model.hamiltonian);
    let dph = Arc::clone(&model.grad_p);
    out.hamiltonian = Arc::new(move |x, p, m| h(x, project(p, radius), m));
    out.grad_p = Arc::new(move |x, p, m| {
        if p.abs() > radius {
            0.0
        } else {
            dph(x, p, m)
        }
    });
    out.name = format!("{}^R={radius}", model.name);
    Ok(out)
}

/// Sampled validation report for the standing assumptions.
#[derive(Debug, Clone)]
pub struct ValidatorReport {
    pub samples: usize,
    /// Smallest constant satisfying the quadratic growth bounds on the
    /// sampled box.
    pub coercivity_constant: f64,
    pub coercivity_ok: bool,
    /// Largest sampled duality gap `|L - sup_p(-pa - H)|`.
    pub duality_gap: f64,
    pub duality_ok: bool,
    /// Largest sampled violation of `Ψ(x, n) >= Ψ(x, m)` for `n <= m`.
    pub psi_monotonicity_violation: f64,
    pub psi_monotone_ok: bool,
    /// Sampled Lipschitz constant of `Ψ` in `x`.
    pub psi_x_lipschitz: f64,
    /// Sampled Lipschitz constant of the terminal cost along mass chains.
    pub terminal_lipschitz: f64,
    pub all_finite: bool,
}

impl ValidatorReport {
    pub fn passed(&self) -> bool {
        self.coercivity_ok && self.duality_ok && self.psi_monotone_ok && self.all_finite
    }
}

/// Bound above which the quadratic-growth check is considered failed.
pub const GROWTH_CAP: f64 = 25.0;
/// Tolerance for the sampled Legendre duality gap.
pub const DUALITY_TOL: f64 = 1e-6;

/// Evaluate the assumptions on randomized samples with `p, a` ranging over
/// `[-10, 10]`. A non-finite evaluation is reported as a failure, not an
/// exception.
pub fn validate(model: &ModelSpec, samples: usize, seed: u64) -> ValidatorReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coercivity: f64 = 1.0;
    let mut duality_gap: f64 = 0.0;
    let mut psi_violation: f64 = 0.0;
    let mut psi_x_lip: f64 = 0.0;
    let mut g_lip: f64 = 0.0;
    let mut all_finite = true;

    let atoms_buf: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
    for _ in 0..samples.max(1) {
        let x: f64 = rng.random::<f64>();
        let p: f64 = rng.random_range(-10.0..10.0);
        let a: f64 = rng.random_range(-10.0..10.0);
        let n_atoms = rng.random_range(0..=4usize);
        let weight = rng.random_range(0.05..0.24);
        let m = MeasureRef::Atoms {
            positions: &atoms_buf[..n_atoms],
            weight,
        };

        let hv = model.h(x, p, &m);
        let lv = model.lag(x, a, &m);
        if !hv.is_finite() || !lv.is_finite() {
            all_finite = false;
            continue;
        }
        // H <= C p^2 + C  needs  C >= H / (p^2 + 1);
        // H >= C^{-1} p^2 - C needs C >= (-H + sqrt(H^2 + 4 p^2)) / 2.
        coercivity = coercivity.max(hv / (p * p + 1.0));
        coercivity = coercivity.max(0.5 * (-hv + (hv * hv + 4.0 * p * p).sqrt()));
        coercivity = coercivity.max(lv / (a * a + 1.0));
        coercivity = coercivity.max(0.5 * (-lv + (lv * lv + 4.0 * a * a).sqrt()));

        // Duality gap by grid search over p with a local quadratic refine.
        let mut sup = f64::NEG_INFINITY;
        let mut p_best = 0.0;
        let grid_n = 400;
        for i in 0..=grid_n {
            let pp = -10.0 + 20.0 * i as f64 / grid_n as f64;
            let v = -pp * a - model.h(x, pp, &m);
            if v > sup {
                sup = v;
                p_best = pp;
            }
        }
        let mut lo = p_best - 20.0 / grid_n as f64;
        let mut hi = p_best + 20.0 / grid_n as f64;
        for _ in 0..60 {
            let p1 = lo + (hi - lo) / 3.0;
            let p2 = hi - (hi - lo) / 3.0;
            let v1 = -p1 * a - model.h(x, p1, &m);
            let v2 = -p2 * a - model.h(x, p2, &m);
            if v1 < v2 {
                lo = p1;
            } else {
                hi = p2;
            }
        }
        let pm = 0.5 * (lo + hi);
        sup = sup.max(-pm * a - model.h(x, pm, &m));
        if sup.is_finite() {
            duality_gap = duality_gap.max((lv - sup).abs());
        } else {
            all_finite = false;
        }

        // Ψ monotonicity along a downward chain n <= m.
        let shrink = rng.random_range(0.0..1.0);
        let m_small = MeasureRef::Atoms {
            positions: &atoms_buf[..n_atoms],
            weight: weight * shrink,
        };
        let psi_m = model.psi(x, &m);
        let psi_n = model.psi(x, &m_small);
        if psi_m.is_finite() && psi_n.is_finite() {
            psi_violation = psi_violation.max(psi_m - psi_n);
        } else {
            all_finite = false;
        }

        // Lipschitz samples.
        let x2: f64 = rng.random::<f64>();
        let dx = crate::grid::circle_dist(x, x2);
        if dx > 1e-8 {
            psi_x_lip = psi_x_lip.max((model.psi(x, &m) - model.psi(x2, &m)).abs() / dx);
        }
        let g_m = model.g(&m);
        let g_n = model.g(&m_small);
        let dm = (m.total() - m_small.total()).abs();
        if dm > 1e-8 && g_m.is_finite() && g_n.is_finite() {
            g_lip = g_lip.max((g_m - g_n).abs() / dm);
        }
    }

    ValidatorReport {
        samples,
        coercivity_constant: coercivity,
        coercivity_ok: coercivity <= GROWTH_CAP && all_finite,
        duality_gap,
        duality_ok: duality_gap <= DUALITY_TOL && all_finite,
        psi_monotonicity_violation: psi_violation,
        psi_monotone_ok: psi_violation <= 1e-10 && all_finite,
        psi_x_lipschitz: psi_x_lip,
        terminal_lipschitz: g_lip,
        all_finite,
    }
}

const TAU: f64 = std::f64::consts::TAU;

/// Named model constructors with a flat parameter table, as selected by the
/// experiment configuration grammar.
pub fn model_by_name(name: &str, params: &BTreeMap<String, f64>, horizon: f64) -> Result<ModelSpec> {
    let get = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
    match name {
        // H = p^2/2 - f0(x) - kappa m(T), L = a^2/2 + f0(x) + kappa m(T),
        // f0(x) = f0_amp cos(2 pi x); constant stopping penalty psi0;
        // linear terminal cost with density g0 + g_amp cos(2 pi x).
        "quadratic" => {
            let f0_amp = get("f0_amp", 0.0);
            let kappa = get("kappa", 0.0);
            let psi0 = get("psi0", 1.0);
            let g0 = get("g0", 1.0);
            let g_amp = get("g_amp", 0.5);
            Ok(quadratic_family(
                "quadratic", horizon, f0_amp, kappa, g0, g_amp,
                // Ψ constant in x and m
                Arc::new(move |_x, _m| psi0),
                Arc::new(|_x, _m, _y| 0.0),
            ))
        }
        // Same Hamiltonian family; congestion-style stopping penalty
        // Ψ(x, m) = c0 + c1 (1 - m(T)) + c2 cos(2 pi x), non-increasing in
        // the measure for c1 >= 0.
        "congestion" => {
            let f0_amp = get("f0_amp", 0.25);
            let kappa = get("kappa", 0.0);
            let c0 = get("c0", 0.5);
            let c1 = get("c1", 0.5);
            let c2 = get("c2", 0.25);
            let g0 = get("g0", 1.0);
            let g_amp = get("g_amp", 0.5);
            if c1 < 0.0 {
                return Err(Error::InvalidParameter(
                    "congestion model needs c1 >= 0 for Ψ-monotonicity".into(),
                ));
            }
            Ok(quadratic_family(
                "congestion", horizon, f0_amp, kappa, g0, g_amp,
                Arc::new(move |x, m: &MeasureRef<'_>| {
                    c0 + c1 * (1.0 - m.total()) + c2 * (TAU * x).cos()
                }),
                Arc::new(move |_x, _m, _y| -c1),
            ))
        }
        // Quadratic Hamiltonian with a configurable linear terminal cost
        // g(x) = g0 + g1 cos(2 pi x) + g2 sin(2 pi x).
        "linearG" => {
            let psi0 = get("psi0", 1.0);
            let g0 = get("g0", 0.0);
            let g1 = get("g1", 1.0);
            let g2 = get("g2", 0.0);
            let mut model = quadratic_family(
                "linearG", horizon, 0.0, 0.0, 0.0, 0.0,
                Arc::new(move |_x, _m| psi0),
                Arc::new(|_x, _m, _y| 0.0),
            );
            model.terminal = Terminal::Linear(Arc::new(move |y| {
                g0 + g1 * (TAU * y).cos() + g2 * (TAU * y).sin()
            }));
            Ok(model)
        }
        other => Err(Error::UnsupportedModel(format!("unknown model '{other}'"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn quadratic_family(
    name: &str,
    horizon: f64,
    f0_amp: f64,
    kappa: f64,
    g0: f64,
    g_amp: f64,
    psi: PsiFn,
    psi_lin: KernelFn,
) -> ModelSpec {
    let f0 = move |x: f64| f0_amp * (TAU * x).cos();
    ModelSpec::new(
        name,
        horizon,
        Arc::new(move |x, p, m: &MeasureRef<'_>| 0.5 * p * p - f0(x) - kappa * m.total()),
        Arc::new(|_x, p, _m| p),
        Arc::new(move |x, a, m: &MeasureRef<'_>| 0.5 * a * a + f0(x) + kappa * m.total()),
        psi,
        psi_lin,
        Terminal::Linear(Arc::new(move |y| g0 + g_amp * (TAU * y).cos())),
        // δL/δm(y, a, m, x) = kappa (dependence through total mass only).
        Some(Arc::new(move |_y, _a, _m, _x| kappa)),
    )
}

/// The default trio of shipped models.
pub fn builtin_models() -> Vec<ModelSpec> {
    let empty = BTreeMap::new();
    vec![
        model_by_name("quadratic", &empty, 1.0).unwrap(),
        model_by_name("congestion", &empty, 1.0).unwrap(),
        model_by_name("linearG", &empty, 1.0).unwrap(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_m() -> (f64, MeasureRef<'static>) {
        (0.3, MeasureRef::Zero)
    }

    #[test]
    fn quadratic_passes_validation() {
        let model = model_by_name("quadratic", &BTreeMap::new(), 1.0).unwrap();
        let report = validate(&model, 200, 42);
        assert!(report.passed(), "{report:?}");
        assert!(report.duality_gap < 1e-8);
    }

    #[test]
    fn quadratic_no_coupling_coercivity_constant() {
        // H = p^2/2: the tightest constant on the box comes from the growth
        // side at the sample-range edge and stays close to 2.
        let mut params = BTreeMap::new();
        params.insert("f0_amp".into(), 0.0);
        params.insert("g_amp".into(), 0.0);
        let model = model_by_name("quadratic", &params, 1.0).unwrap();
        let report = validate(&model, 500, 7);
        assert!(report.passed());
        assert!(report.coercivity_constant <= 2.0 + 1e-9);
        assert!(report.coercivity_constant > 1.8);
    }

    #[test]
    fn bounded_potential_shifts_constant() {
        let mut params = BTreeMap::new();
        params.insert("f0_amp".into(), 1.5);
        let model = model_by_name("quadratic", &params, 1.0).unwrap();
        let report = validate(&model, 300, 3);
        assert!(report.passed());
        // |f0| <= 1.5 enters the bound additively.
        assert!(report.coercivity_constant <= 2.0 + 2.0 * 1.5 + 1e-9);
    }

    #[test]
    fn quartic_growth_fails() {
        let model = ModelSpec::new(
            "quartic",
            1.0,
            Arc::new(|_x, p, _m| p.powi(4)),
            Arc::new(|_x, p, _m| 4.0 * p.powi(3)),
            Arc::new(|_x, a, _m| 0.75 * (a / 2.0).powf(4.0 / 3.0)),
            Arc::new(|_x, _m| 1.0),
            Arc::new(|_x, _m, _y| 0.0),
            Terminal::Linear(Arc::new(|_| 0.0)),
            None,
        );
        let report = validate(&model, 400, 11);
        assert!(!report.coercivity_ok, "{report:?}");
    }

    #[test]
    fn congestion_psi_monotone() {
        let model = model_by_name("congestion", &BTreeMap::new(), 1.0).unwrap();
        let report = validate(&model, 400, 5);
        assert!(report.psi_monotone_ok, "{report:?}");
    }

    #[test]
    fn increasing_psi_detected() {
        let model = ModelSpec::new(
            "bad-psi",
            1.0,
            Arc::new(|_x, p, _m| 0.5 * p * p),
            Arc::new(|_x, p, _m| p),
            Arc::new(|_x, a, _m| 0.5 * a * a),
            Arc::new(|_x, m: &MeasureRef<'_>| m.total()),
            Arc::new(|_x, _m, _y| 1.0),
            Terminal::Linear(Arc::new(|_| 0.0)),
            None,
        );
        let report = validate(&model, 200, 9);
        assert!(!report.psi_monotone_ok);
    }

    #[test]
    fn truncation_clamps_and_is_idempotent() {
        let model = model_by_name("quadratic", &BTreeMap::new(), 1.0).unwrap();
        let (x, m) = grid_m();
        let t1 = truncate_hamiltonian(&model, 1.0).unwrap();
        // |p| <= R: identical values.
        assert_eq!(t1.h(x, 0.5, &m), model.h(x, 0.5, &m));
        // clamp then evaluate: H = p^2/2 gives 1/2 at p = 3, R = 1.
        assert!((t1.h(x, 3.0, &m) - model.h(x, 1.0, &m)).abs() < 1e-15);
        assert_eq!(t1.dp_h(x, 3.0, &m), 0.0);
        // truncating again at a larger radius changes nothing.
        let t2 = truncate_hamiltonian(&t1, 2.5).unwrap();
        for p in [-4.0, -1.5, -0.3, 0.0, 0.7, 1.2, 5.0] {
            assert_eq!(t2.h(x, p, &m), t1.h(x, p, &m));
        }
    }

    #[test]
    fn truncated_lipschitz_bound() {
        let model = model_by_name("quadratic", &BTreeMap::new(), 1.0).unwrap();
        let r = 2.0;
        let t = truncate_hamiltonian(&model, r).unwrap();
        let (x, m) = grid_m();
        let mut max_slope: f64 = 0.0;
        for i in 0..500 {
            let p = -6.0 + 12.0 * i as f64 / 500.0;
            max_slope = max_slope.max(t.dp_h(x, p, &m).abs());
        }
        let mut bound: f64 = 0.0;
        for i in 0..500 {
            let p = -r + 2.0 * r * i as f64 / 500.0;
            bound = bound.max(model.dp_h(x, p, &m).abs());
        }
        assert!(max_slope <= bound + 1e-12);
    }

    #[test]
    fn legendre_identity_on_samples() {
        // L(x,a,m) + H(x, -D_a L, m) = a * D_a L at sampled points.
        let mut params = BTreeMap::new();
        params.insert("f0_amp".into(), 0.4);
        params.insert("kappa".into(), 0.3);
        let model = model_by_name("quadratic", &params, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let atoms: Vec<f64> = (0..3).map(|_| rng.random()).collect();
        for _ in 0..100 {
            let x: f64 = rng.random();
            let a: f64 = rng.random_range(-5.0..5.0);
            let m = MeasureRef::Atoms {
                positions: &atoms,
                weight: 0.2,
            };
            // For the quadratic family D_a L = a.
            let dal = a;
            let lhs = model.lag(x, a, &m) + model.h(x, -dal, &m);
            assert!((lhs - a * dal).abs() < 1e-9, "x={x} a={a}");
        }
    }
}
